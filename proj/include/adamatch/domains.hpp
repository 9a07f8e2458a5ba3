#pragma once

// Domain registry: maps names like "mnist", "synusps" or
// "synmnist+invert+skew0.6" to train/test splits. IDX-backed domains are
// loaded from the data directory; synthetic domains are generated in-process.
// Nothing is ever downloaded.

#include <filesystem>

#include "adamatch/data.hpp"
#include "adamatch/synth.hpp"
#include "adamatch/train.hpp"

namespace adamatch {

namespace detail {

struct IdxDomainFiles {
  const char* train_images;
  const char* train_labels;
  const char* test_images;
  const char* test_labels;
  const char* checksums;  // free-text hint for the missing-file message
};

inline const std::map<std::string, IdxDomainFiles>& idx_domains() {
  static const std::map<std::string, IdxDomainFiles> table = {
      {"mnist",
       {"train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte",
        "t10k-labels-idx1-ubyte",
        "gz md5: train-images f68b3c2dcbeaaa9fbdd348bbdeb94873, train-labels "
        "d53e105ee54ea40749a09fcbcd1e9432, t10k-images 9fb629c4189551a2d022fa330f9573f3, "
        "t10k-labels ec29112dd5afa0611ce80d1b7f02629c"}},
      {"usps",
       {"usps-train-images-idx3-ubyte", "usps-train-labels-idx1-ubyte",
        "usps-test-images-idx3-ubyte", "usps-test-labels-idx1-ubyte",
        "IDX conversion of the 7291/2007-example USPS splits (16x16 grayscale)"}},
  };
  return table;
}

inline std::string find_idx_file(const std::string& data_dir, const std::string& name) {
  namespace fs = std::filesystem;
  fs::path plain = fs::path(data_dir) / name;
  if (fs::exists(plain)) return plain.string();
  fs::path gz = fs::path(data_dir) / (name + ".gz");
  if (fs::exists(gz)) return gz.string();
  return {};
}

inline Dataset apply_suffix(Dataset ds, const std::string& op, uint64_t seed) {
  if (op == "invert") return shift_domain(ds, Invert{});
  if (op.rfind("color", 0) == 0) {
    uint64_t s = op.size() > 5 ? std::stoull(op.substr(5)) : seed;
    return shift_domain(ds, Colorize{s});
  }
  if (op.rfind("noise", 0) == 0) {
    double sigma = op.size() > 5 ? std::stod(op.substr(5)) : 0.1;
    return shift_domain(ds, GaussianNoise{sigma, seed});
  }
  if (op.rfind("skew", 0) == 0) {
    double gamma = op.size() > 4 ? std::stod(op.substr(4)) : 0.6;
    return skew_classes(ds, gamma, seed);
  }
  throw DataError(DataError::Kind::Other, "unknown dataset transform: " + op);
}

}  // namespace detail

/// Whether both IDX domains of the desk benchmark are present on disk.
inline bool idx_domain_available(const std::string& name, const std::string& data_dir) {
  auto it = detail::idx_domains().find(name);
  if (it == detail::idx_domains().end()) return false;
  return !detail::find_idx_file(data_dir, it->second.train_images).empty() &&
         !detail::find_idx_file(data_dir, it->second.train_labels).empty() &&
         !detail::find_idx_file(data_dir, it->second.test_images).empty() &&
         !detail::find_idx_file(data_dir, it->second.test_labels).empty();
}

/// Resolves "base[+op[param]]..." to train/test splits at native resolution.
/// Transform seeds derive from the spec string, so a name denotes one fixed
/// dataset.
inline DomainData resolve_domain(const std::string& spec, const std::string& data_dir) {
  std::vector<std::string> parts;
  size_t at = 0;
  while (at <= spec.size()) {
    size_t plus = spec.find('+', at);
    if (plus == std::string::npos) plus = spec.size();
    parts.push_back(spec.substr(at, plus - at));
    at = plus + 1;
  }
  const std::string& base = parts[0];

  DomainData d;
  if (base == "synmnist" || base == "synusps") {
    d.train = synth_split(base, true);
    d.test = synth_split(base, false);
  } else {
    auto it = detail::idx_domains().find(base);
    if (it == detail::idx_domains().end())
      throw DataError(DataError::Kind::Other, "unknown dataset: " + base);
    const auto& files = it->second;
    auto need = [&](const char* name) {
      std::string path = detail::find_idx_file(data_dir, name);
      if (path.empty())
        throw DataError(DataError::Kind::MissingFile,
                        std::string("dataset file not found: ") + name + " (or .gz) under '" +
                            data_dir + "'. Files are never downloaded automatically; place " +
                            files.train_images + ", " + files.train_labels + ", " +
                            files.test_images + ", " + files.test_labels +
                            " there. Expected content: " + files.checksums);
      return path;
    };
    d.train = load_idx(need(files.train_images), need(files.train_labels));
    d.train.name = base;
    d.test = load_idx(need(files.test_images), need(files.test_labels));
    d.test.name = base;
  }

  for (size_t i = 1; i < parts.size(); ++i) {
    const uint64_t seed = mix_seed(fnv1a(spec), i);
    d.train = detail::apply_suffix(std::move(d.train), parts[i], seed);
    d.test = detail::apply_suffix(std::move(d.test), parts[i], mix_seed(seed, 1));
  }
  d.train.name = spec;
  d.test.name = spec;
  return d;
}

/// Resolves a domain and brings both splits to the model input size
/// (2-pixel zero padding for 28->32, bicubic for anything smaller).
inline DomainData resolve_domain_at(const std::string& spec, const std::string& data_dir,
                                    int input_side) {
  DomainData d = resolve_domain(spec, data_dir);
  d.train = shift_domain(d.train, PadResize{input_side});
  d.test = shift_domain(d.test, PadResize{input_side});
  d.train.name = spec;
  d.test.name = spec;
  return d;
}

}  // namespace adamatch
