#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "adamatch/data.hpp"
#include "adamatch/synth.hpp"

using namespace adamatch;
namespace fs = std::filesystem;

namespace {

struct IdxFiles {
  std::string images, labels;
};

void write_be32(std::ofstream& f, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  f.write(reinterpret_cast<char*>(b), 4);
}

IdxFiles write_idx_pair(const fs::path& dir, int n, int rows, int cols,
                        uint32_t image_magic = 0x00000803, int label_count = -1) {
  fs::create_directories(dir);
  IdxFiles out{(dir / "imgs-idx3-ubyte").string(), (dir / "lbls-idx1-ubyte").string()};
  {
    std::ofstream f(out.images, std::ios::binary);
    write_be32(f, image_magic);
    write_be32(f, static_cast<uint32_t>(n));
    write_be32(f, static_cast<uint32_t>(rows));
    write_be32(f, static_cast<uint32_t>(cols));
    for (int i = 0; i < n * rows * cols; ++i) {
      unsigned char px = static_cast<unsigned char>(i % 256);
      f.write(reinterpret_cast<char*>(&px), 1);
    }
  }
  {
    std::ofstream f(out.labels, std::ios::binary);
    write_be32(f, 0x00000801);
    const int nl = label_count < 0 ? n : label_count;
    write_be32(f, static_cast<uint32_t>(nl));
    for (int i = 0; i < nl; ++i) {
      unsigned char l = static_cast<unsigned char>(i % 3);
      f.write(reinterpret_cast<char*>(&l), 1);
    }
  }
  return out;
}

TEST(LoadIdx, ParsesHeaderAndScalesPixels) {
  auto files = write_idx_pair(fs::temp_directory_path() / "adamatch_idx_ok", 4, 5, 3);
  Dataset ds = load_idx(files.images, files.labels);
  EXPECT_EQ(ds.n(), 4);
  EXPECT_EQ(ds.h(), 5);
  EXPECT_EQ(ds.w(), 3);
  EXPECT_EQ(ds.c(), 1);
  EXPECT_EQ(ds.k, 3);
  EXPECT_FLOAT_EQ(ds.images[0], 0.f);
  EXPECT_FLOAT_EQ(ds.images[1], 1.f / 255.f);
  EXPECT_FLOAT_EQ(ds.images[59], 59.f / 255.f);
  EXPECT_EQ(ds.labels[1], 1);
}

TEST(LoadIdx, GzipVariantAccepted) {
  auto files = write_idx_pair(fs::temp_directory_path() / "adamatch_idx_gz", 4, 5, 3);
  // recompress both files
  for (const std::string& path : {files.images, files.labels}) {
    std::ifstream in(path, std::ios::binary);
    std::vector<char> raw((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
    in.close();
    gzFile gz = gzopen((path + ".gz").c_str(), "wb");
    ASSERT_NE(gz, nullptr);
    gzwrite(gz, raw.data(), static_cast<unsigned>(raw.size()));
    gzclose(gz);
  }
  Dataset plain = load_idx(files.images, files.labels);
  Dataset zipped = load_idx(files.images + ".gz", files.labels + ".gz");
  EXPECT_EQ(plain.images.data, zipped.images.data);
  EXPECT_EQ(plain.labels, zipped.labels);
}

TEST(LoadIdx, MagicMismatch) {
  auto files =
      write_idx_pair(fs::temp_directory_path() / "adamatch_idx_magic", 2, 4, 4, 0x00000802);
  try {
    load_idx(files.images, files.labels);
    FAIL() << "expected MagicMismatch";
  } catch (const DataError& e) {
    EXPECT_EQ(e.kind, DataError::Kind::MagicMismatch);
  }
}

TEST(LoadIdx, CountMismatch) {
  auto files = write_idx_pair(fs::temp_directory_path() / "adamatch_idx_count", 4, 4, 4,
                              0x00000803, 3);
  try {
    load_idx(files.images, files.labels);
    FAIL() << "expected CountMismatch";
  } catch (const DataError& e) {
    EXPECT_EQ(e.kind, DataError::Kind::CountMismatch);
  }
}

TEST(LoadIdx, TruncatedPayload) {
  auto files = write_idx_pair(fs::temp_directory_path() / "adamatch_idx_trunc", 4, 4, 4);
  fs::resize_file(files.images, 16 + 4 * 4 * 2);  // half the pixels missing
  try {
    load_idx(files.images, files.labels);
    FAIL() << "expected Truncated";
  } catch (const DataError& e) {
    EXPECT_EQ(e.kind, DataError::Kind::Truncated);
  }
}

TEST(LoadIdx, RealMnistIfPresent) {
  const char* dir = std::getenv("ADAMATCH_DATA_DIR");
  if (!dir) GTEST_SKIP() << "ADAMATCH_DATA_DIR not set";
  fs::path root(dir);
  fs::path imgs = root / "train-images-idx3-ubyte";
  fs::path lbls = root / "train-labels-idx1-ubyte";
  if (!fs::exists(imgs)) {
    imgs += ".gz";
    lbls += ".gz";
  }
  if (!fs::exists(imgs)) GTEST_SKIP() << "MNIST files not on disk";
  Dataset ds = load_idx(imgs.string(), lbls.string());
  EXPECT_EQ(ds.n(), 60000);
  EXPECT_EQ(ds.h(), 28);
  EXPECT_EQ(ds.w(), 28);
  EXPECT_EQ(ds.k, 10);
}

// ---------------------------------------------------------------------------

Dataset tiny_dataset(int n, int side, int k, float fill, const std::string& name) {
  Dataset ds;
  ds.name = name;
  ds.k = k;
  ds.images = Tensor<float>({n, side, side, 1}, fill);
  for (int i = 0; i < n; ++i) ds.images.at(i, 0, 0, 0) = static_cast<float>(i) / 255.f;
  ds.labels.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) ds.labels[static_cast<size_t>(i)] = i % k;
  ds.validate();
  return ds;
}

TEST(ShiftDomain, InvertIsInvolution) {
  Dataset ds = make_synth_digits("g", synmnist_style(), 20, 3);
  Dataset once = shift_domain(ds, Invert{});
  Dataset twice = shift_domain(once, Invert{});
  for (long i = 0; i < ds.images.numel(); ++i)
    EXPECT_NEAR(twice.images[i], ds.images[i], 1.2e-7f);  // one ulp at 1.0
  EXPECT_EQ(twice.labels, ds.labels);
}

TEST(ShiftDomain, PadTo32AddsZeroBorder) {
  Dataset ds = make_synth_digits("g", synmnist_style(), 10, 5);
  ASSERT_EQ(ds.h(), 28);
  Dataset padded = shift_domain(ds, PadResize{32});
  EXPECT_EQ(padded.h(), 32);
  EXPECT_EQ(padded.w(), 32);
  for (int i = 0; i < padded.n(); ++i) {
    for (int x = 0; x < 32; ++x) {
      EXPECT_FLOAT_EQ(padded.images.at(i, 0, x, 0), 0.f);
      EXPECT_FLOAT_EQ(padded.images.at(i, 1, x, 0), 0.f);
      EXPECT_FLOAT_EQ(padded.images.at(i, 30, x, 0), 0.f);
      EXPECT_FLOAT_EQ(padded.images.at(i, 31, x, 0), 0.f);
    }
  }
  for (int y = 0; y < 28; ++y)
    for (int x = 0; x < 28; ++x)
      EXPECT_FLOAT_EQ(padded.images.at(0, y + 2, x + 2, 0), ds.images.at(0, y, x, 0));
}

TEST(ShiftDomain, BicubicUpscaleFor16To32) {
  Dataset ds = make_synth_digits("u", synusps_style(), 10, 7);
  ASSERT_EQ(ds.h(), 16);
  Dataset up = shift_domain(ds, PadResize{32});
  EXPECT_EQ(up.h(), 32);
  // constant images stay constant under interpolation
  Dataset flat = tiny_dataset(2, 16, 2, 0.25f, "flat");
  for (auto& v : flat.images.data) v = 0.25f;
  Dataset upflat = shift_domain(flat, PadResize{32});
  for (long i = 0; i < upflat.images.numel(); ++i) EXPECT_NEAR(upflat.images[i], 0.25f, 1e-6);
}

TEST(ShiftDomain, NoiseZeroIsIdentity) {
  Dataset ds = make_synth_digits("g", synmnist_style(), 6, 9);
  Dataset out = shift_domain(ds, GaussianNoise{0.0, 42});
  EXPECT_EQ(out.images.data, ds.images.data);
  Dataset noisy = shift_domain(ds, GaussianNoise{0.1, 42});
  EXPECT_NE(noisy.images.data, ds.images.data);
  Dataset noisy2 = shift_domain(ds, GaussianNoise{0.1, 42});
  EXPECT_EQ(noisy.images.data, noisy2.images.data);  // seeded determinism
  for (float v : noisy.images.data) {
    EXPECT_GE(v, 0.f);
    EXPECT_LE(v, 1.f);
  }
}

TEST(ShiftDomain, ColorizeMakesRgb) {
  Dataset ds = make_synth_digits("g", synmnist_style(), 6, 11);
  Dataset rgb = shift_domain(ds, Colorize{5});
  EXPECT_EQ(rgb.c(), 3);
  EXPECT_EQ(rgb.labels, ds.labels);
  Dataset rgb2 = shift_domain(ds, Colorize{5});
  EXPECT_EQ(rgb.images.data, rgb2.images.data);
}

TEST(BuildTask, UdaHasNoTargetLabels) {
  Dataset src = tiny_dataset(30, 8, 3, 0.2f, "src");
  Dataset tgt = tiny_dataset(40, 8, 3, 0.8f, "tgt");
  Dataset test = tiny_dataset(12, 8, 3, 0.8f, "tgt-test");
  TaskSpec task = build_task(src, tgt, test, TaskKind::UDA, 0, 1);
  EXPECT_FALSE(task.target_labeled.has_value());
  EXPECT_EQ(task.source_labeled.n(), 30);
  EXPECT_EQ(task.target_unlabeled.n(), 40);
}

TEST(BuildTask, SsdaBalancedSubset) {
  Dataset src = tiny_dataset(30, 8, 10, 0.2f, "src");
  Dataset tgt = tiny_dataset(100, 8, 10, 0.8f, "tgt");
  Dataset test = tiny_dataset(20, 8, 10, 0.8f, "tgt-test");
  TaskSpec task = build_task(src, tgt, test, TaskKind::SSDA, 1, 7);
  ASSERT_TRUE(task.target_labeled.has_value());
  EXPECT_EQ(task.target_labeled->n(), 10);  // one per class
  std::set<int> classes(task.target_labeled->labels.begin(),
                        task.target_labeled->labels.end());
  EXPECT_EQ(classes.size(), 10u);
  EXPECT_EQ(task.target_unlabeled.n(), 90);

  // labeled and unlabeled partition the target train split: identify rows by
  // the index stamped into pixel (0,0)
  std::set<int> seen;
  auto stamp = [](const Dataset& d, int i) {
    return static_cast<int>(std::lround(d.images.at(i, 0, 0, 0) * 255.f));
  };
  for (int i = 0; i < task.target_labeled->n(); ++i)
    seen.insert(stamp(*task.target_labeled, i));
  for (int i = 0; i < task.target_unlabeled.n(); ++i) {
    int s = stamp(task.target_unlabeled, i);
    EXPECT_FALSE(seen.count(s)) << "example in both splits";
    seen.insert(s);
  }
  EXPECT_EQ(seen.size(), 100u);
}

TEST(BuildTask, DeterministicGivenSeed) {
  Dataset src = tiny_dataset(30, 8, 10, 0.2f, "src");
  Dataset tgt = tiny_dataset(100, 8, 10, 0.8f, "tgt");
  Dataset test = tiny_dataset(20, 8, 10, 0.8f, "tgt-test");
  TaskSpec a = build_task(src, tgt, test, TaskKind::SSDA, 3, 9);
  TaskSpec b = build_task(src, tgt, test, TaskKind::SSDA, 3, 9);
  EXPECT_EQ(a.target_labeled->images.data, b.target_labeled->images.data);
  EXPECT_EQ(a.target_unlabeled.images.data, b.target_unlabeled.images.data);
  TaskSpec c = build_task(src, tgt, test, TaskKind::SSDA, 3, 10);
  EXPECT_NE(a.target_labeled->images.data, c.target_labeled->images.data);
}

TEST(BuildTask, Errors) {
  Dataset src = tiny_dataset(30, 8, 3, 0.2f, "src");
  Dataset tgt5 = tiny_dataset(40, 8, 5, 0.8f, "tgt");
  Dataset test = tiny_dataset(12, 8, 3, 0.8f, "tgt-test");
  EXPECT_THROW(build_task(src, tgt5, test, TaskKind::UDA, 0, 1), DataError);  // k mismatch

  Dataset tgt = tiny_dataset(12, 8, 3, 0.8f, "tgt");  // only 4 per class
  EXPECT_THROW(build_task(src, tgt, test, TaskKind::SSDA, 5, 1), DataError);

  Dataset other = tiny_dataset(30, 8, 3, 0.4f, "other");
  EXPECT_THROW(build_task(src, other, test, TaskKind::SSL, 2, 1), ValueError);
}

TEST(BuildTask, SslSplitsSinglePool) {
  Dataset pool = tiny_dataset(60, 8, 3, 0.5f, "pool");
  Dataset test = tiny_dataset(12, 8, 3, 0.5f, "pool");
  TaskSpec task = build_task(pool, pool, test, TaskKind::SSL, 4, 3);
  EXPECT_EQ(task.source_labeled.n(), 12);  // 4 per class, 3 classes
  EXPECT_EQ(task.target_unlabeled.n(), 48);
  EXPECT_FALSE(task.target_labeled.has_value());
  for (int c = 0; c < 3; ++c) {
    int count = 0;
    for (int l : task.source_labeled.labels) count += l == c;
    EXPECT_EQ(count, 4);
  }
}

TEST(BatchStream, SizesAndSourcePurity) {
  Dataset src = tiny_dataset(30, 8, 3, 0.25f, "src");
  Dataset tgt = tiny_dataset(50, 8, 3, 0.75f, "tgt");
  Dataset test = tiny_dataset(12, 8, 3, 0.75f, "tgt-test");
  TaskSpec task = build_task(src, tgt, test, TaskKind::UDA, 0, 1);
  BatchStream stream = batch_stream(task, 16, 3, 5);
  for (int b = 0; b < 5; ++b) {
    BatchPair batch = stream.next();
    EXPECT_EQ(batch.n_sl(), 16);
    EXPECT_EQ(batch.n_tu(), 48);
    // source fill value marks every labeled row; no target rows sneak in
    for (int i = 0; i < 16; ++i) EXPECT_FLOAT_EQ(batch.x_sl.at(i, 1, 1, 0), 0.25f);
    for (int i = 0; i < 48; ++i) EXPECT_FLOAT_EQ(batch.x_tu.at(i, 1, 1, 0), 0.75f);
    for (int i = 0; i < 16; ++i) {
      float s = 0;
      for (int j = 0; j < 3; ++j) s += batch.y_sl.at(i, j);
      EXPECT_FLOAT_EQ(s, 1.f);
    }
  }
}

TEST(BatchStream, SsdaHalfAndHalf) {
  Dataset src = tiny_dataset(30, 8, 10, 0.25f, "src");
  Dataset tgt = tiny_dataset(100, 8, 10, 0.75f, "tgt");
  Dataset test = tiny_dataset(20, 8, 10, 0.75f, "tgt-test");
  TaskSpec task = build_task(src, tgt, test, TaskKind::SSDA, 2, 3);
  BatchStream stream = batch_stream(task, 16, 3, 7);
  for (int b = 0; b < 100; ++b) {
    BatchPair batch = stream.next();
    for (int i = 0; i < 8; ++i) EXPECT_FLOAT_EQ(batch.x_sl.at(i, 1, 1, 0), 0.25f);
    for (int i = 8; i < 16; ++i) EXPECT_FLOAT_EQ(batch.x_sl.at(i, 1, 1, 0), 0.75f);
  }
  EXPECT_THROW(batch_stream(task, 15, 3, 7), ValueError);  // odd labeled batch
}

TEST(BatchStream, FullCoveragePerEpoch) {
  Dataset src = tiny_dataset(40, 8, 4, 0.25f, "src");
  Dataset tgt = tiny_dataset(50, 8, 4, 0.75f, "tgt");
  Dataset test = tiny_dataset(12, 8, 4, 0.75f, "tgt-test");
  TaskSpec task = build_task(src, tgt, test, TaskKind::UDA, 0, 1);
  BatchStream stream = batch_stream(task, 16, 1, 5);
  // ceil(40/16) = 3 batches must visit every labeled example at least once
  std::set<int> seen;
  for (int b = 0; b < 3; ++b) {
    BatchPair batch = stream.next();
    for (int i = 0; i < 16; ++i)
      seen.insert(static_cast<int>(std::lround(batch.x_sl.at(i, 0, 0, 0) * 255.f)));
  }
  EXPECT_EQ(seen.size(), 40u);
}

TEST(BatchStream, DeterministicGivenSeed) {
  Dataset src = tiny_dataset(30, 8, 3, 0.25f, "src");
  Dataset tgt = tiny_dataset(50, 8, 3, 0.75f, "tgt");
  Dataset test = tiny_dataset(12, 8, 3, 0.75f, "tgt-test");
  TaskSpec task = build_task(src, tgt, test, TaskKind::UDA, 0, 1);
  BatchStream s1 = batch_stream(task, 8, 2, 5);
  BatchStream s2 = batch_stream(task, 8, 2, 5);
  for (int b = 0; b < 4; ++b) {
    BatchPair b1 = s1.next(), b2 = s2.next();
    EXPECT_EQ(b1.x_sl.data, b2.x_sl.data);
    EXPECT_EQ(b1.x_tu.data, b2.x_tu.data);
    EXPECT_EQ(b1.y_sl.data, b2.y_sl.data);
  }
}

TEST(SkewClasses, FrequenciesDecay) {
  Dataset ds = tiny_dataset(200, 8, 4, 0.5f, "pool");  // 50 per class
  Dataset skewed = skew_classes(ds, 0.5, 3);
  std::vector<int> counts(4, 0);
  for (int l : skewed.labels) counts[static_cast<size_t>(l)]++;
  EXPECT_EQ(counts[0], 50);
  EXPECT_EQ(counts[1], 25);
  EXPECT_EQ(counts[2], 12);
  EXPECT_EQ(counts[3], 6);
}

TEST(SynthDigits, DeterministicAndLabeled) {
  Dataset a = make_synth_digits("d", synmnist_style(), 50, 19);
  Dataset b = make_synth_digits("d", synmnist_style(), 50, 19);
  EXPECT_EQ(a.images.data, b.images.data);
  for (int i = 0; i < 50; ++i) EXPECT_EQ(a.labels[static_cast<size_t>(i)], i % 10);
  for (float v : a.images.data) {
    EXPECT_GE(v, 0.f);
    EXPECT_LE(v, 1.f);
  }
}

}  // namespace
