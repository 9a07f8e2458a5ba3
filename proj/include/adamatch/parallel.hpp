#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace adamatch {

inline int worker_count() {
  static int n = [] {
    if (const char* env = std::getenv("ADAMATCH_THREADS")) {
      int v = std::atoi(env);
      if (v >= 1) return v;
    }
    unsigned hc = std::thread::hardware_concurrency();
    return hc ? static_cast<int>(hc) : 1;
  }();
  return n;
}

namespace detail {

// Persistent pool. Work is split into fixed-size chunks pulled off an atomic
// counter, so the chunk boundaries (and thus any per-chunk partial results)
// do not depend on how many threads happen to run.
class Pool {
 public:
  static Pool& instance() {
    static Pool pool(worker_count() - 1);
    return pool;
  }

  void run(long nchunks, const std::function<void(long)>& chunk_fn) {
    if (nchunks <= 1 || helpers_.empty()) {
      for (long c = 0; c < nchunks; ++c) chunk_fn(c);
      return;
    }
    // One parallel region at a time. A caller that finds the pool busy (for
    // example a matrix-cell worker while another cell is mid-region) runs its
    // chunks inline; results do not depend on which path executes them.
    std::unique_lock<std::mutex> region(region_mu_, std::try_to_lock);
    if (!region.owns_lock()) {
      for (long c = 0; c < nchunks; ++c) chunk_fn(c);
      return;
    }
    {
      std::unique_lock<std::mutex> lk(m_);
      chunk_fn_ = &chunk_fn;
      next_.store(0, std::memory_order_relaxed);
      total_ = nchunks;
      pending_ = static_cast<int>(helpers_.size());
      ++generation_;
    }
    cv_.notify_all();
    work();  // caller participates
    std::unique_lock<std::mutex> lk(m_);
    done_cv_.wait(lk, [&] { return pending_ == 0; });
    chunk_fn_ = nullptr;
  }

 private:
  explicit Pool(int helpers) {
    for (int i = 0; i < helpers; ++i)
      helpers_.emplace_back([this] { helper_loop(); });
  }

  ~Pool() {
    {
      std::unique_lock<std::mutex> lk(m_);
      stop_ = true;
      ++generation_;
    }
    cv_.notify_all();
    for (auto& t : helpers_) t.join();
  }

  void helper_loop() {
    long seen = 0;
    for (;;) {
      {
        std::unique_lock<std::mutex> lk(m_);
        cv_.wait(lk, [&] { return stop_ || generation_ != seen; });
        if (stop_) return;
        seen = generation_;
      }
      work();
      std::unique_lock<std::mutex> lk(m_);
      if (--pending_ == 0) done_cv_.notify_all();
    }
  }

  void work() {
    const auto* fn = chunk_fn_;
    if (!fn) return;
    for (;;) {
      long c = next_.fetch_add(1, std::memory_order_relaxed);
      if (c >= total_) break;
      (*fn)(c);
    }
  }

  std::vector<std::thread> helpers_;
  std::mutex region_mu_;
  std::mutex m_;
  std::condition_variable cv_, done_cv_;
  const std::function<void(long)>* chunk_fn_ = nullptr;
  std::atomic<long> next_{0};
  long total_ = 0;
  long generation_ = 0;
  int pending_ = 0;
  bool stop_ = false;
};

}  // namespace detail

/// Runs body(begin, end) over [0, n) split into chunks of `grain`. Chunk
/// boundaries are independent of the thread count; bodies must write to
/// disjoint locations (or to per-chunk buffers reduced serially afterwards).
inline void parallel_for(long n, long grain, const std::function<void(long, long)>& body) {
  if (n <= 0) return;
  if (grain < 1) grain = 1;
  long nchunks = (n + grain - 1) / grain;
  if (nchunks == 1 || worker_count() == 1) {
    body(0, n);
    return;
  }
  detail::Pool::instance().run(nchunks, [&](long c) {
    long b = c * grain;
    long e = b + grain < n ? b + grain : n;
    body(b, e);
  });
}

}  // namespace adamatch
