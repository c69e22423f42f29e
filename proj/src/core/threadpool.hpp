#pragma once

#include <condition_variable>
#include <cstdint>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <thread>
#include <vector>

namespace invflow {

/// Fixed-size fork-join pool. parallel_for splits [0, count) into one
/// contiguous chunk per thread and blocks until every chunk finished, which
/// gives the barrier between wavefront diagonals. A pool of size 1 runs the
/// body inline, so results never depend on whether a pool is supplied.
class ThreadPool {
 public:
  explicit ThreadPool(int threads) : threads_(threads) {
    if (threads < 1) throw std::invalid_argument("ThreadPool: thread count must be >= 1");
    for (int i = 1; i < threads; ++i)
      workers_.emplace_back([this, i] { worker_loop(i); });
  }

  ~ThreadPool() {
    {
      std::unique_lock<std::mutex> lock(mu_);
      stop_ = true;
    }
    start_cv_.notify_all();
    for (auto& t : workers_) t.join();
  }

  ThreadPool(const ThreadPool&) = delete;
  ThreadPool& operator=(const ThreadPool&) = delete;

  int thread_count() const { return threads_; }

  /// body(lo, hi) is invoked on half-open subranges that exactly tile
  /// [0, count). Returns after all subranges completed.
  void parallel_for(int64_t count, const std::function<void(int64_t, int64_t)>& body) {
    if (count <= 0) return;
    if (threads_ == 1 || count == 1) {
      body(0, count);
      return;
    }
    {
      std::unique_lock<std::mutex> lock(mu_);
      job_body_ = &body;
      job_count_ = count;
      pending_ = threads_ - 1;
      ++generation_;
    }
    start_cv_.notify_all();
    run_chunk(0);
    std::unique_lock<std::mutex> lock(mu_);
    done_cv_.wait(lock, [this] { return pending_ == 0; });
    job_body_ = nullptr;
  }

  /// Convenience wrapper: a null pool runs the whole range inline.
  static void run(ThreadPool* pool, int64_t count, const std::function<void(int64_t, int64_t)>& body) {
    if (pool == nullptr) {
      if (count > 0) body(0, count);
      return;
    }
    pool->parallel_for(count, body);
  }

 private:
  void run_chunk(int slot) {
    int64_t chunk = (job_count_ + threads_ - 1) / threads_;
    int64_t lo = slot * chunk;
    int64_t hi = std::min<int64_t>(lo + chunk, job_count_);
    if (lo < hi) (*job_body_)(lo, hi);
  }

  void worker_loop(int slot) {
    uint64_t seen = 0;
    for (;;) {
      {
        std::unique_lock<std::mutex> lock(mu_);
        start_cv_.wait(lock, [&] { return stop_ || generation_ != seen; });
        if (stop_) return;
        seen = generation_;
      }
      run_chunk(slot);
      {
        std::unique_lock<std::mutex> lock(mu_);
        if (--pending_ == 0) done_cv_.notify_all();
      }
    }
  }

  int threads_;
  std::vector<std::thread> workers_;
  std::mutex mu_;
  std::condition_variable start_cv_;
  std::condition_variable done_cv_;
  const std::function<void(int64_t, int64_t)>* job_body_ = nullptr;
  int64_t job_count_ = 0;
  int pending_ = 0;
  uint64_t generation_ = 0;
  bool stop_ = false;
};

}  // namespace invflow
