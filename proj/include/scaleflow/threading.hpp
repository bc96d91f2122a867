// Copyright (c) 2026 scaleflow contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <condition_variable>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace scaleflow {

// Fork-join pool used by the compute kernels. Work is split into chunks of
// disjoint output ranges, so results are bit-identical for any thread count.
// Kernels never nest parallel sections.
class ThreadPool {
 public:
  static ThreadPool& instance() {
    static ThreadPool pool;
    return pool;
  }

  // n = total workers including the calling thread; 0 picks hardware_concurrency.
  void set_threads(int n) {
    std::lock_guard<std::mutex> run_lock(run_mutex_);
    if (n <= 0) n = static_cast<int>(std::thread::hardware_concurrency());
    if (n < 1) n = 1;
    stop_workers();
    threads_ = n;
    start_workers(n - 1);
  }

  int threads() const { return threads_; }

  void parallel_for(int64_t n, int64_t grain, const std::function<void(int64_t, int64_t)>& body) {
    if (n <= 0) return;
    if (threads_ == 1 || n <= grain) {
      body(0, n);
      return;
    }
    std::lock_guard<std::mutex> run_lock(run_mutex_);
    int64_t chunks = threads_ * 4;
    chunk_ = (n + chunks - 1) / chunks;
    if (chunk_ < grain) chunk_ = grain;
    body_ = &body;
    total_ = n;
    next_.store(0, std::memory_order_relaxed);
    pending_.store(static_cast<int>(workers_.size()) + 1, std::memory_order_relaxed);
    {
      std::lock_guard<std::mutex> lk(mutex_);
      ++generation_;
    }
    cv_.notify_all();
    work_loop();
    pending_.fetch_sub(1, std::memory_order_acq_rel);
    std::unique_lock<std::mutex> lk(mutex_);
    done_cv_.wait(lk, [&] { return pending_.load(std::memory_order_acquire) == 0; });
    body_ = nullptr;
  }

 private:
  ThreadPool() {
    threads_ = static_cast<int>(std::thread::hardware_concurrency());
    if (threads_ < 1) threads_ = 1;
    start_workers(threads_ - 1);
  }

  ~ThreadPool() { stop_workers(); }

  void start_workers(int count) {
    stop_ = false;
    for (int i = 0; i < count; ++i) {
      workers_.emplace_back([this] {
        uint64_t seen = 0;
        for (;;) {
          {
            std::unique_lock<std::mutex> lk(mutex_);
            cv_.wait(lk, [&] { return stop_ || generation_ != seen; });
            if (stop_) return;
            seen = generation_;
          }
          work_loop();
          if (pending_.fetch_sub(1, std::memory_order_acq_rel) == 1) {
            std::lock_guard<std::mutex> lk(mutex_);
            done_cv_.notify_all();
          }
        }
      });
    }
  }

  void stop_workers() {
    {
      std::lock_guard<std::mutex> lk(mutex_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& w : workers_) w.join();
    workers_.clear();
  }

  void work_loop() {
    const auto* body = body_;
    if (!body) return;
    for (;;) {
      int64_t begin = next_.fetch_add(chunk_, std::memory_order_relaxed);
      if (begin >= total_) break;
      int64_t end = begin + chunk_;
      if (end > total_) end = total_;
      (*body)(begin, end);
    }
  }

  std::vector<std::thread> workers_;
  std::mutex mutex_;
  std::mutex run_mutex_;
  std::condition_variable cv_;
  std::condition_variable done_cv_;
  uint64_t generation_ = 0;
  bool stop_ = false;
  int threads_ = 1;

  const std::function<void(int64_t, int64_t)>* body_ = nullptr;
  std::atomic<int64_t> next_{0};
  std::atomic<int> pending_{0};
  int64_t total_ = 0;
  int64_t chunk_ = 1;
};

inline void parallel_for(int64_t n, int64_t grain, const std::function<void(int64_t, int64_t)>& body) {
  ThreadPool::instance().parallel_for(n, grain, body);
}

}  // namespace scaleflow
