#pragma once

#include <algorithm>
#include <condition_variable>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace safe_mpc {

/// Fixed-size worker pool running index-parallel loops. Work items write to
/// their own output slots, so results do not depend on the worker count.
class Executor {
 public:
  explicit Executor(std::size_t threads = 1) : threads_(std::max<std::size_t>(1, threads)) {
    for (std::size_t i = 1; i < threads_; ++i) {
      workers_.emplace_back([this] { worker_loop(); });
    }
  }

  Executor(const Executor&) = delete;
  Executor& operator=(const Executor&) = delete;

  ~Executor() {
    {
      std::lock_guard lock(mutex_);
      stopping_ = true;
    }
    wake_.notify_all();
    for (auto& w : workers_) w.join();
  }

  std::size_t threads() const { return threads_; }

  /// Runs body(i) for i in [0, n). The first exception thrown is rethrown.
  void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body) {
    if (n == 0) return;
    if (threads_ == 1 || n == 1) {
      for (std::size_t i = 0; i < n; ++i) body(i);
      return;
    }
    std::unique_lock lock(mutex_);
    body_ = &body;
    total_ = n;
    next_ = 0;
    pending_ = n;
    error_ = nullptr;
    ++generation_;
    lock.unlock();
    wake_.notify_all();
    drain();
    lock.lock();
    done_.wait(lock, [this] { return pending_ == 0; });
    body_ = nullptr;
    if (error_) std::rethrow_exception(error_);
  }

 private:
  void worker_loop() {
    std::size_t seen = 0;
    for (;;) {
      {
        std::unique_lock lock(mutex_);
        wake_.wait(lock, [&] { return stopping_ || generation_ != seen; });
        if (stopping_) return;
        seen = generation_;
      }
      drain();
    }
  }

  void drain() {
    for (;;) {
      std::size_t i;
      const std::function<void(std::size_t)>* body;
      {
        std::lock_guard lock(mutex_);
        if (body_ == nullptr || next_ >= total_) return;
        i = next_++;
        body = body_;
      }
      try {
        (*body)(i);
      } catch (...) {
        std::lock_guard lock(mutex_);
        if (!error_) error_ = std::current_exception();
      }
      std::lock_guard lock(mutex_);
      if (--pending_ == 0) done_.notify_all();
    }
  }

  std::size_t threads_;
  std::vector<std::thread> workers_;
  std::mutex mutex_;
  std::condition_variable wake_;
  std::condition_variable done_;
  const std::function<void(std::size_t)>* body_ = nullptr;
  std::size_t total_ = 0;
  std::size_t next_ = 0;
  std::size_t pending_ = 0;
  std::size_t generation_ = 0;
  bool stopping_ = false;
  std::exception_ptr error_;
};

/// Thread count from SAFE_MPC_THREADS, or `fallback` when unset or invalid.
inline std::size_t threads_from_env(std::size_t fallback = 1) {
  if (const char* v = std::getenv("SAFE_MPC_THREADS")) {
    try {
      const long n = std::stol(v);
      if (n > 0) return static_cast<std::size_t>(n);
    } catch (...) {
    }
  }
  return fallback;
}

}  // namespace safe_mpc
