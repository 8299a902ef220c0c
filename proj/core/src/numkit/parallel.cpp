#include "scca/numkit/parallel.hpp"

#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <exception>
#include <malloc.h>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace scca::nk {
namespace {

class Pool {
 public:
  explicit Pool(std::size_t workers) {
    for (std::size_t i = 0; i < workers; ++i) threads_.emplace_back([this] { loop(); });
  }

  ~Pool() {
    {
      std::lock_guard lock(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
  }

  std::size_t size() const { return threads_.size() + 1; }

  void run(std::size_t n, const std::function<void(std::size_t)>& fn) {
    std::unique_lock lock(mu_);
    job_ = &fn;
    total_ = n;
    next_.store(0);
    active_ = threads_.size();
    error_ = nullptr;
    ++generation_;
    lock.unlock();
    cv_.notify_all();

    work();

    lock.lock();
    done_cv_.wait(lock, [this] { return active_ == 0; });
    job_ = nullptr;
    if (error_) std::rethrow_exception(error_);
  }

 private:
  void work() {
    for (;;) {
      std::size_t i = next_.fetch_add(1);
      if (i >= total_) return;
      try {
        (*job_)(i);
      } catch (...) {
        std::lock_guard lock(err_mu_);
        if (!error_) error_ = std::current_exception();
      }
    }
  }

  void loop() {
    std::size_t seen = 0;
    for (;;) {
      std::unique_lock lock(mu_);
      cv_.wait(lock, [&] { return stop_ || generation_ != seen; });
      if (stop_) return;
      seen = generation_;
      lock.unlock();
      work();
      lock.lock();
      if (--active_ == 0) done_cv_.notify_one();
    }
  }

  std::vector<std::thread> threads_;
  std::mutex mu_;
  std::mutex err_mu_;
  std::condition_variable cv_;
  std::condition_variable done_cv_;
  const std::function<void(std::size_t)>* job_ = nullptr;
  std::size_t total_ = 0;
  std::atomic<std::size_t> next_{0};
  std::size_t active_ = 0;
  std::size_t generation_ = 0;
  bool stop_ = false;
  std::exception_ptr error_;
};

std::size_t g_threads = 1;
std::unique_ptr<Pool> g_pool;
std::mutex g_config_mu;

}  // namespace

std::size_t num_threads() { return g_threads; }

void set_num_threads(std::size_t n) {
  if (n == 0) throw std::invalid_argument("thread count must be positive");
  std::lock_guard lock(g_config_mu);
  if (n == g_threads) return;
  g_pool.reset();
  g_threads = n;
  if (n > 1) g_pool = std::make_unique<Pool>(n - 1);
}

void configure_threads_from_env() {
  const char* env = std::getenv("SCC_THREADS");
  if (!env || !*env) {
    set_num_threads(1);
    return;
  }
  char* end = nullptr;
  long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v <= 0 || v > 256) {
    throw std::invalid_argument(std::string("SCC_THREADS must be an integer in [1, 256], got '") + env + "'");
  }
  set_num_threads(static_cast<std::size_t>(v));
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  if (n == 0) return;
  if (!g_pool || n == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  g_pool->run(n, fn);
}

void configure_process() {
#ifdef M_MMAP_THRESHOLD
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  configure_threads_from_env();
}

}  // namespace scca::nk
