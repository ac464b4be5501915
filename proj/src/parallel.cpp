#include "flatcover/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace flatcover {

namespace {

std::atomic<int> g_threads{0};
thread_local bool t_inside = false;

}  // namespace

int thread_count() {
  int n = g_threads.load();
  if (n > 0) return n;
  if (const char* env = std::getenv("FLATCOVER_THREADS")) {
    n = std::atoi(env);
    if (n >= 1) return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void set_thread_count(int n) { g_threads.store(n); }

void parallel_for(long n, const std::function<void(long)>& f) {
  const int T = static_cast<int>(std::min<long>(thread_count(), n));
  if (T <= 1 || t_inside) {
    for (long i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<long> next{0};
  std::exception_ptr err;
  std::mutex err_mu;
  auto work = [&] {
    t_inside = true;
    try {
      for (long i = next++; i < n; i = next++) f(i);
    } catch (...) {
      std::lock_guard<std::mutex> lock(err_mu);
      if (!err) err = std::current_exception();
      next = n;
    }
    t_inside = false;
  };
  std::vector<std::thread> pool;
  for (int t = 0; t < T - 1; ++t) pool.emplace_back(work);
  work();
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

}  // namespace flatcover
