#include "patchnet/threading.hpp"

#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace patchnet {

namespace {

std::atomic<unsigned> g_thread_override{0};

unsigned default_threads() {
  if (const char* env = std::getenv("PATCHNET_THREADS")) {
    long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<unsigned>(v);
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

}  // namespace

void set_thread_count(unsigned n) { g_thread_override.store(n); }

unsigned thread_count() {
  unsigned n = g_thread_override.load();
  return n == 0 ? default_threads() : n;
}

namespace {
thread_local bool t_in_parallel = false;
}

void parallel_for(std::size_t n,
                  const std::function<void(std::size_t, std::size_t)>& body) {
  if (n == 0) return;
  std::size_t workers = thread_count();
  if (workers > n) workers = n;
  if (workers <= 1 || t_in_parallel) {
    body(0, n);
    return;
  }

  std::mutex error_mutex;
  std::exception_ptr first_error;
  auto run = [&](std::size_t b, std::size_t e) {
    t_in_parallel = true;
    try {
      body(b, e);
    } catch (...) {
      std::lock_guard<std::mutex> lock(error_mutex);
      if (!first_error) first_error = std::current_exception();
    }
    t_in_parallel = false;
  };

  std::vector<std::thread> threads;
  threads.reserve(workers - 1);
  std::size_t chunk = n / workers;
  std::size_t rem = n % workers;
  std::size_t begin = 0;
  for (std::size_t w = 0; w < workers; ++w) {
    std::size_t end = begin + chunk + (w < rem ? 1 : 0);
    if (w + 1 == workers) {
      run(begin, end);
    } else {
      threads.emplace_back(run, begin, end);
    }
    begin = end;
  }
  for (auto& t : threads) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace patchnet
