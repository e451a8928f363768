#include "convexdyn/parallel.hpp"

#include "convexdyn/common.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace convexdyn {

namespace {

std::atomic<int> g_override{0};

int env_thread_count() {
  static const int value = [] {
    const int hw = std::max(1u, std::thread::hardware_concurrency());
    const char* env = std::getenv("CONVEXDYN_THREADS");
    if (env == nullptr || *env == '\0') return hw;
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || n < 1) return hw;
    return static_cast<int>(n);
  }();
  return value;
}

}  // namespace

int thread_count() {
  const int o = g_override.load();
  return o > 0 ? o : env_thread_count();
}

void set_thread_count(int n) { g_override.store(std::max(0, n)); }

void parallel_chunks(std::size_t n, std::size_t chunk,
                     const std::function<void(std::size_t, std::size_t, std::size_t)>& fn) {
  const std::size_t chunks = chunk_count(n, chunk);
  if (chunks == 0) return;
  const std::size_t workers = std::min<std::size_t>(thread_count(), chunks);
  if (workers <= 1) {
    for (std::size_t c = 0; c < chunks; ++c) fn(c * chunk, std::min(n, (c + 1) * chunk), c);
    return;
  }

  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto work = [&] {
    for (;;) {
      const std::size_t c = next.fetch_add(1);
      if (c >= chunks) return;
      try {
        fn(c * chunk, std::min(n, (c + 1) * chunk), c);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (std::size_t t = 0; t + 1 < workers; ++t) pool.emplace_back(work);
  work();
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

std::string_view error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::DegenerateHull: return "DegenerateHull";
    case ErrorKind::InvalidMaterial: return "InvalidMaterial";
    case ErrorKind::ElementInversion: return "ElementInversion";
    case ErrorKind::EmptyField: return "EmptyField";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::SolverDiverged: return "SolverDiverged";
    case ErrorKind::NonFinite: return "NonFinite";
    case ErrorKind::BehindCamera: return "BehindCamera";
    case ErrorKind::DegenerateProjection: return "DegenerateProjection";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::ConfigParse: return "ConfigParse";
    case ErrorKind::FileIO: return "FileIO";
    case ErrorKind::UnsupportedVersion: return "UnsupportedVersion";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

}  // namespace convexdyn
