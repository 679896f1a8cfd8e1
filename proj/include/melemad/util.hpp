#pragma once

#include <cstddef>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <functional>
#include <mutex>
#include <string_view>
#include <thread>
#include <vector>

namespace melemad {

/// splitmix64 finalizer; used to decorrelate derived seeds.
std::uint64_t mix64(std::uint64_t x) noexcept;

/// Seed for a named pipeline stage: FNV-1a hash of the stage name mixed with
/// the global seed. Stages can be re-run on their own and still see the same
/// random stream they would inside a full pipeline run.
std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view stage) noexcept;

/// Seed for the i-th item (chunk, task, iteration...) under a parent seed.
std::uint64_t derive_seed(std::uint64_t parent_seed, std::uint64_t index) noexcept;

/// Runs fn(i) for i in [0, count) on up to `threads` workers. Work items are
/// handed out by index and every result must be written to an index-addressed
/// slot by the caller, so output never depends on scheduling. The first
/// exception thrown by any item is rethrown on the calling thread.
template <typename Fn>
void parallel_for(std::size_t count, unsigned threads, Fn&& fn) {
  if (threads <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  const std::size_t workers = std::min<std::size_t>(threads, count);
  std::mutex lock;
  std::size_t next = 0;
  std::exception_ptr failure;
  auto worker = [&] {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard<std::mutex> guard(lock);
        if (next >= count || failure) return;
        i = next++;
      }
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> guard(lock);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

/// Writes `bytes` to `path` through a sibling temporary file and a rename, so
/// readers either see the previous file or the complete new one.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

std::string read_file(const std::filesystem::path& path);

}  // namespace melemad
