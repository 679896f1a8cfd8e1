#pragma once

#include <doctest.h>

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "melemad/dataset.hpp"
#include "melemad/error.hpp"

namespace testing {

/// Scratch directory removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("melemad_" + tag + "_" + std::to_string(rd()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline melemad::data::LabeledDataset random_dataset(std::mt19937_64& rng, std::size_t n, std::size_t m,
                                                    bool ensure_both = true) {
  std::normal_distribution<float> gauss(0.0f, 1.0f);
  std::vector<float> x(n * m);
  for (auto& v : x) v = gauss(rng);
  std::vector<std::uint8_t> y(n);
  for (auto& v : y) v = static_cast<std::uint8_t>(rng() & 1u);
  if (ensure_both && n >= 2) {
    y[0] = 0;
    y[1] = 1;
  }
  return {n, m, std::move(x), std::move(y)};
}

template <typename Fn>
melemad::Errc error_code_of(Fn&& fn) {
  try {
    fn();
  } catch (const melemad::Error& e) {
    return e.code();
  }
  FAIL("expected melemad::Error");
  return melemad::Errc::InvalidArgument;
}

}  // namespace testing

#define CHECK_ERRC(expr, errc) CHECK(::testing::error_code_of([&] { (void)(expr); }) == (errc))
