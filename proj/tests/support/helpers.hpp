#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <string>
#include <unistd.h>
#include <vector>

#include "dfd/grad_check.hpp"
#include "dfd/ops.hpp"
#include "dfd/tensor.hpp"

namespace dfd::test {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("dfd-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
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

inline std::vector<char> read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::string read_file(const std::filesystem::path& p) {
  auto b = read_bytes(p);
  return {b.begin(), b.end()};
}

/// Every regular file under `root` (relative path -> bytes), sorted.
inline std::vector<std::pair<std::string, std::vector<char>>> tree_bytes(const std::filesystem::path& root) {
  std::vector<std::pair<std::string, std::vector<char>>> out;
  for (const auto& e : std::filesystem::recursive_directory_iterator(root))
    if (e.is_regular_file())
      out.emplace_back(std::filesystem::relative(e.path(), root).generic_string(), read_bytes(e.path()));
  std::sort(out.begin(), out.end());
  return out;
}

inline Tensor64 random64(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  return Tensor64::uniform(shape, rng, lo, hi);
}

/// Values resampled until at least `gap` away from every kink.
inline Tensor64 kink_free(const Shape& shape, Rng& rng, std::vector<double> kinks, double lo = -1.0,
                          double hi = 1.0, double gap = 1e-2) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) {
    bool ok = false;
    while (!ok) {
      x = rng.uniform(lo, hi);
      ok = true;
      for (double k : kinks) ok = ok && std::abs(x - k) >= gap;
    }
  }
  return Tensor64::from_values(shape, std::move(v));
}

/// Central-difference check of sum(w * op(x)) with fixed random weights w, so
/// ops whose outputs sum to a constant (softmax) are still exercised.
inline GradCheckResult weighted_check(const std::function<Tensor64(const Tensor64&)>& op, const Tensor64& at,
                                      std::uint64_t seed) {
  Shape out_shape;
  {
    NoGradGuard guard;
    out_shape = op(at).shape();
  }
  Rng rng(seed);
  const auto w = Tensor64::uniform(out_shape, rng, 0.5, 1.5);
  return grad_check([&](const Tensor64& x) { return sum(mul(op(x), w)); }, at);
}

}  // namespace dfd::test
