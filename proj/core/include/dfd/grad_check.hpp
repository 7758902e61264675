#pragma once

#include <functional>

#include "dfd/tensor.hpp"

namespace dfd {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Compares reverse-mode gradients of a scalar function against central
/// differences at `at`. Per element the error is
/// |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
GradCheckResult grad_check(const std::function<Tensor64(const Tensor64&)>& f, const Tensor64& at,
                           double eps = 1e-5);

}  // namespace dfd
