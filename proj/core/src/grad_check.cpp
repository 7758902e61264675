#include "dfd/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace dfd {

GradCheckResult grad_check(const std::function<Tensor64(const Tensor64&)>& f, const Tensor64& at,
                           double eps) {
  auto x = at.detach();
  x.set_requires_grad(true);
  auto y = f(x);
  if (y.numel() != 1) throw ShapeError("grad_check: function must be scalar-valued");
  std::vector<double> analytic(x.numel(), 0.0);
  if (y.requires_grad()) {
    y.backward();
    if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), analytic.begin());
  }

  GradCheckResult result;
  NoGradGuard no_grad;
  auto probe = at.detach();
  auto values = probe.mutable_data();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + eps;
    const double up = f(probe).item();
    values[i] = saved - eps;
    const double down = f(probe).item();
    values[i] = saved;
    const double numeric = (up - down) / (2.0 * eps);
    const double err = std::abs(analytic[i] - numeric) /
                       std::max(1e-8, std::abs(analytic[i]) + std::abs(numeric));
    if (i == 0 || err > result.max_relative_error) result = {err, i, analytic[i], numeric};
  }
  return result;
}

}  // namespace dfd
