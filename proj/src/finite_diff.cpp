#include "gradnet/finite_diff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "gradnet/errors.hpp"

namespace gradnet {

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                        double eps) {
  if (!(eps > 0.0)) throw ContractError("finite_diff_grad needs eps > 0");
  Tensor probe = x.clone();
  Tensor grad(x.shape());
  auto g = grad.mutable_data();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double original = x[i];
    probe.mutable_data()[i] = original + eps;
    const double up = f(probe);
    probe.mutable_data()[i] = original - eps;
    const double down = f(probe);
    probe.mutable_data()[i] = original;
    g[i] = (up - down) / (2.0 * eps);
  }
  return grad;
}

double max_relative_error(const Tensor& a, const Tensor& b, double floor) {
  if (a.shape() != b.shape()) {
    throw DimensionError("max_relative_error shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = std::abs(a[i] - b[i]);
    if (std::isnan(diff)) return std::numeric_limits<double>::quiet_NaN();
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, diff / denom);
  }
  return worst;
}

}  // namespace gradnet
