#pragma once

#include <cmath>

#include <doctest.h>

#include "gradnet/gradcheck.hpp"
#include "gradnet/rng.hpp"
#include "gradnet/tensor.hpp"

namespace testing {

using namespace gradnet;

inline Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(shape);
  for (double& v : t.mutable_data()) v = lo + (hi - lo) * rng.uniform();
  return t;
}

/// Uniform in [-1, 1] with |x| < 1e-3 rejected.
inline Tensor off_kink_tensor(const Shape& shape, Rng& rng) {
  Tensor t(shape);
  for (double& v : t.mutable_data()) {
    do {
      v = -1.0 + 2.0 * rng.uniform();
    } while (std::abs(v) < 1e-3);
  }
  return t;
}

inline void check_values(const Tensor& t, std::initializer_list<double> expected,
                         double tol = 1e-12) {
  REQUIRE(t.size() == expected.size());
  std::size_t i = 0;
  for (double e : expected) {
    CHECK_MESSAGE(std::abs(t[i] - e) <= tol, "element " << i << ": " << t[i] << " vs " << e);
    ++i;
  }
}

inline double gradcheck_error(GradCheckCase c, std::uint64_t seed = 0) {
  return check_case(c, 1.0, seed).max_rel_error;
}

}  // namespace testing
