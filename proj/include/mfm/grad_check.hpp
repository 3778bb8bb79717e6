#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "mfm/common.hpp"
#include "mfm/ops.hpp"
#include "mfm/tape.hpp"
#include "mfm/tensor.hpp"

namespace mfm {

// Compares reverse-mode gradients against central finite differences.
// f is evaluated repeatedly with the leaves perturbed in place, so it must
// close over the exact tensors passed in `leaves` (shared storage).
// Returns the worst relative error max|a - fd| / max(|a|, |fd|, 1).
template <Scalar Real, class F>
double grad_check_leaves(F f, std::vector<Tensor<Real>> leaves,
                         Real h = Real(1e-3)) {
  std::vector<bool> old_flags;
  for (auto& t : leaves) {
    old_flags.push_back(t.requires_grad());
    t.set_requires_grad(true);
    t.drop_grad();
  }

  std::vector<std::vector<Real>> analytic;
  {
    Tape<Real> tape;
    typename Tape<Real>::Scope scope(tape);
    Tensor<Real> y = f();
    if (!y.is_scalar())
      throw ParamError("grad_check: f must be scalar-valued, got shape " +
                       y.shape.str());
    tape.backward(y);
    for (auto& t : leaves) {
      t.ensure_grad();
      analytic.push_back(t.grad_view());
    }
  }

  double worst = 0.0;
  for (std::size_t k = 0; k < leaves.size(); ++k) {
    auto& data = leaves[k].data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const Real keep = data[i];
      data[i] = keep + h;
      const double fp = static_cast<double>(f().scalar());
      data[i] = keep - h;
      const double fm = static_cast<double>(f().scalar());
      data[i] = keep;
      const double fd = (fp - fm) / (2.0 * static_cast<double>(h));
      const double a = static_cast<double>(analytic[k][i]);
      const double denom = std::max({std::fabs(a), std::fabs(fd), 1.0});
      worst = std::max(worst, std::fabs(a - fd) / denom);
    }
  }

  for (std::size_t k = 0; k < leaves.size(); ++k) {
    leaves[k].set_requires_grad(old_flags[k]);
    leaves[k].drop_grad();
  }
  return worst;
}

// Single-input form matching the op contract: f(x) scalar, x perturbed.
template <Scalar Real, class F>
double grad_check(F f, Tensor<Real> x, Real h = Real(1e-3)) {
  return grad_check_leaves<Real>([&]() { return f(x); }, {x}, h);
}

}  // namespace mfm
