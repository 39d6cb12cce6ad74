#pragma once

#include "vafuse/tensor.hpp"

#include <functional>
#include <span>

namespace vafuse {

struct GradcheckOptions {
  double step = 1e-4;
  double rtol = 1e-4;
  /// Denominator floor for the relative error, so coordinates with a
  /// near-zero gradient are judged on absolute error instead.
  double scale_floor = 1e-3;
};

struct GradcheckReport {
  bool passed = true;
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coordinates = 0;
};

/// Compares reverse-mode gradients of the scalar `loss` against central
/// differences (f(x+h) - f(x-h)) / 2h, perturbing each coordinate of each
/// tensor in `wrt` in place. `loss` must rebuild its graph on every call.
GradcheckReport gradcheck(const std::function<Tensor()>& loss, std::span<Tensor> wrt,
                          const GradcheckOptions& options = {});

}  // namespace vafuse
