#pragma once

#include "vafuse/tensor.hpp"

#include <vector>

namespace vafuse::train {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adaptive moment estimation with bias correction.
class Adam {
 public:
  Adam(std::vector<Parameter>& params, double learning_rate, AdamConfig config = {});

  void zero_grad();
  /// Rescales all gradients so their joint L2 norm is at most `max_norm`.
  /// Returns the norm before clipping.
  double clip_grad_norm(double max_norm);
  void step();

  std::size_t steps() const { return t_; }

 private:
  std::vector<Parameter>& params_;
  double lr_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace vafuse::train
