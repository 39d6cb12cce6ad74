#include "vafuse/optim.hpp"

#include <cmath>

namespace vafuse::train {

Adam::Adam(std::vector<Parameter>& params, double learning_rate, AdamConfig config)
    : params_(params), lr_(learning_rate), cfg_(config) {
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.size(), 0.0);
    v_.emplace_back(p.tensor.size(), 0.0);
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

double Adam::clip_grad_norm(double max_norm) {
  double sq = 0.0;
  for (auto& p : params_) {
    if (!p.tensor.has_grad()) continue;
    for (double g : p.tensor.mutable_grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto& p : params_) {
      if (!p.tensor.has_grad()) continue;
      for (double& g : p.tensor.mutable_grad()) g *= s;
    }
  }
  return norm;
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i].tensor;
    if (!p.has_grad()) continue;
    auto values = p.mutable_data();
    const auto grad = p.mutable_grad();
    for (std::size_t j = 0; j < values.size(); ++j) {
      m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * grad[j];
      v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * grad[j] * grad[j];
      values[j] -= lr_ * (m_[i][j] / c1) / (std::sqrt(v_[i][j] / c2) + cfg_.eps);
    }
  }
}

}  // namespace vafuse::train
