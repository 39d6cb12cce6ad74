#include "vafuse/gradcheck.hpp"

#include "vafuse/error.hpp"

#include <algorithm>
#include <cmath>

namespace vafuse {

GradcheckReport gradcheck(const std::function<Tensor()>& loss, std::span<Tensor> wrt,
                          const GradcheckOptions& options) {
  if (!(options.step > 0.0)) throw ContractError("gradcheck: step must be positive");
  for (auto& t : wrt) t.zero_grad();
  loss().backward();
  std::vector<std::vector<double>> analytic;
  for (auto& t : wrt) analytic.push_back(t.grad());

  GradcheckReport report;
  bool finite = true;
  for (std::size_t k = 0; k < wrt.size(); ++k) {
    auto values = wrt[k].mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + options.step;
      const double up = loss().item();
      values[i] = saved - options.step;
      const double down = loss().item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double a = analytic[k][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.scale_floor});
      const double rel = std::abs(a - numeric) / denom;
      ++report.coordinates;
      if (!std::isfinite(rel)) finite = false;
      if (report.coordinates == 1 || rel > report.max_rel_error || !std::isfinite(rel)) {
        report.max_rel_error = rel;
        report.worst_input = k;
        report.worst_index = i;
        report.analytic = a;
        report.numeric = numeric;
      }
    }
  }
  for (auto& t : wrt) t.zero_grad();
  report.passed = finite && report.max_rel_error <= options.rtol;
  return report;
}

}  // namespace vafuse
