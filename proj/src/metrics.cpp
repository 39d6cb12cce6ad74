#include "vafuse/metrics.hpp"

#include "vafuse/error.hpp"
#include "vafuse/ops.hpp"

#include "json.hpp"

#include <cstdio>
#include <fstream>

namespace vafuse::metrics {

CccValue ccc(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size()) {
    throw ContractError("ccc: length mismatch " + std::to_string(pred.size()) + " vs " + std::to_string(target.size()));
  }
  if (pred.size() < 2) throw ContractError("ccc needs at least 2 points");
  const double n = static_cast<double>(pred.size());
  double mp = 0.0, mt = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    mp += pred[i];
    mt += target[i];
  }
  mp /= n;
  mt /= n;
  double vp = 0.0, vt = 0.0, cov = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double dp = pred[i] - mp, dt = target[i] - mt;
    vp += dp * dp;
    vt += dt * dt;
    cov += dp * dt;
  }
  vp /= n;
  vt /= n;
  cov /= n;
  const double denom = vp + vt + (mp - mt) * (mp - mt);
  if (denom == 0.0) return {0.0, true};
  return {2.0 * cov / denom, false};
}

Tensor ccc_tensor(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape() || pred.rank() != 1) {
    throw ContractError("ccc_tensor: expected equal [N] shapes, got " + to_string(pred.shape()) + " and " +
                        to_string(target.shape()));
  }
  if (pred.size() < 2) throw ContractError("ccc needs at least 2 points");
  const Tensor dp = pred - mean(pred);
  const Tensor dt = target - mean(target);
  const Tensor shift = mean(pred) - mean(target);
  const Tensor denom = mean(dp * dp) + mean(dt * dt) + shift * shift;
  if (denom.item() == 0.0) return Tensor::scalar(0.0);
  return scale(mean(dp * dt), 2.0) / denom;
}

Tensor ccc_loss(const Tensor& pred_valence, const Tensor& target_valence, const Tensor& pred_arousal,
                const Tensor& target_arousal) {
  const Tensor cv = ccc_tensor(pred_valence, target_valence);
  const Tensor ca = ccc_tensor(pred_arousal, target_arousal);
  return add_scalar(-cv, 1.0) + add_scalar(-ca, 1.0);
}

CccResult competition_score(double ccc_valence, double ccc_arousal) {
  return {ccc_valence, ccc_arousal, 0.5 * (ccc_arousal + ccc_valence)};
}

CccResult competition_score(std::span<const TrialPrediction> trials) {
  if (trials.empty()) throw ContractError("competition_score: no trials");
  std::vector<double> pv, pa, tv, ta;
  for (const auto& t : trials) {
    if (t.pred_valence.size() != t.target_valence.size() || t.pred_arousal.size() != t.target_arousal.size()) {
      throw ContractError("competition_score: trial '" + t.trial_id + "' prediction/label lengths differ");
    }
    pv.insert(pv.end(), t.pred_valence.begin(), t.pred_valence.end());
    pa.insert(pa.end(), t.pred_arousal.begin(), t.pred_arousal.end());
    tv.insert(tv.end(), t.target_valence.begin(), t.target_valence.end());
    ta.insert(ta.end(), t.target_arousal.begin(), t.target_arousal.end());
  }
  return competition_score(ccc(pv, tv).value, ccc(pa, ta).value);
}

std::string report_json(int fold, const CccResult& result) {
  nlohmann::ordered_json j;
  j["fold"] = fold;
  j["ccc_valence"] = result.ccc_valence;
  j["ccc_arousal"] = result.ccc_arousal;
  j["combined"] = result.combined;
  return j.dump(2);
}

std::string fold_table_csv(std::span<const FoldRow> rows) {
  std::string out = "Val Set,Valence,Arousal\n";
  char line[96];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "fold-%d,%.4f,%.4f\n", r.fold, r.result.ccc_valence, r.result.ccc_arousal);
    out += line;
  }
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << text;
}

}  // namespace vafuse::metrics
