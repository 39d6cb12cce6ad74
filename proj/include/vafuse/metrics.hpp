#pragma once

#include "vafuse/tensor.hpp"

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace vafuse::metrics {

struct CccValue {
  double value = 0.0;
  /// Both sequences constant with equal means: 0/0, reported as 0.
  bool degenerate = false;
};

/// Lin's concordance correlation coefficient with population (1/N) moments:
/// 2 cov(p,t) / (var(p) + var(t) + (mean(p) - mean(t))^2).
CccValue ccc(std::span<const double> pred, std::span<const double> target);

/// Differentiable CCC between two [N] tensors.
Tensor ccc_tensor(const Tensor& pred, const Tensor& target);

/// (1 - CCC(v_hat, v)) + (1 - CCC(a_hat, a)), a scalar in [0, 4].
Tensor ccc_loss(const Tensor& pred_valence, const Tensor& target_valence, const Tensor& pred_arousal,
                const Tensor& target_arousal);

struct CccResult {
  double ccc_valence = 0.0;
  double ccc_arousal = 0.0;
  double combined = 0.0;
};

/// 0.5 * (CCC_arousal + CCC_valence).
CccResult competition_score(double ccc_valence, double ccc_arousal);

struct TrialPrediction {
  std::string trial_id;
  std::vector<double> pred_valence, pred_arousal;
  std::vector<double> target_valence, target_arousal;
};

/// CCC over the concatenation of every trial's frames, per target.
CccResult competition_score(std::span<const TrialPrediction> trials);

/// {"fold": k, "ccc_valence": ..., "ccc_arousal": ..., "combined": ...}
std::string report_json(int fold, const CccResult& result);

struct FoldRow {
  int fold = 0;
  CccResult result;
};

/// "Val Set,Valence,Arousal" with one "fold-k" row per entry.
std::string fold_table_csv(std::span<const FoldRow> rows);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace vafuse::metrics
