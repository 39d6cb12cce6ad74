#pragma once

#include "vafuse/datapipe.hpp"
#include "vafuse/dsp.hpp"
#include "vafuse/metrics.hpp"
#include "vafuse/model.hpp"
#include "vafuse/optim.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace vafuse::train {

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_windows = 4;
  double learning_rate = 1e-3;
  AdamConfig optimizer;
  double grad_clip = 1.0;
  std::uint64_t seed = 0;
  std::size_t window_stride = 200;  // window length comes from ModelConfig::window_len
  /// Score the training trials (eval mode) after the last epoch.
  bool eval_train = false;

  void validate() const;
};

/// Everything one CLI invocation needs.
struct ExperimentConfig {
  nn::ModelConfig model;
  TrainConfig train;
  dsp::MelConfig mel;
  std::filesystem::path manifest;
  std::filesystem::path output_dir = "runs";
  std::size_t fold_threads = 1;
  int ablation_fold = 0;

  data::WindowSpec window() const { return {model.window_len, train.window_stride}; }
  void validate() const;
};

/// Applies VA_SEED, when set, to both the model and training seeds.
void apply_seed_override(ExperimentConfig& config);

struct RunRecord {
  std::string config_json;
  std::uint64_t seed = 0;
  int fold = 0;
  std::vector<double> train_loss;  // mean batch loss per epoch
  std::vector<metrics::CccResult> val_history;
  metrics::CccResult best_val;
  int best_epoch = -1;
  metrics::CccResult train_score;  // filled when TrainConfig::eval_train
  std::size_t parameter_count = 0;
  double wall_seconds = 0.0;
  bool diverged = false;
  std::string diagnostic;
};

struct FoldResult {
  RunRecord record;
  std::vector<NamedArray> best_state;   // parameters at the best validation epoch
  std::vector<NamedArray> final_state;  // parameters after the last epoch
};

/// Adam on the CCC loss over shuffled windows of the training trials; the
/// validation score is checked every epoch and the best state retained.
/// Padded and filled frames do not enter the loss.
FoldResult train_fold(std::span<const data::AlignedTrial> train_trials, std::span<const data::AlignedTrial> val_trials,
                      const nn::ModelConfig& model_config, const TrainConfig& train_config, int fold = 0);

/// Eval-mode predictions over non-overlapping windows, reassembled per trial.
std::vector<metrics::TrialPrediction> predict_trials(nn::Model& model, std::span<const data::AlignedTrial> trials);

metrics::CccResult evaluate(nn::Model& model, std::span<const data::AlignedTrial> trials);

struct CrossValResult {
  std::array<RunRecord, data::FoldPlan::kFolds> records;
  data::FoldPlan plan;
  int best_fold = 0;
};

/// Fold k validates on fold k and trains on the other five.
CrossValResult crossvalidate(std::span<const data::AlignedTrial> trials, const ExperimentConfig& config,
                             const std::filesystem::path& output_dir = {});

struct AblationRow {
  std::string name;
  bool use_lase = false;
  bool use_tcn = false;
  bool use_transformer = false;
  RunRecord record;
  std::size_t parameter_count = 0;
};

/// The eight module on/off combinations, baseline first.
std::array<AblationRow, 8> ablation_rows_template();

/// Trains every combination on the same fold split and seed.
std::array<AblationRow, 8> ablation_grid(std::span<const data::AlignedTrial> trials, const ExperimentConfig& config);

/// Header "Experimental Combination,LA-SE,TCN,Transformer Encode,CCC Score (%),Parameters".
std::string ablation_table_csv(std::span<const AblationRow> rows);
/// Markdown fold table with the best fold in bold.
std::string fold_table_markdown(const CrossValResult& result);
std::string run_record_json(const RunRecord& record);

/// "frame,valence,arousal", one row per frame; frame numbers are the
/// original annotation rows when the trial is labeled.
std::string prediction_csv(const data::AlignedTrial& trial, const metrics::TrialPrediction& prediction);

struct PredictionFile {
  std::vector<std::size_t> frames;
  std::vector<double> valence;
  std::vector<double> arousal;
};
PredictionFile parse_prediction_csv(std::string_view text);

}  // namespace vafuse::train
