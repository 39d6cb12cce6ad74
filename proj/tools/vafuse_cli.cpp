#include "vafuse/config_io.hpp"
#include "vafuse/datapipe.hpp"
#include "vafuse/dsp.hpp"
#include "vafuse/error.hpp"
#include "vafuse/harness.hpp"
#include "vafuse/metrics.hpp"
#include "vafuse/model.hpp"
#include "vafuse/wav.hpp"

#include "CLI11.hpp"

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

namespace fs = std::filesystem;
using namespace vafuse;

namespace {

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

data::LoadOptions load_options(const train::ExperimentConfig& cfg) {
  data::LoadOptions opts;
  opts.mel = cfg.mel;
  opts.vggish.seed = cfg.model.seed;
  return opts;
}

std::vector<data::AlignedTrial> load_labeled(const train::ExperimentConfig& cfg) {
  const auto entries = data::read_manifest(cfg.manifest);
  auto trials = data::load_trials(entries, load_options(cfg));
  std::erase_if(trials, [](const auto& t) { return !t.has_labels; });
  if (trials.empty()) throw DataError("manifest holds no labeled trials");
  return trials;
}

int extract_features(const fs::path& manifest, const fs::path& mel_config) {
  dsp::MelConfig mel;
  if (!mel_config.empty()) mel = mel_config_from_json(read_json_file(mel_config));
  mel.validate();
  for (const auto& entry : data::read_manifest(manifest)) {
    const auto wav = entry.path / "audio.wav";
    if (!fs::exists(wav)) {
      spdlog::warn("{}: no audio.wav, skipped", entry.trial_id);
      continue;
    }
    const auto lm = dsp::log_mel(dsp::read_wav(wav), mel);
    dsp::write_feature_sequence(entry.path / "vggish.bin", dsp::vggish_standin(lm));
    dsp::write_feature_sequence(entry.path / "mfcc.bin", dsp::mfcc39_from_log_mel(lm));
    spdlog::info("{}: {} audio frames", entry.trial_id, lm.length());
  }
  return 0;
}

int train_one(const fs::path& config_path, int fold) {
  const auto cfg = load_experiment_config(config_path);
  cfg.validate();
  if (fold < 0 || fold >= data::FoldPlan::kFolds) throw ConfigError("--fold must be 0..5");
  const auto trials = load_labeled(cfg);
  std::vector<std::string> ids;
  for (const auto& t : trials) ids.push_back(t.trial_id);
  const auto plan = data::make_folds(ids, cfg.train.seed);
  std::vector<data::AlignedTrial> tr, va;
  for (const auto& t : trials) (plan.fold_of(t.trial_id) == fold ? va : tr).push_back(t);

  auto result = train::train_fold(tr, va, cfg.model, cfg.train, fold);
  fs::create_directories(cfg.output_dir);
  const std::string stem = "fold-" + std::to_string(fold);
  metrics::write_text(cfg.output_dir / (stem + ".json"), metrics::report_json(fold, result.record.best_val));
  metrics::write_text(cfg.output_dir / (stem + ".run.json"), train::run_record_json(result.record));
  nn::Model model(cfg.model);
  model.load_state(result.best_state);
  model.save(cfg.output_dir / (stem + ".ckpt"));
  std::cout << metrics::report_json(fold, result.record.best_val) << "\n";
  return result.record.diverged ? 1 : 0;
}

int crossval(const fs::path& config_path) {
  const auto cfg = load_experiment_config(config_path);
  cfg.validate();
  const auto result = train::crossvalidate(load_labeled(cfg), cfg, cfg.output_dir);
  std::cout << train::fold_table_markdown(result);
  return 0;
}

int ablate(const fs::path& config_path) {
  const auto cfg = load_experiment_config(config_path);
  cfg.validate();
  const auto rows = train::ablation_grid(load_labeled(cfg), cfg);
  const auto csv = train::ablation_table_csv(rows);
  fs::create_directories(cfg.output_dir);
  metrics::write_text(cfg.output_dir / "ablation.csv", csv);
  std::cout << csv;
  return 0;
}

int predict(const fs::path& checkpoint, const fs::path& manifest, const fs::path& out_dir) {
  auto model = nn::Model::load(checkpoint);
  data::LoadOptions opts;
  opts.vggish.seed = model.config().seed;
  const auto trials = data::load_trials(data::read_manifest(manifest), opts);
  const auto preds = train::predict_trials(model, trials);
  fs::create_directories(out_dir);
  for (std::size_t i = 0; i < trials.size(); ++i) {
    metrics::write_text(out_dir / (trials[i].trial_id + ".csv"), train::prediction_csv(trials[i], preds[i]));
  }
  spdlog::info("wrote {} prediction files to {}", trials.size(), out_dir.string());
  return 0;
}

int score(const fs::path& pred_dir, const fs::path& manifest) {
  std::vector<metrics::TrialPrediction> all;
  for (const auto& entry : data::read_manifest(manifest)) {
    const auto labels_path = entry.path / "labels.csv";
    if (!fs::exists(labels_path)) continue;
    const auto labels = data::parse_annotations(slurp(labels_path));
    if (labels.empty()) continue;
    const auto pred = train::parse_prediction_csv(slurp(pred_dir / (entry.trial_id + ".csv")));
    std::map<std::size_t, std::size_t> row_of;
    for (std::size_t i = 0; i < pred.frames.size(); ++i) row_of[pred.frames[i]] = i;

    metrics::TrialPrediction p;
    p.trial_id = entry.trial_id;
    p.target_valence = labels.valence;
    p.target_arousal = labels.arousal;
    for (const std::size_t frame : labels.original_indices) {
      const auto it = row_of.find(frame);
      if (it == row_of.end()) {
        throw DataError(entry.trial_id + ": prediction missing frame " + std::to_string(frame));
      }
      p.pred_valence.push_back(pred.valence[it->second]);
      p.pred_arousal.push_back(pred.arousal[it->second]);
    }
    all.push_back(std::move(p));
  }
  if (all.empty()) throw DataError("no labeled trials to score");
  std::cout << metrics::report_json(-1, metrics::competition_score(all)) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_mt("vafuse"));

  CLI::App app{"Audio-visual valence/arousal regression"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Debug logging");

  fs::path manifest, mel_config, config, checkpoint, out_dir = "predictions", pred_dir;
  int fold = 0;

  auto* ext = app.add_subcommand("extract-features", "Compute vggish.bin and mfcc.bin from audio.wav");
  ext->add_option("manifest", manifest, "Manifest JSON")->required();
  ext->add_option("--mel-config", mel_config, "Mel front-end JSON");

  auto* tr = app.add_subcommand("train", "Train one cross-validation fold");
  tr->add_option("--config", config)->required();
  tr->add_option("--fold", fold)->required();

  auto* cv = app.add_subcommand("crossval", "Six-fold cross-validation");
  cv->add_option("--config", config)->required();

  auto* ab = app.add_subcommand("ablate", "Module ablation grid");
  ab->add_option("--config", config)->required();

  auto* pr = app.add_subcommand("predict", "Per-trial prediction CSVs");
  pr->add_option("--checkpoint", checkpoint)->required();
  pr->add_option("--manifest", manifest)->required();
  pr->add_option("--out", out_dir);

  auto* sc = app.add_subcommand("score", "Score prediction CSVs against labels");
  sc->add_option("--pred", pred_dir)->required();
  sc->add_option("--manifest", manifest)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  if (verbose) spdlog::set_level(spdlog::level::debug);

  try {
    if (*ext) return extract_features(manifest, mel_config);
    if (*tr) return train_one(config, fold);
    if (*cv) return crossval(config);
    if (*ab) return ablate(config);
    if (*pr) return predict(checkpoint, manifest, out_dir);
    if (*sc) return score(pred_dir, manifest);
  } catch (const ConfigError& e) {
    spdlog::error("config error: {}", e.what());
    return 2;
  } catch (const DataError& e) {
    spdlog::error("data error: {}", e.what());
    return 3;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
