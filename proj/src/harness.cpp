#include "vafuse/harness.hpp"

#include "vafuse/config_io.hpp"
#include "vafuse/error.hpp"
#include "vafuse/rng.hpp"

#include <spdlog/spdlog.h>

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <mutex>
#include <thread>

namespace vafuse::train {
namespace fs = std::filesystem;
namespace {

std::vector<data::AlignedTrial> select(std::span<const data::AlignedTrial> trials, const std::vector<std::string>& ids) {
  std::vector<data::AlignedTrial> out;
  for (const auto& id : ids) {
    for (const auto& t : trials) {
      if (t.trial_id == id) out.push_back(t);
    }
  }
  return out;
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void save_state(const fs::path& path, const nn::ModelConfig& config, const std::vector<NamedArray>& state) {
  nn::Model model(config);
  model.load_state(state);
  model.save(path);
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (batch_windows < 1) throw ConfigError("train.batch_windows must be >= 1");
  if (!(learning_rate >= 0.0)) throw ConfigError("train.learning_rate must be non-negative");
  if (!(grad_clip > 0.0)) throw ConfigError("train.grad_clip must be positive");
  if (window_stride < 1) throw ConfigError("train.window_stride must be >= 1");
  if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0 && optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0)) {
    throw ConfigError("adam betas must lie in [0,1)");
  }
  if (!(optimizer.eps > 0.0)) throw ConfigError("adam eps must be positive");
}

void ExperimentConfig::validate() const {
  model.validate();
  train.validate();
  mel.validate();
  window().validate();
  if (fold_threads < 1) throw ConfigError("fold_threads must be >= 1");
  if (ablation_fold < 0 || ablation_fold >= data::FoldPlan::kFolds) throw ConfigError("ablation_fold must be 0..5");
}

void apply_seed_override(ExperimentConfig& config) {
  const char* env = std::getenv("VA_SEED");
  if (!env || !*env) return;
  char* end = nullptr;
  const unsigned long long seed = std::strtoull(env, &end, 10);
  if (*end != '\0') throw ConfigError(std::string("VA_SEED is not an unsigned integer: ") + env);
  config.model.seed = seed;
  config.train.seed = seed;
}

std::vector<metrics::TrialPrediction> predict_trials(nn::Model& model, std::span<const data::AlignedTrial> trials) {
  const std::size_t window = model.config().window_len;
  const data::WindowSpec spec{window, window};
  std::vector<metrics::TrialPrediction> out;
  out.reserve(trials.size());
  for (const auto& trial : trials) {
    const auto windows = data::window_resample(trial, spec, Mode::Eval);
    std::vector<std::vector<double>> pv, pa;
    for (const auto& w : windows) {
      const auto pred = model.forward(w, Mode::Eval, 0);
      pv.push_back(pred.valence.to_vector());
      pa.push_back(pred.arousal.to_vector());
    }
    metrics::TrialPrediction p;
    p.trial_id = trial.trial_id;
    p.pred_valence = data::reassemble(windows, pv, trial.length());
    p.pred_arousal = data::reassemble(windows, pa, trial.length());
    if (trial.has_labels) {
      p.target_valence = trial.labels.valence;
      p.target_arousal = trial.labels.arousal;
    }
    out.push_back(std::move(p));
  }
  return out;
}

metrics::CccResult evaluate(nn::Model& model, std::span<const data::AlignedTrial> trials) {
  auto preds = predict_trials(model, trials);
  std::erase_if(preds, [](const auto& p) { return p.target_valence.empty(); });
  if (preds.empty()) throw ContractError("evaluate: no labeled trials");
  return metrics::competition_score(preds);
}

FoldResult train_fold(std::span<const data::AlignedTrial> train_trials, std::span<const data::AlignedTrial> val_trials,
                      const nn::ModelConfig& model_config, const TrainConfig& train_config, int fold) {
  train_config.validate();
  if (train_trials.empty() || val_trials.empty()) throw ContractError("train_fold: empty train or validation split");
  const auto start = std::chrono::steady_clock::now();

  nn::Model model(model_config);
  Adam optimizer(model.parameters(), train_config.learning_rate, train_config.optimizer);
  const data::WindowSpec spec{model_config.window_len, train_config.window_stride};
  std::vector<data::TrialWindow> windows;
  for (const auto& trial : train_trials) {
    if (!trial.has_labels) throw ContractError("train_fold: trial '" + trial.trial_id + "' has no labels");
    auto w = data::window_resample(trial, spec, Mode::Train);
    windows.insert(windows.end(), std::make_move_iterator(w.begin()), std::make_move_iterator(w.end()));
  }

  FoldResult result;
  RunRecord& rec = result.record;
  rec.config_json = nlohmann::json{{"model", to_json(model_config)}, {"train", to_json(train_config)}}.dump();
  rec.seed = train_config.seed;
  rec.fold = fold;
  rec.parameter_count = model.parameter_count();

  double best = -std::numeric_limits<double>::infinity();
  std::uint64_t step = 0;
  for (std::size_t epoch = 0; epoch < train_config.epochs && !rec.diverged; ++epoch) {
    const auto order = seeded_permutation(windows.size(), mix64(train_config.seed ^ mix64(epoch + 1)));
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < order.size(); b += train_config.batch_windows) {
      optimizer.zero_grad();
      std::vector<Tensor> pv, pa;
      std::vector<double> tv, ta;
      for (std::size_t k = b; k < std::min(order.size(), b + train_config.batch_windows); ++k) {
        const auto& w = windows[order[k]];
        const auto pred = model.forward(w, Mode::Train, mix64(train_config.seed ^ mix64(++step)));
        std::vector<std::size_t> valid;
        for (std::size_t i = 0; i < w.loss_mask.size(); ++i) {
          if (!w.loss_mask[i]) continue;
          valid.push_back(i);
          tv.push_back(w.valence[i]);
          ta.push_back(w.arousal[i]);
        }
        if (valid.empty()) continue;
        pv.push_back(index_rows(pred.valence, valid));
        pa.push_back(index_rows(pred.arousal, valid));
      }
      if (tv.size() < 2) continue;
      const std::size_t n = tv.size();
      const Tensor loss = metrics::ccc_loss(concat_rows(pv), Tensor({n}, tv), concat_rows(pa), Tensor({n}, ta));
      const double value = loss.item();
      if (!std::isfinite(value)) {
        rec.diverged = true;
        rec.diagnostic = "non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                         std::to_string(b / train_config.batch_windows);
        spdlog::error("fold {}: {}", fold, rec.diagnostic);
        break;
      }
      loss.backward();
      const double norm = optimizer.clip_grad_norm(train_config.grad_clip);
      if (!std::isfinite(norm)) {
        rec.diverged = true;
        rec.diagnostic = "non-finite gradient norm at epoch " + std::to_string(epoch);
        spdlog::error("fold {}: {}", fold, rec.diagnostic);
        break;
      }
      optimizer.step();
      loss_sum += value;
      ++batches;
    }
    if (rec.diverged) break;
    rec.train_loss.push_back(batches ? loss_sum / static_cast<double>(batches) : 0.0);
    const auto val = evaluate(model, val_trials);
    rec.val_history.push_back(val);
    if (val.combined > best) {
      best = val.combined;
      rec.best_val = val;
      rec.best_epoch = static_cast<int>(epoch);
      result.best_state = model.state();
    }
    spdlog::debug("fold {} epoch {}: loss {:.4f} val {:.4f}", fold, epoch, rec.train_loss.back(), val.combined);
  }
  if (train_config.eval_train && !rec.diverged) rec.train_score = evaluate(model, train_trials);
  result.final_state = model.state();
  if (result.best_state.empty()) result.best_state = result.final_state;
  rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

CrossValResult crossvalidate(std::span<const data::AlignedTrial> trials, const ExperimentConfig& config,
                             const fs::path& output_dir) {
  config.validate();
  std::vector<std::string> ids;
  for (const auto& t : trials) ids.push_back(t.trial_id);
  CrossValResult result;
  result.plan = data::make_folds(ids, config.train.seed);

  std::array<std::vector<NamedArray>, data::FoldPlan::kFolds> best_states;
  std::mutex handoff;
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int k = next++; k < data::FoldPlan::kFolds; k = next++) {
      const auto train = select(trials, result.plan.trials_not_in(k));
      const auto val = select(trials, result.plan.trials_in(k));
      auto fold = train_fold(train, val, config.model, config.train, k);
      spdlog::info("fold-{}: valence {:.4f} arousal {:.4f}", k, fold.record.best_val.ccc_valence,
                   fold.record.best_val.ccc_arousal);
      std::lock_guard lock(handoff);
      result.records[static_cast<std::size_t>(k)] = std::move(fold.record);
      best_states[static_cast<std::size_t>(k)] = std::move(fold.best_state);
    }
  };
  const std::size_t threads = std::min<std::size_t>(config.fold_threads, data::FoldPlan::kFolds);
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t i = 0; i < threads; ++i) pool.emplace_back(worker);
  }

  for (int k = 1; k < data::FoldPlan::kFolds; ++k) {
    if (result.records[static_cast<std::size_t>(k)].best_val.combined >
        result.records[static_cast<std::size_t>(result.best_fold)].best_val.combined) {
      result.best_fold = k;
    }
  }

  if (!output_dir.empty()) {
    fs::create_directories(output_dir);
    std::vector<metrics::FoldRow> rows;
    for (int k = 0; k < data::FoldPlan::kFolds; ++k) {
      const auto& rec = result.records[static_cast<std::size_t>(k)];
      rows.push_back({k, rec.best_val});
      metrics::write_text(output_dir / ("fold-" + std::to_string(k) + ".json"), metrics::report_json(k, rec.best_val));
      metrics::write_text(output_dir / ("fold-" + std::to_string(k) + ".run.json"), run_record_json(rec));
      save_state(output_dir / ("fold-" + std::to_string(k) + ".ckpt"), config.model,
                 best_states[static_cast<std::size_t>(k)]);
    }
    metrics::write_text(output_dir / "table.csv", metrics::fold_table_csv(rows));
    metrics::write_text(output_dir / "table.md", fold_table_markdown(result));
  }
  return result;
}

std::array<AblationRow, 8> ablation_rows_template() {
  return {{
      {"Baseline", false, false, false, {}, 0},
      {"+LA-SE", true, false, false, {}, 0},
      {"+TCN", false, true, false, {}, 0},
      {"+Transformer Encode", false, false, true, {}, 0},
      {"+LA-SE + TCN", true, true, false, {}, 0},
      {"+LA-SE + Transformer Encode", true, false, true, {}, 0},
      {"+TCN + Transformer Encode", false, true, true, {}, 0},
      {"+LA-SE + TCN + Transformer Encode", true, true, true, {}, 0},
  }};
}

std::array<AblationRow, 8> ablation_grid(std::span<const data::AlignedTrial> trials, const ExperimentConfig& config) {
  config.validate();
  std::vector<std::string> ids;
  for (const auto& t : trials) ids.push_back(t.trial_id);
  const auto plan = data::make_folds(ids, config.train.seed);
  const auto train = select(trials, plan.trials_not_in(config.ablation_fold));
  const auto val = select(trials, plan.trials_in(config.ablation_fold));

  auto rows = ablation_rows_template();
  for (auto& row : rows) {
    nn::ModelConfig mc = config.model;
    mc.use_lase = row.use_lase;
    mc.use_tcn = row.use_tcn;
    mc.use_transformer = row.use_transformer;
    row.record = train_fold(train, val, mc, config.train, config.ablation_fold).record;
    row.parameter_count = row.record.parameter_count;
    spdlog::info("{}: CCC {:.2f}%", row.name, 100.0 * row.record.best_val.combined);
  }
  return rows;
}

std::string ablation_table_csv(std::span<const AblationRow> rows) {
  std::string out = "Experimental Combination,LA-SE,TCN,Transformer Encode,CCC Score (%),Parameters\n";
  char line[160];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%s,%s,%s,%s,%.2f,%zu\n", r.name.c_str(), r.use_lase ? "x" : "",
                  r.use_tcn ? "x" : "", r.use_transformer ? "x" : "", 100.0 * r.record.best_val.combined,
                  r.parameter_count);
    out += line;
  }
  return out;
}

std::string fold_table_markdown(const CrossValResult& result) {
  std::string out = "| Val Set | Valence | Arousal |\n|---|---|---|\n";
  char line[96];
  for (int k = 0; k < data::FoldPlan::kFolds; ++k) {
    const auto& r = result.records[static_cast<std::size_t>(k)].best_val;
    if (k == result.best_fold) {
      std::snprintf(line, sizeof line, "| **fold-%d** | **%.4f** | **%.4f** |\n", k, r.ccc_valence, r.ccc_arousal);
    } else {
      std::snprintf(line, sizeof line, "| fold-%d | %.4f | %.4f |\n", k, r.ccc_valence, r.ccc_arousal);
    }
    out += line;
  }
  return out;
}

std::string run_record_json(const RunRecord& r) {
  const auto ccc = [](const metrics::CccResult& c) {
    return nlohmann::ordered_json{{"ccc_valence", c.ccc_valence}, {"ccc_arousal", c.ccc_arousal}, {"combined", c.combined}};
  };
  nlohmann::ordered_json j;
  j["fold"] = r.fold;
  j["seed"] = r.seed;
  j["config"] = nlohmann::json::parse(r.config_json);
  j["parameter_count"] = r.parameter_count;
  j["train_loss"] = r.train_loss;
  j["val_history"] = nlohmann::ordered_json::array();
  for (const auto& v : r.val_history) j["val_history"].push_back(ccc(v));
  j["best_epoch"] = r.best_epoch;
  j["best_val"] = ccc(r.best_val);
  j["train_score"] = ccc(r.train_score);
  j["diverged"] = r.diverged;
  j["diagnostic"] = r.diagnostic;
  j["wall_seconds"] = r.wall_seconds;
  return j.dump(2);
}

std::string prediction_csv(const data::AlignedTrial& trial, const metrics::TrialPrediction& prediction) {
  std::string out = "frame,valence,arousal\n";
  for (std::size_t i = 0; i < prediction.pred_valence.size(); ++i) {
    const std::size_t frame = trial.has_labels ? trial.labels.original_indices[i] : i;
    out += std::to_string(frame) + "," + fmt_double(prediction.pred_valence[i]) + "," +
           fmt_double(prediction.pred_arousal[i]) + "\n";
  }
  return out;
}

PredictionFile parse_prediction_csv(std::string_view text) {
  PredictionFile file;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string line(text.substr(0, nl));
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1) {
      if (line != "frame,valence,arousal") throw ParseError(1, "expected header 'frame,valence,arousal'");
      continue;
    }
    if (line.empty()) continue;
    unsigned long long frame = 0;
    double v = 0.0, a = 0.0;
    char tail = 0;
    if (std::sscanf(line.c_str(), "%llu,%lf,%lf%c", &frame, &v, &a, &tail) != 3) {
      throw ParseError(line_no, "malformed prediction row '" + line + "'");
    }
    file.frames.push_back(frame);
    file.valence.push_back(v);
    file.arousal.push_back(a);
  }
  return file;
}

}  // namespace vafuse::train
