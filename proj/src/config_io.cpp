#include "vafuse/config_io.hpp"

#include "vafuse/error.hpp"

#include <fstream>
#include <set>

namespace vafuse {
namespace {

using nlohmann::json;

void check_keys(const json& doc, const char* where, std::initializer_list<const char*> allowed) {
  if (!doc.is_object()) throw ConfigError(std::string(where) + " must be a JSON object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, value] : doc.items()) {
    if (!ok.count(key)) throw ConfigError(std::string(where) + ": unknown key '" + key + "'");
  }
}

template <class T>
void read(const json& doc, const char* key, T& out, const char* where) {
  if (!doc.contains(key)) return;
  try {
    out = doc.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string(where) + "." + key + ": " + e.what());
  }
}

}  // namespace

json to_json(const nn::ModelConfig& c) {
  json j;
  j["use_lase"] = c.use_lase;
  j["use_tcn"] = c.use_tcn;
  j["use_transformer"] = c.use_transformer;
  j["visual_dim"] = c.visual_dim;
  j["audio_dim"] = c.audio_dim;
  j["mfcc_dim"] = c.mfcc_dim;
  j["visual_input"] = c.visual_input == nn::VisualInput::Frames ? "frames" : "features";
  j["stem"] = {{"channels", c.stem.channels}};
  j["lase"] = {{"reduction", c.lase.reduction}};
  j["tcn"] = {{"levels", c.tcn.levels}, {"kernel", c.tcn.kernel}, {"channels", c.tcn.channels},
              {"dilation_base", c.tcn.dilation_base}};
  j["transformer"] = {{"layers", c.transformer.layers}, {"heads", c.transformer.heads},
                      {"d_model", c.transformer.d_model}, {"ff_dim", c.transformer.ff_dim},
                      {"dropout", c.transformer.dropout}};
  j["head"] = {{"hidden_dim", c.head.hidden_dim}};
  j["bn_momentum"] = c.bn_momentum;
  j["window_len"] = c.window_len;
  j["seed"] = c.seed;
  return j;
}

nn::ModelConfig model_config_from_json(const json& doc) {
  constexpr const char* where = "model";
  check_keys(doc, where,
             {"use_lase", "use_tcn", "use_transformer", "visual_dim", "audio_dim", "mfcc_dim", "visual_input", "stem",
              "lase", "tcn", "transformer", "head", "bn_momentum", "window_len", "seed"});
  nn::ModelConfig c;
  read(doc, "use_lase", c.use_lase, where);
  read(doc, "use_tcn", c.use_tcn, where);
  read(doc, "use_transformer", c.use_transformer, where);
  read(doc, "visual_dim", c.visual_dim, where);
  read(doc, "audio_dim", c.audio_dim, where);
  read(doc, "mfcc_dim", c.mfcc_dim, where);
  std::string visual_input = "frames";
  read(doc, "visual_input", visual_input, where);
  if (visual_input == "frames") {
    c.visual_input = nn::VisualInput::Frames;
  } else if (visual_input == "features") {
    c.visual_input = nn::VisualInput::Features;
  } else {
    throw ConfigError("model.visual_input must be 'frames' or 'features'");
  }
  if (doc.contains("stem")) {
    check_keys(doc["stem"], "model.stem", {"channels"});
    read(doc["stem"], "channels", c.stem.channels, "model.stem");
  }
  if (doc.contains("lase")) {
    check_keys(doc["lase"], "model.lase", {"reduction"});
    read(doc["lase"], "reduction", c.lase.reduction, "model.lase");
  }
  if (doc.contains("tcn")) {
    const auto& t = doc["tcn"];
    check_keys(t, "model.tcn", {"levels", "kernel", "channels", "dilation_base"});
    read(t, "levels", c.tcn.levels, "model.tcn");
    read(t, "kernel", c.tcn.kernel, "model.tcn");
    read(t, "channels", c.tcn.channels, "model.tcn");
    read(t, "dilation_base", c.tcn.dilation_base, "model.tcn");
  }
  if (doc.contains("transformer")) {
    const auto& t = doc["transformer"];
    check_keys(t, "model.transformer", {"layers", "heads", "d_model", "ff_dim", "dropout"});
    read(t, "layers", c.transformer.layers, "model.transformer");
    read(t, "heads", c.transformer.heads, "model.transformer");
    read(t, "d_model", c.transformer.d_model, "model.transformer");
    read(t, "ff_dim", c.transformer.ff_dim, "model.transformer");
    read(t, "dropout", c.transformer.dropout, "model.transformer");
  }
  if (doc.contains("head")) {
    check_keys(doc["head"], "model.head", {"hidden_dim"});
    read(doc["head"], "hidden_dim", c.head.hidden_dim, "model.head");
  }
  read(doc, "bn_momentum", c.bn_momentum, where);
  read(doc, "window_len", c.window_len, where);
  read(doc, "seed", c.seed, where);
  c.validate();
  return c;
}

json to_json(const train::TrainConfig& c) {
  json j;
  j["epochs"] = c.epochs;
  j["batch_windows"] = c.batch_windows;
  j["learning_rate"] = c.learning_rate;
  j["optimizer"] = {{"beta1", c.optimizer.beta1}, {"beta2", c.optimizer.beta2}, {"eps", c.optimizer.eps}};
  j["grad_clip"] = c.grad_clip;
  j["seed"] = c.seed;
  j["window_stride"] = c.window_stride;
  j["eval_train"] = c.eval_train;
  return j;
}

train::TrainConfig train_config_from_json(const json& doc) {
  constexpr const char* where = "train";
  check_keys(doc, where,
             {"epochs", "batch_windows", "learning_rate", "optimizer", "grad_clip", "seed", "window_stride",
              "eval_train"});
  train::TrainConfig c;
  read(doc, "epochs", c.epochs, where);
  read(doc, "batch_windows", c.batch_windows, where);
  read(doc, "learning_rate", c.learning_rate, where);
  if (doc.contains("optimizer")) {
    const auto& o = doc["optimizer"];
    check_keys(o, "train.optimizer", {"beta1", "beta2", "eps"});
    read(o, "beta1", c.optimizer.beta1, "train.optimizer");
    read(o, "beta2", c.optimizer.beta2, "train.optimizer");
    read(o, "eps", c.optimizer.eps, "train.optimizer");
  }
  read(doc, "grad_clip", c.grad_clip, where);
  read(doc, "seed", c.seed, where);
  read(doc, "window_stride", c.window_stride, where);
  read(doc, "eval_train", c.eval_train, where);
  c.validate();
  return c;
}

json to_json(const dsp::MelConfig& c) {
  return {{"n_fft", c.n_fft}, {"hop", c.hop},           {"n_mels", c.n_mels},
          {"fmin", c.fmin},   {"fmax", c.fmax},         {"log_offset", c.log_offset}};
}

dsp::MelConfig mel_config_from_json(const json& doc) {
  constexpr const char* where = "mel";
  check_keys(doc, where, {"n_fft", "hop", "n_mels", "fmin", "fmax", "log_offset", "label_rate"});
  dsp::MelConfig c;
  if (doc.contains("label_rate")) {
    double rate = 0.0;
    read(doc, "label_rate", rate, where);
    if (doc.contains("hop")) throw ConfigError("mel: give either hop or label_rate, not both");
    c = dsp::MelConfig::for_label_rate(rate);
  }
  read(doc, "n_fft", c.n_fft, where);
  read(doc, "hop", c.hop, where);
  read(doc, "n_mels", c.n_mels, where);
  read(doc, "fmin", c.fmin, where);
  read(doc, "fmax", c.fmax, where);
  read(doc, "log_offset", c.log_offset, where);
  c.validate();
  return c;
}

train::ExperimentConfig experiment_config_from_json(const json& doc, const std::filesystem::path& base_dir) {
  check_keys(doc, "config", {"model", "train", "mel", "manifest", "output_dir", "fold_threads", "ablation_fold"});
  train::ExperimentConfig c;
  if (doc.contains("model")) c.model = model_config_from_json(doc["model"]);
  if (doc.contains("train")) c.train = train_config_from_json(doc["train"]);
  if (doc.contains("mel")) c.mel = mel_config_from_json(doc["mel"]);
  std::string manifest, output_dir = c.output_dir.string();
  read(doc, "manifest", manifest, "config");
  read(doc, "output_dir", output_dir, "config");
  read(doc, "fold_threads", c.fold_threads, "config");
  read(doc, "ablation_fold", c.ablation_fold, "config");
  const auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
  };
  if (!manifest.empty()) c.manifest = resolve(manifest);
  c.output_dir = resolve(output_dir);
  c.validate();
  return c;
}

json to_json(const train::ExperimentConfig& c) {
  json j;
  j["model"] = to_json(c.model);
  j["train"] = to_json(c.train);
  j["mel"] = to_json(c.mel);
  j["manifest"] = c.manifest.string();
  j["output_dir"] = c.output_dir.string();
  j["fold_threads"] = c.fold_threads;
  j["ablation_fold"] = c.ablation_fold;
  return j;
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path.string());
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

train::ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  auto cfg = experiment_config_from_json(read_json_file(path), path.parent_path());
  train::apply_seed_override(cfg);
  return cfg;
}

}  // namespace vafuse
