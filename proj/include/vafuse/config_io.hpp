#pragma once

#include "vafuse/dsp.hpp"
#include "vafuse/harness.hpp"
#include "vafuse/model.hpp"

#include "json.hpp"

#include <filesystem>

namespace vafuse {

// Config documents are strict: unknown keys and ill-typed values raise
// ConfigError. Missing keys keep their defaults.

nlohmann::json to_json(const nn::ModelConfig& config);
nn::ModelConfig model_config_from_json(const nlohmann::json& doc);

nlohmann::json to_json(const train::TrainConfig& config);
train::TrainConfig train_config_from_json(const nlohmann::json& doc);

nlohmann::json to_json(const dsp::MelConfig& config);
dsp::MelConfig mel_config_from_json(const nlohmann::json& doc);

/// {"model": {...}, "train": {...}, "mel": {...}, "manifest": path,
///  "output_dir": path, "fold_threads": n, "ablation_fold": k}.
/// Relative paths resolve against the config file's directory.
train::ExperimentConfig experiment_config_from_json(const nlohmann::json& doc,
                                                    const std::filesystem::path& base_dir = {});
nlohmann::json to_json(const train::ExperimentConfig& config);

nlohmann::json read_json_file(const std::filesystem::path& path);
train::ExperimentConfig load_experiment_config(const std::filesystem::path& path);

}  // namespace vafuse
