#pragma once

#include "vafuse/datapipe.hpp"
#include "vafuse/harness.hpp"
#include "vafuse/model.hpp"

#include <filesystem>
#include <vector>

namespace fixture {

// Synthetic trials whose labels are a smooth deterministic function of the
// injected features: two latent curves per trial drive every branch
// linearly, and valence/arousal are 0.8 * tanh of those curves.
struct SyntheticOptions {
  std::size_t trials = 12;
  std::size_t length = 96;
  bool raw_frames = false;  // visual branch as [T,3,48,48] frames instead of embeddings
  std::size_t visual_dim = 512;
  std::size_t audio_dim = 128;
  std::size_t mfcc_dim = 39;
  double noise = 0.02;
  std::uint64_t seed = 7;
};

std::vector<vafuse::data::AlignedTrial> synthetic_trials(const SyntheticOptions& options = {});

/// Model config matching the fixture's branch widths.
vafuse::nn::ModelConfig model_config(const SyntheticOptions& options);

/// Writes the fixture as trial directories (labels.csv, visual.bin or
/// frames.bin, vggish.bin, mfcc.bin) plus manifest.json; returns the manifest path.
std::filesystem::path write_dataset(const std::filesystem::path& dir, const SyntheticOptions& options = {});

/// Fresh empty directory under the system temp dir.
std::filesystem::path scratch_dir(const std::string& name);

}  // namespace fixture
