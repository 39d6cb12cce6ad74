#include "fixture.hpp"

#include "vafuse/rng.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

namespace fixture {
namespace fs = std::filesystem;
using namespace vafuse;

namespace {

// Gaussian projection matrix [rows, 2] with a per-row bias, drawn once per dataset.
struct Projection {
  std::vector<double> w;
  std::vector<double> b;
};

Projection projection(std::uint64_t seed, const std::string& name, std::size_t rows) {
  CounterRng rng(seed, name);
  Projection p;
  p.w.resize(rows * 2);
  p.b.resize(rows);
  for (auto& v : p.w) v = rng.normal();
  for (auto& v : p.b) v = 0.3 * rng.normal();
  return p;
}

std::vector<double> latent(CounterRng& rng, std::size_t length) {
  std::vector<double> z(length, 0.0);
  const double two_pi = 2.0 * std::numbers::pi;
  for (int j = 0; j < 3; ++j) {
    const double cycles = rng.uniform(0.5, 2.5);
    const double phase = rng.uniform(0.0, two_pi);
    const double amp = rng.uniform(0.4, 0.8);
    for (std::size_t t = 0; t < length; ++t) {
      z[t] += amp * std::sin(two_pi * cycles * static_cast<double>(t) / static_cast<double>(length) + phase);
    }
  }
  return z;
}

Tensor project(const Projection& p, const std::vector<double>& zv, const std::vector<double>& za, CounterRng& rng,
               double noise) {
  const std::size_t rows = p.b.size();
  const std::size_t t_len = zv.size();
  std::vector<double> out(t_len * rows);
  for (std::size_t t = 0; t < t_len; ++t) {
    for (std::size_t r = 0; r < rows; ++r) {
      out[t * rows + r] = p.w[2 * r] * zv[t] + p.w[2 * r + 1] * za[t] + p.b[r] + noise * rng.normal();
    }
  }
  return Tensor({t_len, rows}, std::move(out));
}

}  // namespace

std::vector<data::AlignedTrial> synthetic_trials(const SyntheticOptions& o) {
  const auto vis = projection(o.seed, "fixture.visual", o.raw_frames ? data::kFrameChannels * 48 * 48 : o.visual_dim);
  const auto aud = projection(o.seed, "fixture.vggish", o.audio_dim);
  const auto mfc = projection(o.seed, "fixture.mfcc", o.mfcc_dim);

  std::vector<data::AlignedTrial> trials;
  for (std::size_t i = 0; i < o.trials; ++i) {
    CounterRng rng(mix64(o.seed ^ (i + 1)), "fixture.trial");
    const auto zv = latent(rng, o.length);
    const auto za = latent(rng, o.length);

    data::AlignedTrial trial;
    trial.trial_id = "trial" + std::to_string(i);
    Tensor visual = project(vis, zv, za, rng, o.noise);
    if (o.raw_frames) {
      visual = reshape(scale(visual, 0.5), {o.length, data::kFrameChannels, data::kFrameSide, data::kFrameSide});
      trial.branches[data::kVisualBranch] = {visual, 30.0, dsp::Modality::VisualFrames};
    } else {
      trial.branches[data::kVisualBranch] = {visual, 30.0, dsp::Modality::Visual};
    }
    trial.branches[data::kVggishBranch] = {project(aud, zv, za, rng, o.noise), 30.0, dsp::Modality::Vggish};
    trial.branches[data::kMfccBranch] = {project(mfc, zv, za, rng, o.noise), 30.0, dsp::Modality::Mfcc};
    for (std::size_t t = 0; t < o.length; ++t) {
      trial.labels.valence.push_back(0.8 * std::tanh(zv[t]));
      trial.labels.arousal.push_back(0.8 * std::tanh(za[t]));
      trial.labels.original_indices.push_back(t);
    }
    trial.labels.total_rows = o.length;
    trial.fill_mask.assign(o.length, false);
    trial.check_aligned();
    trials.push_back(std::move(trial));
  }
  return trials;
}

nn::ModelConfig model_config(const SyntheticOptions& o) {
  nn::ModelConfig cfg;
  cfg.visual_dim = o.visual_dim;
  cfg.audio_dim = o.audio_dim;
  cfg.mfcc_dim = o.mfcc_dim;
  cfg.visual_input = o.raw_frames ? nn::VisualInput::Frames : nn::VisualInput::Features;
  cfg.use_lase = o.raw_frames;
  cfg.window_len = o.length;
  cfg.seed = o.seed;
  return cfg;
}

fs::path write_dataset(const fs::path& dir, const SyntheticOptions& o) {
  fs::create_directories(dir);
  const auto trials = synthetic_trials(o);
  std::vector<data::ManifestEntry> entries;
  for (const auto& t : trials) {
    const fs::path tdir = dir / t.trial_id;
    fs::create_directories(tdir);
    std::ofstream labels(tdir / "labels.csv");
    labels.precision(17);
    labels << "valence,arousal\n";
    for (std::size_t i = 0; i < t.labels.size(); ++i) labels << t.labels.valence[i] << ',' << t.labels.arousal[i] << '\n';
    labels.close();
    if (o.raw_frames) {
      data::FrameStore store;
      store.total_frames = t.length();
      for (std::size_t i = 0; i < t.length(); ++i) store.indices.push_back(i);
      store.frames = t.branches[data::kVisualBranch].frames;
      data::write_frame_store(tdir / "frames.bin", store);
    } else {
      dsp::write_feature_sequence(tdir / "visual.bin", t.branches[data::kVisualBranch]);
    }
    dsp::write_feature_sequence(tdir / "vggish.bin", t.branches[data::kVggishBranch]);
    dsp::write_feature_sequence(tdir / "mfcc.bin", t.branches[data::kMfccBranch]);
    entries.push_back({t.trial_id, t.trial_id, "train", std::nullopt});
  }
  const fs::path manifest = dir / "manifest.json";
  data::write_manifest(manifest, entries);
  return manifest;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("vafuse-test-" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace fixture
