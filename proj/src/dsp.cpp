#include "vafuse/dsp.hpp"

#include "vafuse/container.hpp"
#include "vafuse/error.hpp"
#include "vafuse/rng.hpp"

#include <unsupported/Eigen/FFT>

#include "json.hpp"

#include <cmath>
#include <complex>
#include <fstream>
#include <numbers>

namespace vafuse::dsp {
namespace {

Eigen::Index ix(std::size_t n) { return static_cast<Eigen::Index>(n); }

std::filesystem::path sidecar_path(const std::filesystem::path& bin_path) {
  auto p = bin_path;
  p.replace_extension(".json");
  return p;
}

}  // namespace

MelConfig MelConfig::for_label_rate(double label_rate_hz, int sample_rate) {
  if (!(label_rate_hz > 0.0)) throw ConfigError("label rate must be positive");
  MelConfig cfg;
  cfg.hop = static_cast<std::size_t>(std::llround(static_cast<double>(sample_rate) / label_rate_hz));
  return cfg;
}

void MelConfig::validate(int sample_rate) const {
  const double nyquist = sample_rate / 2.0;
  if (n_fft < 2) throw ConfigError("n_fft must be >= 2");
  if (hop < 1) throw ConfigError("hop must be >= 1");
  if (n_mels < 2) throw ConfigError("n_mels must be >= 2");
  if (!(fmin >= 0.0 && fmin < fmax)) throw ConfigError("mel range needs 0 <= fmin < fmax");
  if (fmax > nyquist) {
    throw ConfigError("fmax " + std::to_string(fmax) + " Hz exceeds Nyquist " + std::to_string(nyquist) + " Hz");
  }
  if (!(log_offset > 0.0)) throw ConfigError("log_offset must be positive");
}

std::string to_string(Modality m) {
  switch (m) {
    case Modality::Visual: return "visual";
    case Modality::VisualFrames: return "visual_frames";
    case Modality::Vggish: return "vggish";
    case Modality::Mfcc: return "mfcc";
    case Modality::LogMel: return "logmel";
  }
  return "unknown";
}

Modality modality_from_string(const std::string& name) {
  for (auto m : {Modality::Visual, Modality::VisualFrames, Modality::Vggish, Modality::Mfcc, Modality::LogMel}) {
    if (to_string(m) == name) return m;
  }
  throw DataError("unknown modality '" + name + "'");
}

Tensor power_spectrogram(const AudioClip& clip, std::size_t n_fft, std::size_t hop) {
  validate_clip(clip);
  if (n_fft < 2 || hop < 1) throw ConfigError("power_spectrogram: need n_fft >= 2 and hop >= 1");
  if (clip.samples.size() < n_fft) {
    throw DataError("clip of " + std::to_string(clip.samples.size()) + " samples is shorter than one " +
                    std::to_string(n_fft) + "-sample frame");
  }
  const std::size_t frames = 1 + (clip.samples.size() - n_fft) / hop;
  const std::size_t bins = n_fft / 2 + 1;
  std::vector<double> window(n_fft);
  for (std::size_t n = 0; n < n_fft; ++n) {
    window[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) / static_cast<double>(n_fft));
  }
  Eigen::FFT<double> fft;
  std::vector<double> buffer(n_fft);
  std::vector<std::complex<double>> spectrum;
  std::vector<double> out(frames * bins);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t n = 0; n < n_fft; ++n) buffer[n] = clip.samples[t * hop + n] * window[n];
    fft.fwd(spectrum, buffer);
    for (std::size_t k = 0; k < bins; ++k) out[t * bins + k] = std::norm(spectrum[k]);
  }
  return Tensor({frames, bins}, std::move(out));
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<std::size_t> mel_points_in_bins(const MelConfig& config, int sample_rate) {
  config.validate(sample_rate);
  const double lo = hz_to_mel(config.fmin), hi = hz_to_mel(config.fmax);
  std::vector<std::size_t> points(config.n_mels + 2);
  for (std::size_t i = 0; i < points.size(); ++i) {
    const double mel = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(config.n_mels + 1);
    const double bin = mel_to_hz(mel) * static_cast<double>(config.n_fft) / static_cast<double>(sample_rate);
    points[i] = static_cast<std::size_t>(std::llround(bin));
  }
  return points;
}

Tensor mel_filterbank(const MelConfig& config, int sample_rate) {
  const auto points = mel_points_in_bins(config, sample_rate);
  const std::size_t bins = config.n_fft / 2 + 1;
  std::vector<double> fb(config.n_mels * bins, 0.0);
  for (std::size_t m = 0; m < config.n_mels; ++m) {
    const double left = static_cast<double>(points[m]);
    const double center = static_cast<double>(points[m + 1]);
    const double right = static_cast<double>(points[m + 2]);
    for (std::size_t b = 0; b < bins; ++b) {
      const double x = static_cast<double>(b);
      double w = 0.0;
      if (b == points[m + 1]) {
        w = 1.0;
      } else if (x > left && x < center) {
        w = (x - left) / (center - left);
      } else if (x > center && x < right) {
        w = (right - x) / (right - center);
      }
      fb[m * bins + b] = w;
    }
  }
  return Tensor({config.n_mels, bins}, std::move(fb));
}

FeatureSequence log_mel(const AudioClip& clip, const MelConfig& config) {
  config.validate(clip.sample_rate);
  const Tensor power = power_spectrogram(clip, config.n_fft, config.hop);
  const Tensor fb = mel_filterbank(config, clip.sample_rate);
  const std::size_t frames = power.dim(0);
  std::vector<double> out(frames * config.n_mels);
  MatrixMap energies(out.data(), ix(frames), ix(config.n_mels));
  energies.noalias() = power.matrix() * fb.matrix().transpose();
  energies = (energies.array() + config.log_offset).log().matrix();
  return {Tensor({frames, config.n_mels}, std::move(out)),
          static_cast<double>(clip.sample_rate) / static_cast<double>(config.hop), Modality::LogMel};
}

Tensor dct_ii(const Tensor& frames, std::size_t count) {
  if (frames.rank() != 2) throw DimensionError("dct_ii expects [T, N], got " + vafuse::to_string(frames.shape()));
  const std::size_t n = frames.dim(1);
  if (count < 1 || count > n) throw ConfigError("dct_ii: cannot keep " + std::to_string(count) + " of " + std::to_string(n));
  RowMatrix basis(ix(count), ix(n));
  for (std::size_t k = 0; k < count; ++k) {
    const double s = std::sqrt((k == 0 ? 1.0 : 2.0) / static_cast<double>(n));
    for (std::size_t j = 0; j < n; ++j) {
      basis(ix(k), ix(j)) = s * std::cos(std::numbers::pi * static_cast<double>(k) * (2.0 * static_cast<double>(j) + 1.0) /
                                         (2.0 * static_cast<double>(n)));
    }
  }
  std::vector<double> out(frames.dim(0) * count);
  MatrixMap(out.data(), ix(frames.dim(0)), ix(count)).noalias() = frames.matrix() * basis.transpose();
  return Tensor({frames.dim(0), count}, std::move(out));
}

Tensor deltas(const Tensor& frames) {
  if (frames.rank() != 2) throw DimensionError("deltas expects [T, D], got " + vafuse::to_string(frames.shape()));
  const std::size_t t_len = frames.dim(0), d = frames.dim(1);
  const auto v = frames.data();
  const auto row = [&](long t) {
    return static_cast<std::size_t>(std::clamp<long>(t, 0, static_cast<long>(t_len) - 1));
  };
  constexpr double kNorm = 2.0 * (1.0 * 1.0 + 2.0 * 2.0);
  std::vector<double> out(t_len * d, 0.0);
  for (std::size_t t = 0; t < t_len; ++t) {
    const long tl = static_cast<long>(t);
    for (std::size_t j = 0; j < d; ++j) {
      double acc = 0.0;
      for (long n = 1; n <= 2; ++n) {
        acc += static_cast<double>(n) * (v[row(tl + n) * d + j] - v[row(tl - n) * d + j]);
      }
      out[t * d + j] = acc / kNorm;
    }
  }
  return Tensor({t_len, d}, std::move(out));
}

FeatureSequence mfcc39_from_log_mel(const FeatureSequence& log_mel) {
  const Tensor statics = dct_ii(log_mel.frames, kMfccStatic);
  const Tensor d1 = deltas(statics);
  const Tensor d2 = deltas(d1);
  const std::size_t t_len = statics.dim(0);
  std::vector<double> out(t_len * kMfccDim);
  for (std::size_t t = 0; t < t_len; ++t) {
    for (std::size_t j = 0; j < kMfccStatic; ++j) {
      out[t * kMfccDim + j] = statics.at(t * kMfccStatic + j);
      out[t * kMfccDim + kMfccStatic + j] = d1.at(t * kMfccStatic + j);
      out[t * kMfccDim + 2 * kMfccStatic + j] = d2.at(t * kMfccStatic + j);
    }
  }
  return {Tensor({t_len, kMfccDim}, std::move(out)), log_mel.frame_rate, Modality::Mfcc};
}

FeatureSequence mfcc39(const AudioClip& clip, const MelConfig& config) {
  return mfcc39_from_log_mel(log_mel(clip, config));
}

FeatureSequence vggish_standin(const FeatureSequence& log_mel, const VggishStandIn& config) {
  if (log_mel.frames.rank() != 2) throw DimensionError("vggish_standin expects log-mel [T, n_mels]");
  if (config.patch_frames < 1) throw ConfigError("vggish_standin: patch_frames must be >= 1");
  const std::size_t t_len = log_mel.frames.dim(0), n_mels = log_mel.frames.dim(1);
  const std::size_t patch = config.patch_frames * n_mels;
  CounterRng rng(config.seed, "vggish_standin");
  RowMatrix projection(ix(kVggishDim), ix(patch));
  const double s = 1.0 / std::sqrt(static_cast<double>(patch));
  for (Eigen::Index i = 0; i < projection.size(); ++i) projection.data()[i] = rng.normal() * s;

  const auto v = log_mel.frames.data();
  Eigen::VectorXd buffer(ix(patch));
  std::vector<double> out(t_len * kVggishDim);
  for (std::size_t t = 0; t < t_len; ++t) {
    for (std::size_t p = 0; p < config.patch_frames; ++p) {
      const long src = static_cast<long>(t) - static_cast<long>(config.patch_frames - 1 - p);
      const std::size_t row = src < 0 ? 0 : static_cast<std::size_t>(src);
      for (std::size_t j = 0; j < n_mels; ++j) buffer(ix(p * n_mels + j)) = v[row * n_mels + j];
    }
    Eigen::Map<Eigen::VectorXd>(out.data() + t * kVggishDim, ix(kVggishDim)).noalias() = projection * buffer;
  }
  return {Tensor({t_len, kVggishDim}, std::move(out)), log_mel.frame_rate, Modality::Vggish};
}

void write_feature_sequence(const std::filesystem::path& bin_path, const FeatureSequence& seq) {
  write_container(bin_path, {to_named("features", seq.frames)});
  nlohmann::json meta;
  meta["modality"] = to_string(seq.modality);
  meta["frame_rate"] = seq.frame_rate;
  meta["dims"] = std::vector<std::size_t>(seq.frames.shape().begin() + 1, seq.frames.shape().end());
  std::ofstream os(sidecar_path(bin_path));
  if (!os) throw DataError("cannot write " + sidecar_path(bin_path).string());
  os << meta.dump(2) << '\n';
}

FeatureSequence read_feature_sequence(const std::filesystem::path& bin_path) {
  const auto entries = read_container(bin_path);
  const auto it = std::find_if(entries.begin(), entries.end(), [](const auto& e) { return e.name == "features"; });
  if (it == entries.end()) throw DataError(bin_path.string() + ": no 'features' entry");
  FeatureSequence seq{to_tensor(*it), 30.0, Modality::Visual};
  std::ifstream is(sidecar_path(bin_path));
  if (!is) throw DataError("missing descriptor " + sidecar_path(bin_path).string());
  try {
    const auto meta = nlohmann::json::parse(is);
    seq.modality = modality_from_string(meta.at("modality").get<std::string>());
    seq.frame_rate = meta.at("frame_rate").get<double>();
    const auto dims = meta.at("dims").get<std::vector<std::size_t>>();
    if (Shape(seq.frames.shape().begin() + 1, seq.frames.shape().end()) != dims) {
      throw DataError(bin_path.string() + ": descriptor dims disagree with stored shape " +
                      vafuse::to_string(seq.frames.shape()));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(sidecar_path(bin_path).string() + ": " + e.what());
  }
  return seq;
}

}  // namespace vafuse::dsp
