#pragma once

#include "vafuse/tensor.hpp"
#include "vafuse/wav.hpp"

#include <cstdint>
#include <filesystem>
#include <string>

namespace vafuse::dsp {

/// Short-time analysis settings shared by the log-mel and MFCC paths.
/// Defaults follow the VGGish front-end except `hop`, which is tied to the
/// label rate so that one feature frame lands on each annotated video frame.
struct MelConfig {
  std::size_t n_fft = 400;  // 25 ms at 16 kHz
  std::size_t hop = 533;    // 16000 / 30 fps
  std::size_t n_mels = 64;
  double fmin = 125.0;
  double fmax = 7500.0;
  double log_offset = 0.01;

  /// Hop rounded to the nearest sample count for a given label rate.
  static MelConfig for_label_rate(double label_rate_hz, int sample_rate = kSampleRate);
  void validate(int sample_rate = kSampleRate) const;
};

enum class Modality { Visual, VisualFrames, Vggish, Mfcc, LogMel };

std::string to_string(Modality m);
Modality modality_from_string(const std::string& name);

/// Per-frame features of one branch: frames[T, D] (or [T, 3, 48, 48] for raw
/// visual frames).
struct FeatureSequence {
  Tensor frames;
  double frame_rate = 30.0;
  Modality modality = Modality::Visual;

  std::size_t length() const { return frames.dim(0); }
};

inline constexpr std::size_t kVisualDim = 512;
inline constexpr std::size_t kVggishDim = 128;
inline constexpr std::size_t kMfccDim = 39;
inline constexpr std::size_t kMfccStatic = 13;

/// Periodic-Hann windowed |DFT|^2, one-sided: [T, n_fft/2 + 1] with
/// T = 1 + floor((len - n_fft) / hop).
Tensor power_spectrogram(const AudioClip& clip, std::size_t n_fft, std::size_t hop);

/// Triangular mel filters [n_mels, n_fft/2 + 1]. Centers are equally spaced
/// on mel(f) = 2595 log10(1 + f/700) and snapped to the nearest FFT bin, so
/// every filter reaches exactly 1 at its center bin.
Tensor mel_filterbank(const MelConfig& config, int sample_rate = kSampleRate);

/// FFT bin index of each of the n_mels + 2 mel-spaced edge/center points.
std::vector<std::size_t> mel_points_in_bins(const MelConfig& config, int sample_rate = kSampleRate);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

FeatureSequence log_mel(const AudioClip& clip, const MelConfig& config);

/// Orthonormal DCT-II of each row of `frames`, keeping the first `count` coefficients.
Tensor dct_ii(const Tensor& frames, std::size_t count);

/// Regression deltas over +/-2 frames with edge replication.
Tensor deltas(const Tensor& frames);

/// [13 static | 13 delta | 13 delta-delta] per frame.
FeatureSequence mfcc39(const AudioClip& clip, const MelConfig& config);
FeatureSequence mfcc39_from_log_mel(const FeatureSequence& log_mel);

/// Stand-in for the 128-d VGGish embedding: a fixed seeded Gaussian
/// projection of the trailing `patch_frames` log-mel frames (start edge
/// replicated). Not a pretrained network.
struct VggishStandIn {
  std::size_t patch_frames = 96;
  std::uint64_t seed = 0x76676769;
};
FeatureSequence vggish_standin(const FeatureSequence& log_mel, const VggishStandIn& config = {});

/// Writes `<stem>.bin` (tensor container, entry "features") and the sidecar
/// `<stem>.json` {modality, frame_rate, dims}.
void write_feature_sequence(const std::filesystem::path& bin_path, const FeatureSequence& seq);
FeatureSequence read_feature_sequence(const std::filesystem::path& bin_path);

}  // namespace vafuse::dsp
