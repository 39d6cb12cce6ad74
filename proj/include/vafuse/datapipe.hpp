#pragma once

#include "vafuse/dsp.hpp"
#include "vafuse/tensor.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace vafuse::data {

/// Annotation value marking a frame as unannotated.
inline constexpr double kUnannotated = -5.0;

struct AnnotationSeq {
  std::vector<double> valence;
  std::vector<double> arousal;
  std::vector<std::size_t> original_indices;  // row number in the source file, header excluded
  std::size_t total_rows = 0;

  std::size_t size() const { return valence.size(); }
  bool empty() const { return valence.empty(); }
};

/// Parses "valence,arousal" lines after one header line. Rows holding -5 in
/// either column are dropped.
AnnotationSeq parse_annotations(std::string_view text);

/// Pads by repeating the final row or trims from the rear along axis 0.
Tensor reconcile_rows(const Tensor& rows, std::size_t target_len);
dsp::FeatureSequence reconcile_length(const dsp::FeatureSequence& features, std::size_t target_len);

struct FilledFrames {
  Tensor frames;
  std::vector<bool> fill_mask;
};

/// Expands `present_frames` (rows aligned with `present_positions`, ascending)
/// to `length` rows. Gaps copy the nearest preceding present frame; leading
/// gaps copy the first present frame.
FilledFrames fill_missing_frames(std::size_t length, std::span<const std::size_t> present_positions,
                                 const Tensor& present_frames);

enum Branch : std::size_t { kVisualBranch = 0, kVggishBranch = 1, kMfccBranch = 2 };

struct AlignedTrial {
  std::string trial_id;
  std::array<dsp::FeatureSequence, 3> branches;  // visual, vggish, mfcc
  AnnotationSeq labels;
  std::vector<bool> fill_mask;
  bool has_labels = true;

  std::size_t length() const { return branches[kVisualBranch].length(); }
  /// Throws ContractError unless every branch, the labels and the mask agree in length.
  void check_aligned() const;
};

struct WindowSpec {
  std::size_t window_len = 300;
  std::size_t stride = 200;

  void validate() const;
};

struct TrialWindow {
  std::string trial_id;
  std::size_t offset = 0;
  std::size_t valid_len = 0;  // frames before tail padding
  std::array<Tensor, 3> branches;
  std::vector<double> valence;
  std::vector<double> arousal;
  std::vector<bool> loss_mask;  // false on padded or filled frames

  std::size_t length() const { return branches[kVisualBranch].dim(0); }
};

/// Train mode: offsets 0, stride, 2*stride, ... for full windows, then one
/// tail window at the next stride offset if frames remain past it. A trial
/// no longer than the window yields a single window. Eval mode: a
/// non-overlapping cover at multiples of window_len. Short windows are
/// padded to window_len with reconcile_rows.
std::vector<TrialWindow> window_resample(const AlignedTrial& trial, const WindowSpec& spec, Mode mode);

/// Inverse of eval-mode windowing: stitches each window's unpadded
/// predictions back into a length-`length` stream.
std::vector<double> reassemble(std::span<const TrialWindow> windows,
                               std::span<const std::vector<double>> window_predictions, std::size_t length);

struct FoldPlan {
  std::vector<std::pair<std::string, int>> assignment;
  std::uint64_t seed = 0;

  static constexpr int kFolds = 6;
  int fold_of(const std::string& trial_id) const;
  std::vector<std::string> trials_in(int fold) const;
  std::vector<std::string> trials_not_in(int fold) const;
};

/// Seeded shuffle followed by round-robin assignment to folds 0..5.
FoldPlan make_folds(std::vector<std::string> trial_ids, std::uint64_t seed);

struct ManifestEntry {
  std::string trial_id;
  std::filesystem::path path;  // resolved against the manifest's directory
  std::string split_hint;
  std::optional<std::size_t> num_frames;
};

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& manifest);
void write_manifest(const std::filesystem::path& manifest, std::span<const ManifestEntry> entries);

/// Raw cropped-face frames of one trial as stored in `frames.bin`: only the
/// frames that exist, keyed by their original frame number.
struct FrameStore {
  std::size_t total_frames = 0;
  std::vector<std::size_t> indices;
  Tensor frames;  // [N, 3, 48, 48]
  double frame_rate = 30.0;
};

inline constexpr std::size_t kFrameChannels = 3;
inline constexpr std::size_t kFrameSide = 48;

void write_frame_store(const std::filesystem::path& bin_path, const FrameStore& store);
FrameStore read_frame_store(const std::filesystem::path& bin_path);

struct LoadOptions {
  dsp::MelConfig mel;
  dsp::VggishStandIn vggish;
};

/// Loads one trial directory (labels.csv; frames.bin or visual.bin; audio.wav
/// or vggish.bin + mfcc.bin) and aligns every branch to the label count.
/// Returns nullopt, with a warning, for trials whose annotations are all -5.
std::optional<AlignedTrial> load_trial(const ManifestEntry& entry, const LoadOptions& options = {});
std::vector<AlignedTrial> load_trials(std::span<const ManifestEntry> entries, const LoadOptions& options = {});

}  // namespace vafuse::data
