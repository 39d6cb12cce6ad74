#include "vafuse/datapipe.hpp"

#include "vafuse/container.hpp"
#include "vafuse/error.hpp"
#include "vafuse/ops.hpp"
#include "vafuse/rng.hpp"

#include "json.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

namespace vafuse::data {
namespace fs = std::filesystem;
namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

double parse_value(std::string_view field, std::size_t line) {
  field = trim(field);
  if (!field.empty() && field.front() == '+') field.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || ptr != field.data() + field.size() || field.empty()) {
    throw ParseError(line, "malformed number '" + std::string(field) + "'");
  }
  return v;
}

std::string slurp(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

fs::path descriptor_of(fs::path bin) { return bin.replace_extension(".json"); }

}  // namespace

AnnotationSeq parse_annotations(std::string_view text) {
  AnnotationSeq seq;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (!header_seen) {
      header_seen = true;
      continue;
    }
    line = trim(line);
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string_view::npos || line.find(',', comma + 1) != std::string_view::npos) {
      throw ParseError(line_no, "expected 'valence,arousal', got '" + std::string(line) + "'");
    }
    const double v = parse_value(line.substr(0, comma), line_no);
    const double a = parse_value(line.substr(comma + 1), line_no);
    const std::size_t row = seq.total_rows++;
    for (double x : {v, a}) {
      if (x != kUnannotated && !(x >= -1.0 && x <= 1.0)) {
        throw RangeError("line " + std::to_string(line_no) + ": value " + std::to_string(x) +
                         " outside [-1,1] and not the -5 marker");
      }
    }
    if (v == kUnannotated || a == kUnannotated) continue;
    seq.valence.push_back(v);
    seq.arousal.push_back(a);
    seq.original_indices.push_back(row);
  }
  if (seq.empty()) spdlog::warn("annotation file has no usable rows ({} rows, all unannotated)", seq.total_rows);
  return seq;
}

Tensor reconcile_rows(const Tensor& rows, std::size_t target_len) {
  if (!rows.defined()) throw ContractError("reconcile_length: empty feature sequence");
  if (target_len < 1) throw ContractError("reconcile_length: target length must be >= 1");
  const std::size_t t_len = rows.dim(0);
  if (t_len == target_len) return rows;
  const std::size_t stride = rows.size() / t_len;
  std::vector<double> out(target_len * stride);
  const auto v = rows.data();
  const std::size_t kept = std::min(t_len, target_len);
  std::copy_n(v.begin(), kept * stride, out.begin());
  for (std::size_t t = kept; t < target_len; ++t) {
    std::copy_n(v.begin() + static_cast<std::ptrdiff_t>((t_len - 1) * stride), stride,
                out.begin() + static_cast<std::ptrdiff_t>(t * stride));
  }
  Shape shape = rows.shape();
  shape[0] = target_len;
  return Tensor(std::move(shape), std::move(out));
}

dsp::FeatureSequence reconcile_length(const dsp::FeatureSequence& features, std::size_t target_len) {
  return {reconcile_rows(features.frames, target_len), features.frame_rate, features.modality};
}

FilledFrames fill_missing_frames(std::size_t length, std::span<const std::size_t> present_positions,
                                 const Tensor& present_frames) {
  if (present_positions.empty()) throw ContractError("fill_missing_frames: no frame is present");
  if (!present_frames.defined() || present_frames.dim(0) != present_positions.size()) {
    throw ContractError("fill_missing_frames: positions and frames disagree");
  }
  const std::size_t stride = present_frames.size() / present_frames.dim(0);
  std::vector<double> out(length * stride);
  std::vector<bool> mask(length, true);
  const auto v = present_frames.data();
  std::vector<long> source(length, -1);
  for (std::size_t k = 0; k < present_positions.size(); ++k) {
    const auto pos = present_positions[k];
    if (pos >= length) throw ContractError("fill_missing_frames: position " + std::to_string(pos) + " out of range");
    if (k > 0 && pos <= present_positions[k - 1]) throw ContractError("fill_missing_frames: positions must ascend");
    source[pos] = static_cast<long>(k);
    mask[pos] = false;
  }
  long last = 0;  // leading gaps take the first present frame
  for (std::size_t t = 0; t < length; ++t) {
    if (source[t] >= 0) last = source[t];
    std::copy_n(v.begin() + last * static_cast<long>(stride), stride, out.begin() + static_cast<long>(t * stride));
  }
  Shape shape = present_frames.shape();
  shape[0] = length;
  return {Tensor(std::move(shape), std::move(out)), std::move(mask)};
}

void AlignedTrial::check_aligned() const {
  const std::size_t t = length();
  for (const auto& b : branches) {
    if (b.length() != t) throw ContractError("trial '" + trial_id + "': branch lengths differ");
  }
  if ((has_labels && labels.size() != t) || fill_mask.size() != t) {
    throw ContractError("trial '" + trial_id + "': labels or fill mask length differ from features");
  }
}

void WindowSpec::validate() const {
  if (window_len < 1 || stride < 1 || stride > window_len) {
    throw ConfigError("window spec needs 1 <= stride <= window_len");
  }
}

std::vector<TrialWindow> window_resample(const AlignedTrial& trial, const WindowSpec& spec, Mode mode) {
  spec.validate();
  const std::size_t t_len = trial.length();
  if (t_len < 1) throw ContractError("window_resample: empty trial");
  std::vector<std::size_t> offsets;
  if (mode == Mode::Eval) {
    for (std::size_t o = 0; o < t_len; o += spec.window_len) offsets.push_back(o);
  } else if (t_len <= spec.window_len) {
    offsets.push_back(0);
  } else {
    std::size_t o = 0;
    for (; o + spec.window_len <= t_len; o += spec.stride) offsets.push_back(o);
    if (o < t_len) offsets.push_back(o);
  }

  std::vector<TrialWindow> windows;
  windows.reserve(offsets.size());
  for (const auto offset : offsets) {
    TrialWindow w;
    w.trial_id = trial.trial_id;
    w.offset = offset;
    w.valid_len = std::min(spec.window_len, t_len - offset);
    for (std::size_t b = 0; b < 3; ++b) {
      w.branches[b] = reconcile_rows(slice_rows(trial.branches[b].frames, offset, w.valid_len), spec.window_len);
    }
    w.valence.resize(spec.window_len);
    w.arousal.resize(spec.window_len);
    w.loss_mask.assign(spec.window_len, false);
    for (std::size_t i = 0; i < spec.window_len; ++i) {
      const std::size_t src = offset + std::min(i, w.valid_len - 1);
      if (trial.has_labels) {
        w.valence[i] = trial.labels.valence[src];
        w.arousal[i] = trial.labels.arousal[src];
      }
      w.loss_mask[i] = trial.has_labels && i < w.valid_len && !trial.fill_mask[src];
    }
    windows.push_back(std::move(w));
  }
  return windows;
}

std::vector<double> reassemble(std::span<const TrialWindow> windows,
                               std::span<const std::vector<double>> window_predictions, std::size_t length) {
  if (windows.size() != window_predictions.size()) throw ContractError("reassemble: window/prediction count mismatch");
  std::vector<double> out(length, 0.0);
  std::vector<bool> written(length, false);
  for (std::size_t k = 0; k < windows.size(); ++k) {
    const auto& w = windows[k];
    if (window_predictions[k].size() < w.valid_len) throw ContractError("reassemble: prediction shorter than window");
    for (std::size_t i = 0; i < w.valid_len; ++i) {
      if (w.offset + i >= length) throw ContractError("reassemble: window exceeds trial length");
      out[w.offset + i] = window_predictions[k][i];
      written[w.offset + i] = true;
    }
  }
  if (std::find(written.begin(), written.end(), false) != written.end()) {
    throw ContractError("reassemble: windows do not cover the trial");
  }
  return out;
}

int FoldPlan::fold_of(const std::string& trial_id) const {
  for (const auto& [id, fold] : assignment)
    if (id == trial_id) return fold;
  throw ContractError("trial '" + trial_id + "' is not in the fold plan");
}

std::vector<std::string> FoldPlan::trials_in(int fold) const {
  std::vector<std::string> out;
  for (const auto& [id, f] : assignment)
    if (f == fold) out.push_back(id);
  return out;
}

std::vector<std::string> FoldPlan::trials_not_in(int fold) const {
  std::vector<std::string> out;
  for (const auto& [id, f] : assignment)
    if (f != fold) out.push_back(id);
  return out;
}

FoldPlan make_folds(std::vector<std::string> trial_ids, std::uint64_t seed) {
  if (trial_ids.size() < static_cast<std::size_t>(FoldPlan::kFolds)) {
    throw ContractError("six-fold split needs at least 6 trials, got " + std::to_string(trial_ids.size()));
  }
  auto sorted = trial_ids;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw ContractError("make_folds: duplicate trial ids");
  }
  FoldPlan plan;
  plan.seed = seed;
  const auto perm = seeded_permutation(trial_ids.size(), seed);
  for (std::size_t i = 0; i < perm.size(); ++i) {
    plan.assignment.emplace_back(trial_ids[perm[i]], static_cast<int>(i % FoldPlan::kFolds));
  }
  return plan;
}

std::vector<ManifestEntry> read_manifest(const fs::path& manifest) {
  const auto base = manifest.parent_path();
  std::vector<ManifestEntry> entries;
  try {
    const auto doc = nlohmann::json::parse(slurp(manifest));
    if (!doc.is_array()) throw DataError(manifest.string() + ": manifest must be a JSON list");
    for (const auto& item : doc) {
      ManifestEntry e;
      e.trial_id = item.at("trial_id").get<std::string>();
      const fs::path p = item.at("path").get<std::string>();
      e.path = p.is_absolute() ? p : base / p;
      e.split_hint = item.value("split_hint", std::string{});
      if (item.contains("num_frames")) e.num_frames = item.at("num_frames").get<std::size_t>();
      entries.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(manifest.string() + ": " + e.what());
  }
  return entries;
}

void write_manifest(const fs::path& manifest, std::span<const ManifestEntry> entries) {
  nlohmann::ordered_json doc = nlohmann::ordered_json::array();
  for (const auto& e : entries) {
    nlohmann::ordered_json item;
    item["trial_id"] = e.trial_id;
    item["path"] = e.path.string();
    item["split_hint"] = e.split_hint;
    if (e.num_frames) item["num_frames"] = *e.num_frames;
    doc.push_back(std::move(item));
  }
  std::ofstream os(manifest);
  if (!os) throw DataError("cannot write " + manifest.string());
  os << doc.dump(2) << '\n';
}

void write_frame_store(const fs::path& bin_path, const FrameStore& store) {
  std::vector<double> idx(store.indices.begin(), store.indices.end());
  write_container(bin_path, {to_named("frames", store.frames), {"indices", {idx.size()}, idx}});
  nlohmann::ordered_json meta;
  meta["modality"] = dsp::to_string(dsp::Modality::VisualFrames);
  meta["frame_rate"] = store.frame_rate;
  meta["dims"] = std::vector<std::size_t>(store.frames.shape().begin() + 1, store.frames.shape().end());
  meta["total_frames"] = store.total_frames;
  std::ofstream os(descriptor_of(bin_path));
  os << meta.dump(2) << '\n';
}

FrameStore read_frame_store(const fs::path& bin_path) {
  FrameStore store;
  const auto entries = read_container(bin_path);
  for (const auto& e : entries) {
    if (e.name == "frames") store.frames = to_tensor(e);
    if (e.name == "indices") {
      for (double d : e.values) store.indices.push_back(static_cast<std::size_t>(d));
    }
  }
  if (!store.frames.defined()) throw DataError(bin_path.string() + ": no 'frames' entry");
  if (store.indices.size() != store.frames.dim(0)) throw DataError(bin_path.string() + ": frame/index count mismatch");
  const Shape expected{kFrameChannels, kFrameSide, kFrameSide};
  if (Shape(store.frames.shape().begin() + 1, store.frames.shape().end()) != expected) {
    throw DataError(bin_path.string() + ": frames must be 3x48x48, got " + to_string(store.frames.shape()));
  }
  try {
    const auto meta = nlohmann::json::parse(slurp(descriptor_of(bin_path)));
    store.total_frames = meta.at("total_frames").get<std::size_t>();
    store.frame_rate = meta.value("frame_rate", 30.0);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(descriptor_of(bin_path).string() + ": " + e.what());
  }
  return store;
}

std::optional<AlignedTrial> load_trial(const ManifestEntry& entry, const LoadOptions& options) {
  const fs::path dir = entry.path;
  AlignedTrial trial;
  trial.trial_id = entry.trial_id;
  std::vector<std::size_t> kept_rows;
  if (fs::exists(dir / "labels.csv")) {
    try {
      trial.labels = parse_annotations(slurp(dir / "labels.csv"));
    } catch (const DataError& e) {
      throw DataError((dir / "labels.csv").string() + ": " + e.what());
    }
    if (trial.labels.empty()) {
      spdlog::warn("skipping trial '{}': every annotation row is -5", entry.trial_id);
      return std::nullopt;
    }
    kept_rows = trial.labels.original_indices;
  } else if (entry.num_frames) {
    trial.has_labels = false;
    kept_rows.resize(*entry.num_frames);
    for (std::size_t i = 0; i < kept_rows.size(); ++i) kept_rows[i] = i;
  } else {
    throw DataError("trial '" + entry.trial_id + "' has neither labels.csv nor num_frames");
  }
  const std::size_t t_len = kept_rows.size();
  if (t_len == 0) throw DataError("trial '" + entry.trial_id + "' has zero frames");

  auto& visual = trial.branches[kVisualBranch];
  if (fs::exists(dir / "visual.bin")) {
    visual = reconcile_length(dsp::read_feature_sequence(dir / "visual.bin"), t_len);
    trial.fill_mask.assign(t_len, false);
  } else if (fs::exists(dir / "frames.bin")) {
    const auto store = read_frame_store(dir / "frames.bin");
    std::vector<std::size_t> positions, rows;
    std::size_t k = 0;
    for (std::size_t i = 0; i < t_len; ++i) {
      while (k < store.indices.size() && store.indices[k] < kept_rows[i]) ++k;
      if (k < store.indices.size() && store.indices[k] == kept_rows[i]) {
        positions.push_back(i);
        rows.push_back(k);
      }
    }
    if (positions.empty()) throw DataError("trial '" + entry.trial_id + "' has no frame for any annotated row");
    auto filled = fill_missing_frames(t_len, positions, index_rows(store.frames, rows).detach());
    visual = {std::move(filled.frames), store.frame_rate, dsp::Modality::VisualFrames};
    trial.fill_mask = std::move(filled.fill_mask);
  } else {
    throw DataError("trial '" + entry.trial_id + "' has neither visual.bin nor frames.bin");
  }

  auto& vggish = trial.branches[kVggishBranch];
  auto& mfcc = trial.branches[kMfccBranch];
  if (fs::exists(dir / "vggish.bin") && fs::exists(dir / "mfcc.bin")) {
    vggish = dsp::read_feature_sequence(dir / "vggish.bin");
    mfcc = dsp::read_feature_sequence(dir / "mfcc.bin");
  } else if (fs::exists(dir / "audio.wav")) {
    const auto clip = dsp::read_wav(dir / "audio.wav");
    const auto mel = dsp::log_mel(clip, options.mel);
    vggish = dsp::vggish_standin(mel, options.vggish);
    mfcc = dsp::mfcc39_from_log_mel(mel);
  } else {
    throw DataError("trial '" + entry.trial_id + "' has no audio.wav and no precomputed vggish.bin/mfcc.bin");
  }
  vggish = reconcile_length(vggish, t_len);
  mfcc = reconcile_length(mfcc, t_len);
  trial.check_aligned();
  return trial;
}

std::vector<AlignedTrial> load_trials(std::span<const ManifestEntry> entries, const LoadOptions& options) {
  std::vector<AlignedTrial> trials;
  for (const auto& e : entries) {
    if (auto t = load_trial(e, options)) trials.push_back(std::move(*t));
  }
  return trials;
}

}  // namespace vafuse::data
