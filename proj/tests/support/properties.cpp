#include "properties.hpp"

#include "vafuse/datapipe.hpp"
#include "vafuse/rng.hpp"

#include <cstdio>
#include <set>

namespace props {
using namespace vafuse;

namespace {

Tensor random_rows(CounterRng& rng, std::size_t rows, std::size_t width) {
  std::vector<double> v(rows * width);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return Tensor({rows, width}, std::move(v));
}

std::string describe(const char* what, std::size_t a, std::size_t b) {
  return std::string(what) + " (" + std::to_string(a) + ", " + std::to_string(b) + ")";
}

}  // namespace

Result reconcile_idempotence(std::size_t cases, std::uint64_t seed) {
  Result r;
  CounterRng rng(seed, "prop.reconcile");
  for (; r.cases < cases; ++r.cases) {
    const std::size_t t_len = 1 + rng.below(60), target = 1 + rng.below(60), width = 1 + rng.below(5);
    const dsp::FeatureSequence seq{random_rows(rng, t_len, width), 30.0, dsp::Modality::Mfcc};
    const auto once = data::reconcile_length(seq, target);
    const auto twice = data::reconcile_length(once, target);
    if (once.length() != target) {
      r.fail(describe("wrong length for (T, target)", t_len, target));
      continue;
    }
    if (twice.frames.to_vector() != once.frames.to_vector()) {
      r.fail(describe("not idempotent for (T, target)", t_len, target));
      continue;
    }
    if (t_len == target && once.frames.node() != seq.frames.node() &&
        once.frames.to_vector() != seq.frames.to_vector()) {
      r.fail(describe("not identity at target for (T, target)", t_len, target));
      continue;
    }
    const auto in = seq.frames.data();
    const auto out = once.frames.data();
    for (std::size_t t = 0; t < target; ++t) {
      const std::size_t src = std::min(t, t_len - 1);  // trim from the rear, pad with the last row
      for (std::size_t j = 0; j < width; ++j) {
        if (out[t * width + j] != in[src * width + j]) {
          r.fail(describe("pad/trim rule broken for (T, target)", t_len, target));
          t = target;
          break;
        }
      }
    }
  }
  return r;
}

Result unannotated_exclusion(std::size_t cases, std::uint64_t seed) {
  Result r;
  CounterRng rng(seed, "prop.unannotated");
  for (; r.cases < cases; ++r.cases) {
    const std::size_t rows = 1 + rng.below(80);
    std::string text = "valence,arousal\n";
    std::vector<std::size_t> kept;
    std::vector<double> kv, ka;
    char line[96];
    for (std::size_t i = 0; i < rows; ++i) {
      const auto roll = rng.below(4);
      const double v = roll == 1 || roll == 3 ? -5.0 : rng.uniform(-1.0, 1.0);
      const double a = roll == 2 || roll == 3 ? -5.0 : rng.uniform(-1.0, 1.0);
      std::snprintf(line, sizeof line, "%.17g,%.17g\n", v, a);
      text += line;
      if (roll == 0) {
        kept.push_back(i);
        kv.push_back(v);
        ka.push_back(a);
      }
    }
    const auto seq = data::parse_annotations(text);
    if (seq.total_rows != rows) {
      r.fail(describe("row count", seq.total_rows, rows));
    } else if (seq.original_indices != kept || seq.valence != kv || seq.arousal != ka) {
      r.fail("kept rows differ from the non -5 rows in a " + std::to_string(rows) + "-row file");
    } else {
      for (std::size_t i = 0; i < seq.size(); ++i) {
        if (seq.valence[i] == data::kUnannotated || seq.arousal[i] == data::kUnannotated) {
          r.fail("a -5 value survived parsing");
          break;
        }
      }
    }
  }
  return r;
}

Result missing_frame_fill(std::size_t cases, std::uint64_t seed) {
  Result r;
  CounterRng rng(seed, "prop.fill");
  for (; r.cases < cases; ++r.cases) {
    const std::size_t length = 1 + rng.below(50), width = 1 + rng.below(4);
    std::vector<std::size_t> positions;
    for (std::size_t t = 0; t < length; ++t) {
      if (rng.next_double() < 0.6) positions.push_back(t);
    }
    if (positions.empty()) positions.push_back(rng.below(length));
    const Tensor present = random_rows(rng, positions.size(), width);
    const auto filled = data::fill_missing_frames(length, positions, present);
    if (filled.frames.dim(0) != length || filled.fill_mask.size() != length) {
      r.fail(describe("wrong output length for (length, present)", length, positions.size()));
      continue;
    }
    std::size_t k = 0;
    for (std::size_t t = 0; t < length; ++t) {
      while (k + 1 < positions.size() && positions[k + 1] <= t) ++k;
      const bool is_present = positions[k] == t;
      // nearest preceding present frame, or the first one for a leading gap
      const std::size_t src = k;
      if (filled.fill_mask[t] == is_present) {
        r.fail(describe("mask wrong at (t, length)", t, length));
        break;
      }
      bool same = true;
      for (std::size_t j = 0; j < width; ++j) same = same && filled.frames.at(t * width + j) == present.at(src * width + j);
      if (!same) {
        r.fail(describe("filled data wrong at (t, length)", t, length));
        break;
      }
    }
  }
  return r;
}

Result window_reassembly(std::size_t cases, std::uint64_t seed) {
  Result r;
  CounterRng rng(seed, "prop.window");
  for (; r.cases < cases; ++r.cases) {
    const std::size_t t_len = 1 + rng.below(120), win = 1 + rng.below(40), stride = 1 + rng.below(win);
    data::AlignedTrial trial;
    trial.trial_id = "p";
    for (auto& b : trial.branches) b.frames = random_rows(rng, t_len, 2);
    for (std::size_t t = 0; t < t_len; ++t) {
      trial.labels.valence.push_back(rng.uniform(-1.0, 1.0));
      trial.labels.arousal.push_back(rng.uniform(-1.0, 1.0));
      trial.labels.original_indices.push_back(t);
      trial.fill_mask.push_back(rng.next_double() < 0.1);
    }

    const auto eval = data::window_resample(trial, {win, stride}, Mode::Eval);
    std::vector<std::vector<double>> preds;
    for (const auto& w : eval) {
      std::vector<double> p(win, -1.0);
      for (std::size_t i = 0; i < w.valid_len; ++i) p[i] = static_cast<double>(w.offset + i);
      preds.push_back(std::move(p));
    }
    const auto stitched = data::reassemble(eval, preds, t_len);
    bool identity = stitched.size() == t_len;
    for (std::size_t t = 0; identity && t < t_len; ++t) identity = stitched[t] == static_cast<double>(t);
    if (!identity) {
      r.fail(describe("eval reassembly not the identity for (T, window)", t_len, win));
      continue;
    }

    const auto train = data::window_resample(trial, {win, stride}, Mode::Train);
    std::vector<bool> covered(t_len, false);
    for (const auto& w : train) {
      if (w.length() != win) {
        r.fail(describe("window not padded to length for (T, window)", t_len, win));
        break;
      }
      for (std::size_t i = 0; i < win; ++i) {
        const bool real = i < w.valid_len;
        if (real) covered[w.offset + i] = true;
        const bool expect = real && !trial.fill_mask[w.offset + std::min(i, w.valid_len - 1)];
        if (w.loss_mask[i] != expect) {
          r.fail(describe("loss mask wrong for (T, window)", t_len, win));
          i = win;
        } else if (real && w.valence[i] != trial.labels.valence[w.offset + i]) {
          r.fail(describe("window labels misaligned for (T, window)", t_len, win));
          i = win;
        }
      }
    }
    for (std::size_t t = 0; t < t_len; ++t) {
      if (!covered[t]) {
        r.fail(describe("train windows leave frame uncovered (t, T)", t, t_len));
        break;
      }
    }
  }
  return r;
}

Result fold_partition(std::size_t cases, std::uint64_t seed) {
  Result r;
  CounterRng rng(seed, "prop.folds");
  for (; r.cases < cases; ++r.cases) {
    const std::size_t n = 6 + rng.below(195);
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < n; ++i) ids.push_back("trial-" + std::to_string(i));
    const auto plan = data::make_folds(ids, rng.next_u64());
    std::set<std::string> seen;
    std::size_t smallest = n, largest = 0;
    for (int k = 0; k < data::FoldPlan::kFolds; ++k) {
      const auto in = plan.trials_in(k);
      smallest = std::min(smallest, in.size());
      largest = std::max(largest, in.size());
      for (const auto& id : in) {
        if (!seen.insert(id).second) r.fail("trial " + id + " in two folds");
      }
      if (in.size() + plan.trials_not_in(k).size() != n) r.fail("fold complement does not cover the trials");
    }
    if (seen.size() != n) r.fail(describe("not every trial assigned (assigned, n)", seen.size(), n));
    if (largest - smallest > 1) r.fail(describe("fold sizes differ by more than one (min, max)", smallest, largest));
  }
  return r;
}

}  // namespace props
