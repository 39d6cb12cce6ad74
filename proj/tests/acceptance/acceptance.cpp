// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include "fixture.hpp"
#include "grad_cases.hpp"
#include "oracles.hpp"
#include "properties.hpp"

#include "vafuse/dsp.hpp"
#include "vafuse/harness.hpp"
#include "vafuse/metrics.hpp"
#include "vafuse/rng.hpp"

#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <sstream>

using namespace vafuse;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

struct Verdict {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) pass = false;
    if (!detail.empty()) detail += "; ";
    detail += (ok ? "" : "NOT ") + what;
  }
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Verdict gradients() {
  Verdict v;
  const auto t0 = Clock::now();
  std::size_t ops = 0, composites = 0, trials = 0;
  double worst_op = 0.0, worst_comp = 0.0;
  for (const auto& c : gradcases::all()) {
    (c.composite ? composites : ops)++;
    for (std::size_t t = 0; t < c.trials; ++t) {
      const auto r = c.run(t);
      ++trials;
      (c.composite ? worst_comp : worst_op) = std::max(c.composite ? worst_comp : worst_op, r.max_rel_error);
      if (!r.passed) v.require(false, c.name + " trial " + std::to_string(t) + fmt(" (rel err %.3g)", r.max_rel_error));
    }
  }
  const double secs = seconds_since(t0);
  v.require(true, std::to_string(ops) + " ops + " + std::to_string(composites) + " blocks, " + std::to_string(trials) +
                      " trials, worst rel err ops " + fmt("%.2e", worst_op) + " / blocks " + fmt("%.2e", worst_comp));
  v.require(secs < 60.0, "suite under 60 s (" + fmt("%.1f s", secs) + ")");
  return v;
}

Verdict ccc_oracle() {
  Verdict v;
  CounterRng rng(2024, "acceptance.ccc");
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const std::size_t n = 2 + rng.below(100);
    std::vector<double> p(n), t(n);
    const double shift = rng.uniform(-0.5, 0.5), gain = rng.uniform(0.1, 2.0);
    for (std::size_t j = 0; j < n; ++j) {
      t[j] = rng.uniform(-1.0, 1.0);
      p[j] = gain * rng.uniform(-1.0, 1.0) + shift;
    }
    worst = std::max(worst, std::abs(metrics::ccc(p, t).value - oracle::ccc(p, t)));
  }
  v.require(worst <= 1e-12, "10^4 pairs within 1e-12 of the two-pass oracle (max " + fmt("%.1e", worst) + ")");

  std::vector<double> x(64), flat(64, 0.25), shifted(64);
  for (std::size_t j = 0; j < 64; ++j) {
    x[j] = rng.uniform(-1.0, 1.0);
    shifted[j] = x[j] + 0.3;
  }
  v.require(std::abs(metrics::ccc(x, x).value - 1.0) < 1e-15, "ccc(x,x) = 1");
  v.require(metrics::ccc(flat, x).value == 0.0, "constant prediction gives 0");
  v.require(std::abs(oracle::pearson(x, shifted) - 1.0) < 1e-12 && metrics::ccc(x, shifted).value < 1.0,
            "mean shift lowers ccc while pearson = 1");
  return v;
}

Verdict competition_arithmetic() {
  Verdict v;
  v.require(metrics::competition_score(0.4, 0.6).combined == 0.5, "competition_score(0.4, 0.6) == 0.5");
  const std::vector<metrics::FoldRow> rows{{0, metrics::competition_score(0.4, 0.6)}};
  const auto csv = metrics::fold_table_csv(rows);
  v.require(csv == "Val Set,Valence,Arousal\nfold-0,0.4000,0.6000\n", "fold CSV columns Val Set,Valence,Arousal");
  return v;
}

Verdict overfit() {
  Verdict v;
  fixture::SyntheticOptions o;  // 12 trials x 96 frames of 512/128/39-d features
  const auto trials = fixture::synthetic_trials(o);
  const auto mc = fixture::model_config(o);
  train::TrainConfig tc;
  tc.epochs = 60;
  tc.window_stride = o.length;
  tc.eval_train = true;
  tc.seed = 1;
  const std::span<const data::AlignedTrial> all(trials);
  const auto t0 = Clock::now();
  const auto r = train::train_fold(all, all.subspan(0, 2), mc, tc);
  const double secs = seconds_since(t0);
  v.require(!r.record.diverged, "no divergence");
  v.require(r.record.train_score.combined > 0.9,
            "train CCC > 0.9 after " + std::to_string(tc.epochs) + " epochs (" + fmt("%.4f", r.record.train_score.combined) + ")");
  const double last = r.record.train_loss.empty() ? INFINITY : r.record.train_loss.back();
  v.require(last < 0.2, "final epoch loss < 0.2 (" + fmt("%.4f", last) + ")");
  v.require(secs < 300.0, "under 5 min (" + fmt("%.1f s", secs) + ")");
  return v;
}

std::size_t linear_params(std::size_t in, std::size_t out) { return in * out + out; }

Verdict ablation() {
  Verdict v;
  fixture::SyntheticOptions o;
  o.raw_frames = true;
  o.length = 48;
  const auto trials = fixture::synthetic_trials(o);
  train::ExperimentConfig cfg;
  cfg.model = fixture::model_config(o);
  cfg.train.epochs = 3;
  cfg.train.window_stride = o.length;
  const auto t0 = Clock::now();
  const auto rows = train::ablation_grid(trials, cfg);
  const auto csv = train::ablation_table_csv(rows);
  std::size_t lines = 0;
  for (char c : csv) lines += c == '\n';
  v.require(lines == 9, "8 rows plus header (" + fmt("%.1f s", seconds_since(t0)) + ")");
  bool complete = true;
  for (const auto& r : rows) complete = complete && !r.record.diverged && r.record.train_loss.size() == 3;
  v.require(complete, "every combination trained 3 epochs");
  v.require(!rows.front().use_lase && !rows.front().use_tcn && !rows.front().use_transformer, "baseline row all off");

  // closed-form sizes of the blocks the full model adds over the baseline
  const auto& m = cfg.model;
  const std::size_t c = m.stem.channels.back(), mid = std::max<std::size_t>(1, c / m.lase.reduction);
  const std::size_t lase = linear_params(c, mid) + linear_params(mid, 1) + linear_params(c, mid) + linear_params(mid, c);
  std::size_t tcn = 0;
  for (std::size_t in : {m.visual_dim, m.audio_dim, m.mfcc_dim}) {
    tcn += m.tcn.channels * in * m.tcn.kernel + m.tcn.channels + (in == m.tcn.channels ? 0 : linear_params(in, m.tcn.channels));
    tcn += (m.tcn.levels - 1) * (m.tcn.channels * m.tcn.channels * m.tcn.kernel + m.tcn.channels);
  }
  const std::size_t d = m.transformer.d_model, ff = m.transformer.ff_dim;
  const std::size_t transformer = linear_params(3 * m.tcn.channels, d) +
                                  m.transformer.layers * (4 * d + 4 * linear_params(d, d) + linear_params(d, ff) + linear_params(ff, d));
  const long head = (static_cast<long>(d) - static_cast<long>(m.visual_dim + m.audio_dim + m.mfcc_dim)) *
                    static_cast<long>(m.head.hidden_dim);
  const long expected = static_cast<long>(lase + tcn + transformer) + head;
  const long got = static_cast<long>(rows.back().parameter_count) - static_cast<long>(rows.front().parameter_count);
  v.require(got == expected, "all-minus-baseline params " + std::to_string(got) + " = LA-SE " + std::to_string(lase) +
                                 " + TCN " + std::to_string(tcn) + " + transformer " + std::to_string(transformer) +
                                 " + head width change " + std::to_string(head));
  return v;
}

Verdict alignment() {
  Verdict v;
  const std::pair<const char*, props::Result> runs[] = {
      {"reconcile idempotence", props::reconcile_idempotence(1000, 11)},
      {"-5 exclusion", props::unannotated_exclusion(1000, 12)},
      {"missing-frame fill", props::missing_frame_fill(1000, 13)},
      {"window/reassembly", props::window_reassembly(1000, 14)},
  };
  for (const auto& [name, r] : runs) {
    v.require(r.ok() && r.cases >= 1000,
              std::string(name) + " " + std::to_string(r.cases) + " cases" + (r.ok() ? "" : " (" + r.first_failure + ")"));
  }
  return v;
}

Verdict dsp_checks() {
  Verdict v;
  // bin-centred sine, one 400-sample frame
  const std::size_t n_fft = 400, k = 20;
  dsp::AudioClip clip;
  for (std::size_t n = 0; n < n_fft; ++n) {
    clip.samples.push_back(0.5 * std::sin(2.0 * std::numbers::pi * static_cast<double>(k * n) / static_cast<double>(n_fft)));
  }
  const auto p = dsp::power_spectrogram(clip, n_fft, n_fft);
  double total = 0.0;
  std::size_t argmax = 0;
  for (std::size_t b = 0; b < p.dim(1); ++b) {
    total += p.at(b);
    if (p.at(b) > p.at(argmax)) argmax = b;
  }
  const double in_bin = p.at(k) / total, main_lobe = (p.at(k - 1) + p.at(k) + p.at(k + 1)) / total;
  v.require(in_bin > 0.99, "bin-centred sine puts > 99% of energy in its bin (" + fmt("%.4f", in_bin) +
                               "; periodic Hann leaves 2/3 there, 1/6 in each neighbour; main lobe " +
                               fmt("%.6f", main_lobe) + ", argmax bin " + std::to_string(argmax) + ")");

  const auto c = dsp::dct_ii(Tensor::full({1, 64}, -3.7), 13);
  double rest = 0.0;
  for (std::size_t j = 1; j < 13; ++j) rest = std::max(rest, std::abs(c.at(j)));
  v.require(c.at(0) != 0.0 && rest < 1e-12, "constant log-mel frame gives only c0 (max |c1..c12| " + fmt("%.1e", rest) + ")");

  dsp::MelConfig mel;
  dsp::AudioClip tone;
  CounterRng rng(3, "acceptance.mfcc");
  for (std::size_t n = 0; n < 16000; ++n) {
    tone.samples.push_back(0.4 * std::sin(2.0 * std::numbers::pi * 440.0 * static_cast<double>(n) / dsp::kSampleRate) +
                           rng.uniform(-0.05, 0.05));
  }
  const auto lm = dsp::log_mel(tone, mel);
  const auto mf = dsp::mfcc39(tone, mel);
  const std::size_t bands = lm.frames.dim(1);
  double worst = 0.0;
  for (std::size_t t = 0; t < lm.length(); ++t) {
    const std::vector<double> frame(lm.frames.data().begin() + static_cast<long>(t * bands),
                                    lm.frames.data().begin() + static_cast<long>((t + 1) * bands));
    const auto ref = oracle::dct_ii(frame, 13);
    for (std::size_t j = 0; j < 13; ++j) worst = std::max(worst, std::abs(mf.frames.at(t * 39 + j) - ref[j]) / std::abs(ref[j]));
  }
  v.require(worst <= 1e-8, "mfcc39 statics match the naive DCT at rtol 1e-8 (max " + fmt("%.1e", worst) + ")");

  dsp::AudioClip silent;
  silent.samples.assign(16000, 0.0);
  const auto quiet = dsp::log_mel(silent, mel);
  bool exact = true;
  for (double x : quiet.frames.data()) exact = exact && x == std::log(mel.log_offset);
  v.require(exact, "silence maps to log(log_offset) exactly");
  return v;
}

Verdict determinism() {
  Verdict v;
  fixture::SyntheticOptions o;
  o.length = 48;
  const auto trials = fixture::synthetic_trials(o);
  const std::span<const data::AlignedTrial> all(trials);
  const auto mc = fixture::model_config(o);
  train::TrainConfig tc;
  tc.epochs = 3;
  tc.window_stride = 24;
  tc.seed = 77;
  const auto a = train::train_fold(all.subspan(0, 10), all.subspan(10), mc, tc);
  const auto b = train::train_fold(all.subspan(0, 10), all.subspan(10), mc, tc);
  v.require(a.record.train_loss == b.record.train_loss && a.final_state == b.final_state,
            "same config+seed gives bitwise-equal loss curves and weights");

  const auto dir = fixture::scratch_dir("acceptance-ckpt");
  nn::Model model(mc);
  model.load_state(a.best_state);
  model.save(dir / "best.ckpt");
  auto restored = nn::Model::load(dir / "best.ckpt");
  v.require(restored.state() == model.state(), "checkpoint save/load round-trips bitwise");

  const auto before = train::predict_trials(model, trials);
  const auto after = train::predict_trials(restored, trials);
  const auto again = train::predict_trials(restored, trials);
  bool same = true;
  for (std::size_t i = 0; i < trials.size(); ++i) {
    same = same && train::prediction_csv(trials[i], before[i]) == train::prediction_csv(trials[i], after[i]) &&
           train::prediction_csv(trials[i], after[i]) == train::prediction_csv(trials[i], again[i]);
  }
  v.require(same, "predict output identical in memory, after reload, and across runs");
  return v;
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::err);
  const std::pair<const char*, std::function<Verdict()>> criteria[] = {
      {"gradient suite", gradients},      {"ccc oracle", ccc_oracle},          {"competition score", competition_arithmetic},
      {"overfit fixture", overfit},       {"ablation grid", ablation},         {"alignment properties", alignment},
      {"dsp checks", dsp_checks},         {"determinism and persistence", determinism},
  };
  int failed = 0, n = 0;
  for (const auto& [name, run] : criteria) {
    ++n;
    Verdict v;
    try {
      v = run();
    } catch (const std::exception& e) {
      v.pass = false;
      v.detail = std::string("threw: ") + e.what();
    }
    failed += !v.pass;
    std::printf("%s criterion %d (%s): %s\n", v.pass ? "PASS" : "FAIL", n, name, v.detail.c_str());
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}
