#include "doctest.h"
#include "oracles.hpp"

#include "vafuse/error.hpp"
#include "vafuse/metrics.hpp"
#include "vafuse/ops.hpp"
#include "vafuse/rng.hpp"

#include "json.hpp"

#include <cmath>

using namespace vafuse;
using namespace vafuse::metrics;

namespace {

std::vector<double> draw(CounterRng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("frozen five-point value") {
    const std::vector<double> p{0.1, 0.4, -0.2, 0.8, 0.3}, t{0.0, 0.5, -0.1, 0.6, 0.2};
    CHECK(ccc(p, t).value == doctest::Approx(0.9137931034482759).epsilon(1e-14));
  }

  TEST_CASE("matches the two-pass oracle on random pairs") {
    CounterRng rng(1, "ccc-oracle");
    for (int i = 0; i < 2000; ++i) {
      const std::size_t n = 2 + rng.below(60);
      auto p = draw(rng, n), t = draw(rng, n);
      const double shift = rng.uniform(-0.5, 0.5);
      for (auto& x : p) x += shift;
      CHECK(std::abs(ccc(p, t).value - oracle::ccc(p, t)) <= 1e-12);
    }
  }

  TEST_CASE("perfect, constant, shifted and symmetric cases") {
    CounterRng rng(2, "ccc-props");
    const auto x = draw(rng, 50), y = draw(rng, 50);
    CHECK(ccc(x, x).value == doctest::Approx(1.0).epsilon(1e-15));
    const std::vector<double> flat(50, 0.3);
    CHECK(std::abs(ccc(flat, y).value) < 1e-15);
    CHECK_FALSE(ccc(flat, y).degenerate);
    std::vector<double> shifted = x;
    for (auto& v : shifted) v += 0.2;
    CHECK(oracle::pearson(x, shifted) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(ccc(x, shifted).value < 1.0);
    CHECK(ccc(x, y).value == ccc(y, x).value);
  }

  TEST_CASE("degenerate and invalid inputs") {
    const std::vector<double> a(4, 0.5), b(4, 0.5);
    const auto r = ccc(a, b);
    CHECK(r.value == 0.0);
    CHECK(r.degenerate);
    CHECK_THROWS_AS(ccc(std::vector<double>{1, 2, 3}, std::vector<double>{1, 2}), ContractError);
    CHECK_THROWS_AS(ccc(std::vector<double>{1}, std::vector<double>{1}), ContractError);
  }

  TEST_CASE("bounded on random inputs") {
    CounterRng rng(3, "ccc-bound");
    for (int i = 0; i < 10000; ++i) {
      const std::size_t n = 2 + rng.below(10);
      const double v = ccc(draw(rng, n), draw(rng, n)).value;
      CHECK((v >= -1.0 && v <= 1.0));
    }
  }

  TEST_CASE("differentiable ccc agrees with the scalar one") {
    CounterRng rng(4, "ccc-tensor");
    const auto p = draw(rng, 30), t = draw(rng, 30);
    CHECK(ccc_tensor(Tensor({30}, p), Tensor({30}, t)).item() == doctest::Approx(ccc(p, t).value).epsilon(1e-13));
  }

  TEST_CASE("loss endpoints") {
    CounterRng rng(5, "ccc-loss");
    const auto v = draw(rng, 20), a = draw(rng, 20);
    const Tensor tv({20}, v), ta({20}, a);
    CHECK(ccc_loss(tv, tv, ta, ta).item() == doctest::Approx(0.0).scale(1.0).epsilon(1e-14));
    const Tensor flat = Tensor::full({20}, 0.1);
    CHECK(ccc_loss(flat, tv, flat, ta).item() == doctest::Approx(2.0).epsilon(1e-14));
    const Tensor neg = scale(tv, -1.0), nega = scale(ta, -1.0);
    const double worst = ccc_loss(neg, tv, nega, ta).item();
    CHECK((worst > 2.0 && worst <= 4.0));
  }

  TEST_CASE("competition score arithmetic") {
    const auto r = competition_score(0.4, 0.6);
    CHECK(r.combined == 0.5);
    CHECK(r.ccc_valence == 0.4);
    CHECK(r.ccc_arousal == 0.6);
  }

  TEST_CASE("competition score concatenates trials") {
    CounterRng rng(6, "score");
    std::vector<TrialPrediction> trials;
    std::vector<double> pv, pa, tv, ta;
    for (int i = 0; i < 2; ++i) {
      TrialPrediction p;
      p.trial_id = "t" + std::to_string(i);
      const std::size_t n = 10 + 7 * static_cast<std::size_t>(i);
      p.pred_valence = draw(rng, n);
      p.pred_arousal = draw(rng, n);
      p.target_valence = draw(rng, n);
      p.target_arousal = draw(rng, n);
      pv.insert(pv.end(), p.pred_valence.begin(), p.pred_valence.end());
      pa.insert(pa.end(), p.pred_arousal.begin(), p.pred_arousal.end());
      tv.insert(tv.end(), p.target_valence.begin(), p.target_valence.end());
      ta.insert(ta.end(), p.target_arousal.begin(), p.target_arousal.end());
      trials.push_back(std::move(p));
    }
    const auto r = competition_score(trials);
    CHECK(r.ccc_valence == doctest::Approx(oracle::ccc(pv, tv)).epsilon(1e-12));
    CHECK(r.ccc_arousal == doctest::Approx(oracle::ccc(pa, ta)).epsilon(1e-12));
    CHECK(r.combined == 0.5 * (r.ccc_valence + r.ccc_arousal));

    TrialPrediction perfect;
    perfect.pred_valence = perfect.target_valence = draw(rng, 9);
    perfect.pred_arousal = perfect.target_arousal = draw(rng, 9);
    CHECK(competition_score(std::vector<TrialPrediction>{perfect}).combined == doctest::Approx(1.0).epsilon(1e-15));
    CHECK_THROWS_AS(competition_score(std::vector<TrialPrediction>{}), ContractError);
  }

  TEST_CASE("reports mirror the fold table") {
    const auto j = nlohmann::json::parse(report_json(3, competition_score(0.25, 0.75)));
    CHECK(j["fold"] == 3);
    CHECK(j["combined"] == 0.5);
    CHECK(j.contains("ccc_valence"));
    CHECK(j.contains("ccc_arousal"));
    const std::vector<FoldRow> rows{{0, competition_score(0.61234, 0.65891)}, {1, competition_score(0.5, 0.25)}};
    CHECK(fold_table_csv(rows) == "Val Set,Valence,Arousal\nfold-0,0.6123,0.6589\nfold-1,0.5000,0.2500\n");
  }
}
