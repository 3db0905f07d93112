#include <algorithm>
#include <cmath>
#include <sstream>

#include "doctest.h"
#include "irllab/error.hpp"
#include "irllab/metrics.hpp"
#include "irllab/random.hpp"

using namespace irllab;

TEST_CASE("pearson") {
  CHECK(pearson({{1, 2, 3, 4}, {1, 2, 3, 4}}) == doctest::Approx(1.0));
  CHECK(pearson({{1, 2, 3, 4}, {-1, -2, -3, -4}}) == doctest::Approx(-1.0));
  // Definitional arithmetic: deviations (-1.5,-.5,.5,1.5) and (-.5,-1.5,1.5,.5).
  const double sxy = (-1.5 * -0.5) + (-0.5 * -1.5) + (0.5 * 1.5) + (1.5 * 0.5);
  const double sxx = 2 * (1.5 * 1.5 + 0.5 * 0.5);
  CHECK(pearson({{1, 2, 3, 4}, {2, 1, 4, 3}}) == doctest::Approx(sxy / sxx));
  CHECK_THROWS_AS(pearson({{1, 1, 1}, {1, 2, 3}}), UndefinedCorrelationError);
}

TEST_CASE("kendall tau") {
  CHECK(kendall_tau({{1, 2, 3, 4, 5}, {2, 4, 6, 8, 10}}) == 1.0);
  CHECK(kendall_tau({{1, 2, 3, 4, 5}, {5, 4, 3, 2, 1}}) == -1.0);
  // Pairs (1,2): discordant, (1,3): concordant, (2,3): concordant.
  CHECK(kendall_tau({{1, 2, 3}, {2, 1, 3}}) == doctest::Approx(1.0 / 3.0));
  // A tie drops the pair from both counts.
  CHECK(kendall_tau({{1, 1, 2}, {1, 2, 3}}) == doctest::Approx(2.0 * 2 / 6.0));
}

TEST_CASE("spearman") {
  CHECK(spearman({{1, 2, 3, 4}, {1, 3, 2, 4}}) == doctest::Approx(0.8));
  CHECK(spearman({{0.1, 0.5, 2.0, 3.0}, {std::exp(0.1), std::exp(0.5), std::exp(2.0), std::exp(3.0)}}) == 1.0);
  CHECK(average_ranks(std::vector<double>{10, 20, 20, 5}) == std::vector<double>{2, 3.5, 3.5, 1});
  // With ties: Pearson of average ranks.
  const ScorePairSet tied{{1, 2, 2, 3}, {1, 2, 3, 4}};
  CHECK(spearman(tied) == doctest::Approx(pearson({average_ranks(tied.learned), average_ranks(tied.truth)})));
  CHECK_THROWS_AS(spearman({{2, 2, 2}, {1, 2, 3}}), UndefinedCorrelationError);
}

TEST_CASE("correlation invariances and bounds") {
  Rng rng = make_stream(12);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 5 + uniform_index(rng, 30);
    ScorePairSet s;
    for (std::size_t i = 0; i < n; ++i) {
      s.learned.push_back(standard_normal(rng));
      s.truth.push_back(s.learned.back() + standard_normal(rng));
    }
    const double p = pearson(s), k = kendall_tau(s), r = spearman(s);
    for (double v : {p, k, r}) {
      CHECK(v >= -1.0);
      CHECK(v <= 1.0);
    }
    const double a = 0.5 + 3.0 * uniform01(rng), b = standard_normal(rng);
    ScorePairSet affine = s, mono = s;
    for (double& x : affine.learned) x = a * x + b;
    for (double& x : mono.learned) x = std::exp(x) + std::pow(x, 3);
    for (double& y : mono.truth) y = std::atan(y);
    CHECK(pearson(affine) == doctest::Approx(p).epsilon(1e-12));
    CHECK(kendall_tau(mono) == k);
    CHECK(spearman(mono) == doctest::Approx(r).epsilon(1e-12));
  }
}

TEST_CASE("classification report arithmetic") {
  const auto r = ClassificationReport::from_counts(3, 1, 1, 5);
  CHECK(r.accuracy == doctest::Approx(0.8));
  CHECK(r.f1 == doctest::Approx(0.75));
  CHECK(r.precision == doctest::Approx(0.75));
  CHECK(r.recall == doctest::Approx(0.75));
}

TEST_CASE("classify_with_reward") {
  WorldConfig world;
  const FeatureSpec spec{false, false, true, true};
  const RewardWeights w{{-1.0}};
  std::vector<LabeledSequence> data{
      {Label::Toxic, Sequence{{0, 9, 9}, 1}},
      {Label::Toxic, Sequence{{0, 9, 10}, 1}},
      {Label::NonToxic, Sequence{{0, 1, 2}, 1}},
      {Label::NonToxic, Sequence{{0, 3, 2}, 1}},
  };
  const auto perfect = classify_with_reward(data, w, -0.5, spec, world);
  CHECK(perfect.accuracy == 1.0);
  CHECK(perfect.f1 == 1.0);

  // Threshold below every reward: nothing predicted toxic.
  const auto none = classify_with_reward(data, w, -5.0, spec, world);
  CHECK(none.accuracy == 0.5);
  CHECK(none.f1 == 0.0);

  const double th = calibrate_threshold(data, w, spec, world);
  CHECK(classify_with_reward(data, w, th, spec, world).accuracy == 1.0);
}

TEST_CASE("metric records round trip") {
  std::vector<MetricRecord> recs{{1, 0.5, 0.4, 0.3, 0.9, 0.8, 100, -0.25}, {2, -0.1, 0, 0, 1, 1, 100, 0}};
  std::ostringstream out;
  write_metric_records(out, recs);
  std::istringstream in(out.str());
  const auto back = read_metric_records(in);
  REQUIRE(back.size() == 2);
  CHECK(back[0].pearson == 0.5);
  CHECK(back[1].n == 100);
  CHECK(back[0].threshold == -0.25);
}
