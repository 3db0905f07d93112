#include "irllab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <string>

#include "irllab/error.hpp"
#include "irllab/kernels.hpp"
#include "json.hpp"

namespace irllab {

namespace {

void check_lengths(const ScorePairSet& s) {
  if (s.learned.size() != s.truth.size()) throw ShapeError("score lists differ in length");
  if (s.learned.size() < 2) throw ShapeError("correlation needs at least two scores");
}

double pearson_raw(std::span<const double> x, std::span<const double> y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw UndefinedCorrelationError("constant input");
  return std::clamp(sxy / (std::sqrt(sxx) * std::sqrt(syy)), -1.0, 1.0);
}

bool is_constant(std::span<const double> xs) {
  return std::all_of(xs.begin(), xs.end(), [&](double v) { return v == xs.front(); });
}

}  // namespace

double pearson(const ScorePairSet& s) {
  check_lengths(s);
  return pearson_raw(s.learned, s.truth);
}

double kendall_tau(const ScorePairSet& s) {
  check_lengths(s);
  const auto c = kernels::kendall_counts(s.learned, s.truth);
  const double n = static_cast<double>(s.learned.size());
  return 2.0 * static_cast<double>(c.concordant - c.discordant) / (n * (n - 1.0));
}

std::vector<double> average_ranks(std::span<const double> xs) {
  std::vector<std::size_t> idx(xs.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(xs.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && xs[idx[j + 1]] == xs[idx[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

bool has_ties(std::span<const double> xs) {
  std::vector<double> v(xs.begin(), xs.end());
  std::sort(v.begin(), v.end());
  return std::adjacent_find(v.begin(), v.end()) != v.end();
}

double spearman(const ScorePairSet& s) {
  check_lengths(s);
  if (is_constant(s.learned) || is_constant(s.truth)) throw UndefinedCorrelationError("constant input");
  const auto rx = average_ranks(s.learned);
  const auto ry = average_ranks(s.truth);
  if (has_ties(s.learned) || has_ties(s.truth)) return pearson_raw(rx, ry);
  double d2 = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) d2 += (rx[i] - ry[i]) * (rx[i] - ry[i]);
  const double n = static_cast<double>(rx.size());
  return 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
}

ClassificationReport ClassificationReport::from_counts(long tp, long fp, long fn, long tn) {
  ClassificationReport r{tp, fp, fn, tn};
  const long total = tp + fp + fn + tn;
  auto ratio = [](long a, long b) { return b > 0 ? static_cast<double>(a) / static_cast<double>(b) : 0.0; };
  r.accuracy = ratio(tp + tn, total);
  r.precision = ratio(tp, tp + fp);
  r.recall = ratio(tp, tp + fn);
  r.f1 = ratio(2 * tp, 2 * tp + fp + fn);
  return r;
}

ClassificationReport classify_with_reward(std::span<const LabeledSequence> sequences,
                                          const RewardWeights& w, double threshold,
                                          const FeatureSpec& spec, const WorldConfig& world) {
  if (sequences.empty()) throw ConfigError("classification needs a nonempty labeled set");
  long tp = 0, fp = 0, fn = 0, tn = 0;
  for (const auto& item : sequences) {
    const bool predicted = reward_of(item.seq, w, spec, world) < threshold;
    const bool actual = item.label == Label::Toxic;
    if (predicted && actual) ++tp;
    else if (predicted) ++fp;
    else if (actual) ++fn;
    else ++tn;
  }
  return ClassificationReport::from_counts(tp, fp, fn, tn);
}

double calibrate_threshold(std::span<const LabeledSequence> calibration, const RewardWeights& w,
                           const FeatureSpec& spec, const WorldConfig& world) {
  if (calibration.empty()) return 0.0;
  std::vector<double> rewards;
  for (const auto& item : calibration) rewards.push_back(reward_of(item.seq, w, spec, world));
  std::vector<double> candidates{0.0};
  auto sorted = rewards;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  for (std::size_t i = 0; i + 1 < sorted.size(); ++i) candidates.push_back((sorted[i] + sorted[i + 1]) / 2.0);
  if (!sorted.empty()) {
    candidates.push_back(sorted.front() - 1.0);
    candidates.push_back(sorted.back() + 1.0);
  }

  double best_threshold = 0.0, best_score = -1.0;
  for (double th : candidates) {
    long tp = 0, fn = 0, tn = 0, fp = 0;
    for (std::size_t i = 0; i < calibration.size(); ++i) {
      const bool predicted = rewards[i] < th;
      if (calibration[i].label == Label::Toxic) (predicted ? tp : fn) += 1;
      else (predicted ? fp : tn) += 1;
    }
    const double tpr = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    const double tnr = tn + fp ? static_cast<double>(tn) / static_cast<double>(tn + fp) : 0.0;
    const double score = (tpr + tnr) / 2.0;
    // Strict improvement keeps the earliest candidate (0 first) on ties.
    if (score > best_score) {
      best_score = score;
      best_threshold = th;
    }
  }
  return best_threshold;
}

void write_metric_records(std::ostream& os, std::span<const MetricRecord> records) {
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["epoch"] = r.epoch;
    j["pearson"] = r.pearson;
    j["spearman"] = r.spearman;
    j["kendall"] = r.kendall;
    j["accuracy"] = r.accuracy;
    j["f1"] = r.f1;
    j["n"] = r.n;
    j["threshold"] = r.threshold;
    os << j.dump() << '\n';
  }
}

std::vector<MetricRecord> read_metric_records(std::istream& is) {
  std::vector<MetricRecord> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      // Undefined correlations are written as NaN, which serializes as null.
      const auto corr = [&](const char* key) {
        const auto& v = j.at(key);
        return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
      };
      out.push_back({j.at("epoch").get<int>(), corr("pearson"), corr("spearman"), corr("kendall"),
                     j.at("accuracy").get<double>(), j.at("f1").get<double>(),
                     j.at("n").get<long>(), j.at("threshold").get<double>()});
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("metric record: ") + e.what());
    }
  }
  return out;
}

}  // namespace irllab
