#pragma once

#include <iosfwd>
#include <span>
#include <vector>

#include "irllab/irl.hpp"
#include "irllab/world.hpp"

namespace irllab {

struct ScorePairSet {
  std::vector<double> learned;
  std::vector<double> truth;
};

double pearson(const ScorePairSet& s);
// tau = 2 (n_c - n_d) / (n (n - 1)); tied pairs count as neither.
double kendall_tau(const ScorePairSet& s);
// Rank-difference formula on tie-free data, Pearson of average ranks otherwise.
double spearman(const ScorePairSet& s);

// 1-based average ranks (ties share the mean of their positions).
std::vector<double> average_ranks(std::span<const double> xs);
bool has_ties(std::span<const double> xs);

struct ClassificationReport {
  long tp = 0, fp = 0, fn = 0, tn = 0;
  double accuracy = 0.0, precision = 0.0, recall = 0.0, f1 = 0.0;

  // Fills the derived rates from the counts.
  static ClassificationReport from_counts(long tp, long fp, long fn, long tn);
};

// Predicts "toxic" (the positive class) when reward_of(seq) < threshold.
ClassificationReport classify_with_reward(std::span<const LabeledSequence> sequences,
                                          const RewardWeights& w, double threshold,
                                          const FeatureSpec& spec, const WorldConfig& world);

// Threshold maximizing balanced accuracy on a calibration split; candidate
// thresholds are midpoints between consecutive distinct rewards.
double calibrate_threshold(std::span<const LabeledSequence> calibration, const RewardWeights& w,
                           const FeatureSpec& spec, const WorldConfig& world);

struct MetricRecord {
  int epoch = 0;
  double pearson = 0.0;
  double spearman = 0.0;
  double kendall = 0.0;
  double accuracy = 0.0;
  double f1 = 0.0;
  long n = 0;
  double threshold = 0.0;
};

void write_metric_records(std::ostream& os, std::span<const MetricRecord> records);
std::vector<MetricRecord> read_metric_records(std::istream& is);

}  // namespace irllab
