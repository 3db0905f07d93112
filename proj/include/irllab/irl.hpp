#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "irllab/margin_loss.hpp"
#include "irllab/policy.hpp"
#include "irllab/ppo.hpp"
#include "irllab/world.hpp"

namespace irllab {

struct RewardWeights {
  std::vector<double> w;
  double norm() const;
  bool operator==(const RewardWeights&) const = default;
};

struct FeatureExpectations {
  std::vector<double> mu;
  int n_trajectories = 0;
  double gamma = 1.0;
};

struct IrlConfig {
  double epsilon = 0.01;
  int max_iterations = 20;
  int inner_rl_steps = 300;
  int solver_iterations = 2000;
  double lr = 0.05;
  int epochs = 30;
  int batch_size = 16;
  double init_scale = 0.1;  // std-dev of the Gaussian initial weights (pairwise strategy)
  std::uint64_t seed = 0;

  void validate() const;
};

struct PolicySet {
  std::vector<std::pair<std::string, FeatureExpectations>> entries;
};

double reward_of(const Sequence& seq, const RewardWeights& w, const FeatureSpec& spec,
                 const WorldConfig& world);

// Monte-Carlo mean over trajectories of sum_t gamma^t phi(s_t), n_samples
// completions per prompt decoded at `temperature`.
FeatureExpectations feature_expectations(const PolicyParams& policy,
                                         std::span<const Sequence> prompts, int n_samples,
                                         double gamma, const FeatureSpec& spec, std::uint64_t seed,
                                         const WorldConfig& world, double temperature = 0.0);

struct MaxMarginResult {
  RewardWeights weights;
  double margin = 0.0;
  bool degenerate = false;  // no direction separates the expert: zero weights
};

// argmax_{|w| <= 1} min_pi w . (mu_E - mu(pi)) by projected subgradient ascent
// with step 1/sqrt(k). Returns the best iterate seen.
MaxMarginResult max_margin_weights(const FeatureExpectations& mu_expert, const PolicySet& policy_set,
                                   int iterations = 2000);

struct IterationTrace {
  int iteration = 0;
  double margin = 0.0;
  double gap = 0.0;  // w . mu_E - w . mu_t
  bool degenerate = false;
};

struct Algorithm1Result {
  RewardWeights weights;
  std::vector<IterationTrace> trace;
  bool converged = false;
  FeatureExpectations mu_expert;
  PolicySet policy_set;
  PolicyParams last_policy;  // policy trained under the returned weights
};

// Feature-expectation max-margin loop. The inner step fine-tunes a fresh copy
// of `base` with PPO (cfg.inner_rl_steps steps, KL-anchored to `base`) under
// the per-state reward w_t . phi(s).
Algorithm1Result run_algorithm1(const PolicyParams& expert, const PolicyParams& base,
                                const WorldConfig& world, const FeatureSpec& spec,
                                const IrlConfig& cfg, std::span<const Sequence> prompts,
                                const PpoConfig& inner_ppo);

struct EpochMetrics {
  int epoch = 0;
  double loss = 0.0;      // mean loss over all training pairs after the epoch
  double accuracy = 0.0;  // fraction of training pairs with w . d > 0
};

struct ExtractResult {
  RewardWeights weights;
  std::vector<EpochMetrics> epochs;
};

using EpochCallback = std::function<void(int epoch, const RewardWeights&)>;

// Minibatch (sub)gradient descent on the mean asymmetric margin loss of the
// rows `diffs` (d = phi(preferred) - phi(rejected)), starting from `init`.
ExtractResult pairwise_extract_diffs(std::span<const FeatureVector> diffs, RewardWeights init,
                                     const IrlConfig& cfg, const EpochCallback& on_epoch = {});

// Gaussian(0, init_scale^2) initial weights drawn from the config seed.
RewardWeights initial_weights(std::size_t dim, const IrlConfig& cfg);

std::vector<FeatureVector> pair_differences(std::span<const PairedSample> pairs,
                                            const FeatureSpec& spec, const WorldConfig& world);

ExtractResult pairwise_extract(std::span<const PairedSample> pairs, const FeatureSpec& spec,
                               const IrlConfig& cfg, const WorldConfig& world,
                               const EpochCallback& on_epoch = {});

// Fraction of pairs whose preferred completion out-scores the rejected one.
double pair_ordering_accuracy(std::span<const PairedSample> pairs, const RewardWeights& w,
                              const FeatureSpec& spec, const WorldConfig& world);

// Reference weights realizing the oracle as a linear reward: +1 on clean
// unigrams, -1 on lexicon unigrams (or -1 on the lexicon fraction when
// unigrams are disabled), normalized to unit length.
RewardWeights groundtruth_weights(const FeatureSpec& spec, const WorldConfig& world);

struct WeightsRecord {
  FeatureSpec spec;
  RewardWeights weights;
  std::string strategy;  // "pairwise" or "max-margin"
  int epochs = 0;
  std::uint64_t seed = 0;
  double final_accuracy = 0.0;
};

void write_weights(std::ostream& os, const WeightsRecord& rec);
WeightsRecord read_weights(std::istream& is);

}  // namespace irllab
