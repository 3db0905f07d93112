#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "irllab/policy.hpp"
#include "irllab/world.hpp"

// Data-parallel inner loops. Each kernel has a serial reference and an OpenMP
// version; both produce bit-identical results because per-item work uses
// item-keyed RNG streams and every floating-point reduction runs in a fixed
// order. The dispatching overloads use the OpenMP version.
namespace irllab::kernels {

// Generates one completion per entry of `prompts` (completing up to
// world.max_len). Episode i draws from make_stream(seed, {tag, i}).
std::vector<Sequence> rollout_batch(const PolicyParams& policy, std::span<const Sequence> prompts,
                                    const WorldConfig& world, double temperature,
                                    std::uint64_t seed, std::uint64_t tag);

// sum_t gamma^t phi(s_t) over the prefixes s_0..s_T of the completion.
FeatureVector discounted_feature_sum(const Sequence& seq, const FeatureSpec& spec,
                                     const WorldConfig& world, double gamma);
// Mean of discounted_feature_sum over trajectories.
FeatureVector mean_feature_sum(std::span<const Sequence> trajectories, const FeatureSpec& spec,
                               const WorldConfig& world, double gamma);

struct LossGrad {
  double loss = 0.0;  // mean asymmetric margin loss
  std::vector<double> grad;
  std::size_t correct = 0;  // pairs with w.d > 0
};
// Mean asymmetric margin loss of x_i = w . d_i over the rows `diffs` and its
// (sub)gradient with respect to w.
LossGrad pairwise_loss_grad(std::span<const double> w, std::span<const FeatureVector> diffs);

struct PairCounts {
  std::int64_t concordant = 0;
  std::int64_t discordant = 0;
};
PairCounts kendall_counts(std::span<const double> x, std::span<const double> y);

namespace serial {
std::vector<Sequence> rollout_batch(const PolicyParams& policy, std::span<const Sequence> prompts,
                                    const WorldConfig& world, double temperature,
                                    std::uint64_t seed, std::uint64_t tag);
FeatureVector mean_feature_sum(std::span<const Sequence> trajectories, const FeatureSpec& spec,
                               const WorldConfig& world, double gamma);
LossGrad pairwise_loss_grad(std::span<const double> w, std::span<const FeatureVector> diffs);
PairCounts kendall_counts(std::span<const double> x, std::span<const double> y);
}  // namespace serial

namespace parallel {
std::vector<Sequence> rollout_batch(const PolicyParams& policy, std::span<const Sequence> prompts,
                                    const WorldConfig& world, double temperature,
                                    std::uint64_t seed, std::uint64_t tag);
FeatureVector mean_feature_sum(std::span<const Sequence> trajectories, const FeatureSpec& spec,
                               const WorldConfig& world, double gamma);
LossGrad pairwise_loss_grad(std::span<const double> w, std::span<const FeatureVector> diffs);
PairCounts kendall_counts(std::span<const double> x, std::span<const double> y);
}  // namespace parallel

}  // namespace irllab::kernels
