#include "irllab/kernels.hpp"

#include <omp.h>

#include "irllab/error.hpp"
#include "irllab/margin_loss.hpp"

namespace irllab::kernels {

namespace {

Sequence rollout_one(const PolicyParams& policy, const Sequence& prompt, const WorldConfig& world,
                     double temperature, std::uint64_t seed, std::uint64_t tag, std::size_t i) {
  Rng rng = make_stream(seed, {tag, i});
  const int new_tokens = world.max_len - static_cast<int>(prompt.prompt_boundary);
  return generate(policy, prompt, GenerationConfig{temperature, new_tokens, seed}, world, rng);
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void check_diffs(std::span<const double> w, std::span<const FeatureVector> diffs) {
  for (const auto& d : diffs)
    if (d.size() != w.size()) throw ShapeError("feature difference dimension mismatch");
}

int sign(double v) { return (v > 0.0) - (v < 0.0); }

}  // namespace

FeatureVector discounted_feature_sum(const Sequence& seq, const FeatureSpec& spec,
                                     const WorldConfig& world, double gamma) {
  FeatureVector total(spec.dimension(world.vocab_size), 0.0);
  Sequence prefix{{seq.tokens.begin(), seq.tokens.begin() + static_cast<std::ptrdiff_t>(seq.prompt_boundary)},
                  seq.prompt_boundary};
  double discount = 1.0;
  for (std::size_t pos = seq.prompt_boundary;; ++pos) {
    const auto phi = extract_features(prefix, spec, world);
    for (std::size_t j = 0; j < total.size(); ++j) total[j] += discount * phi[j];
    if (pos == seq.tokens.size()) break;
    prefix.tokens.push_back(seq.tokens[pos]);
    discount *= gamma;
  }
  return total;
}

namespace serial {

std::vector<Sequence> rollout_batch(const PolicyParams& policy, std::span<const Sequence> prompts,
                                    const WorldConfig& world, double temperature,
                                    std::uint64_t seed, std::uint64_t tag) {
  std::vector<Sequence> out;
  out.reserve(prompts.size());
  for (std::size_t i = 0; i < prompts.size(); ++i)
    out.push_back(rollout_one(policy, prompts[i], world, temperature, seed, tag, i));
  return out;
}

FeatureVector mean_feature_sum(std::span<const Sequence> trajectories, const FeatureSpec& spec,
                               const WorldConfig& world, double gamma) {
  FeatureVector mean(spec.dimension(world.vocab_size), 0.0);
  for (const auto& seq : trajectories) {
    const auto s = discounted_feature_sum(seq, spec, world, gamma);
    for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += s[j];
  }
  for (double& m : mean) m /= static_cast<double>(trajectories.size());
  return mean;
}

LossGrad pairwise_loss_grad(std::span<const double> w, std::span<const FeatureVector> diffs) {
  check_diffs(w, diffs);
  LossGrad out;
  out.grad.assign(w.size(), 0.0);
  for (const auto& d : diffs) {
    const double x = dot(w, d);
    out.loss += asymmetric_margin_loss(x);
    if (x > 0.0) ++out.correct;
    const double slope = asymmetric_margin_slope(x);
    for (std::size_t j = 0; j < w.size(); ++j) out.grad[j] += slope * d[j];
  }
  const double n = static_cast<double>(diffs.size());
  out.loss /= n;
  for (double& g : out.grad) g /= n;
  return out;
}

PairCounts kendall_counts(std::span<const double> x, std::span<const double> y) {
  PairCounts c;
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = i + 1; j < x.size(); ++j) {
      const int s = sign(x[i] - x[j]) * sign(y[i] - y[j]);
      if (s > 0) ++c.concordant;
      else if (s < 0) ++c.discordant;
    }
  return c;
}

}  // namespace serial

namespace parallel {

std::vector<Sequence> rollout_batch(const PolicyParams& policy, std::span<const Sequence> prompts,
                                    const WorldConfig& world, double temperature,
                                    std::uint64_t seed, std::uint64_t tag) {
  std::vector<Sequence> out(prompts.size());
  const auto n = static_cast<std::ptrdiff_t>(prompts.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    out[k] = rollout_one(policy, prompts[k], world, temperature, seed, tag, k);
  }
  return out;
}

FeatureVector mean_feature_sum(std::span<const Sequence> trajectories, const FeatureSpec& spec,
                               const WorldConfig& world, double gamma) {
  std::vector<FeatureVector> sums(trajectories.size());
  const auto n = static_cast<std::ptrdiff_t>(trajectories.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i)
    sums[static_cast<std::size_t>(i)] =
        discounted_feature_sum(trajectories[static_cast<std::size_t>(i)], spec, world, gamma);

  // Ordered reduction keeps the result identical to the serial path.
  FeatureVector mean(spec.dimension(world.vocab_size), 0.0);
  for (const auto& s : sums)
    for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += s[j];
  for (double& m : mean) m /= static_cast<double>(trajectories.size());
  return mean;
}

LossGrad pairwise_loss_grad(std::span<const double> w, std::span<const FeatureVector> diffs) {
  check_diffs(w, diffs);
  const auto n = static_cast<std::ptrdiff_t>(diffs.size());
  std::vector<double> xs(diffs.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i)
    xs[static_cast<std::size_t>(i)] = dot(w, diffs[static_cast<std::size_t>(i)]);

  LossGrad out;
  out.grad.assign(w.size(), 0.0);
  const auto dim = static_cast<std::ptrdiff_t>(w.size());
  // Each feature coordinate sums over pairs in order; coordinates are
  // independent so they can run concurrently.
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t j = 0; j < dim; ++j) {
    double g = 0.0;
    for (std::size_t i = 0; i < diffs.size(); ++i)
      g += asymmetric_margin_slope(xs[i]) * diffs[i][static_cast<std::size_t>(j)];
    out.grad[static_cast<std::size_t>(j)] = g / static_cast<double>(diffs.size());
  }
  for (double x : xs) {
    out.loss += asymmetric_margin_loss(x);
    if (x > 0.0) ++out.correct;
  }
  out.loss /= static_cast<double>(diffs.size());
  return out;
}

PairCounts kendall_counts(std::span<const double> x, std::span<const double> y) {
  std::int64_t nc = 0, nd = 0;
  const auto n = static_cast<std::ptrdiff_t>(x.size());
#pragma omp parallel for schedule(dynamic, 16) reduction(+ : nc, nd)
  for (std::ptrdiff_t i = 0; i < n; ++i)
    for (std::ptrdiff_t j = i + 1; j < n; ++j) {
      const auto a = static_cast<std::size_t>(i), b = static_cast<std::size_t>(j);
      const int s = sign(x[a] - x[b]) * sign(y[a] - y[b]);
      if (s > 0) ++nc;
      else if (s < 0) ++nd;
    }
  return {nc, nd};
}

}  // namespace parallel

std::vector<Sequence> rollout_batch(const PolicyParams& policy, std::span<const Sequence> prompts,
                                    const WorldConfig& world, double temperature,
                                    std::uint64_t seed, std::uint64_t tag) {
  return parallel::rollout_batch(policy, prompts, world, temperature, seed, tag);
}

FeatureVector mean_feature_sum(std::span<const Sequence> trajectories, const FeatureSpec& spec,
                               const WorldConfig& world, double gamma) {
  if (trajectories.empty()) throw ConfigError("no trajectories");
  return parallel::mean_feature_sum(trajectories, spec, world, gamma);
}

LossGrad pairwise_loss_grad(std::span<const double> w, std::span<const FeatureVector> diffs) {
  if (diffs.empty()) throw ConfigError("no pairs");
  return parallel::pairwise_loss_grad(w, diffs);
}

PairCounts kendall_counts(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ShapeError("kendall inputs differ in length");
  return parallel::kendall_counts(x, y);
}

}  // namespace irllab::kernels
