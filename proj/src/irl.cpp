#include "irllab/irl.hpp"

#include <cmath>
#include <istream>
#include <limits>
#include <ostream>

#include "irllab/error.hpp"
#include "irllab/kernels.hpp"
#include "json.hpp"

namespace irllab {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double l2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

}  // namespace

double RewardWeights::norm() const { return l2(w); }

void IrlConfig::validate() const {
  if (!(epsilon > 0.0)) throw ConfigError("irl epsilon must be positive");
  if (max_iterations <= 0) throw ConfigError("max_iterations must be positive");
  if (inner_rl_steps < 0) throw ConfigError("inner_rl_steps must be non-negative");
  if (solver_iterations <= 0) throw ConfigError("solver_iterations must be positive");
  if (epochs < 0) throw ConfigError("epochs must be non-negative");
  if (batch_size <= 0) throw ConfigError("irl batch_size must be positive");
  if (!(init_scale >= 0.0)) throw ConfigError("init_scale must be non-negative");
}

double reward_of(const Sequence& seq, const RewardWeights& w, const FeatureSpec& spec,
                 const WorldConfig& world) {
  if (w.w.size() != spec.dimension(world.vocab_size))
    throw ShapeError("weights have dimension " + std::to_string(w.w.size()) + ", features " +
                     std::to_string(spec.dimension(world.vocab_size)));
  return dot(w.w, extract_features(seq, spec, world));
}

FeatureExpectations feature_expectations(const PolicyParams& policy,
                                         std::span<const Sequence> prompts, int n_samples,
                                         double gamma, const FeatureSpec& spec, std::uint64_t seed,
                                         const WorldConfig& world, double temperature) {
  if (n_samples < 1) throw ConfigError("n_samples must be >= 1");
  if (prompts.empty()) throw ConfigError("feature_expectations needs prompts");
  std::vector<Sequence> starts;
  starts.reserve(prompts.size() * static_cast<std::size_t>(n_samples));
  for (int s = 0; s < n_samples; ++s) starts.insert(starts.end(), prompts.begin(), prompts.end());
  const auto trajectories = kernels::rollout_batch(policy, starts, world, temperature, seed, 0xFEull);
  return {kernels::mean_feature_sum(trajectories, spec, world, gamma),
          static_cast<int>(trajectories.size()), gamma};
}

MaxMarginResult max_margin_weights(const FeatureExpectations& mu_expert, const PolicySet& policy_set,
                                   int iterations) {
  if (policy_set.entries.empty()) throw ConfigError("policy set is empty");
  const std::size_t dim = mu_expert.mu.size();
  std::vector<std::vector<double>> diffs;
  for (const auto& [name, fe] : policy_set.entries) {
    if (fe.mu.size() != dim)
      throw ShapeError("feature expectations of '" + name + "' have dimension " +
                       std::to_string(fe.mu.size()) + ", expert " + std::to_string(dim));
    std::vector<double> d(dim);
    for (std::size_t j = 0; j < dim; ++j) d[j] = mu_expert.mu[j] - fe.mu[j];
    diffs.push_back(std::move(d));
  }

  auto worst = [&](std::span<const double> w) {
    std::size_t arg = 0;
    double m = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < diffs.size(); ++i) {
      const double v = dot(w, diffs[i]);
      if (v < m) {
        m = v;
        arg = i;
      }
    }
    return std::pair{m, arg};
  };

  MaxMarginResult best{RewardWeights{std::vector<double>(dim, 0.0)}, 0.0, true};
  std::vector<double> w(dim, 0.0);
  for (int k = 1; k <= iterations; ++k) {
    const auto [m, arg] = worst(w);
    if (m > best.margin) {
      best.weights.w = w;
      best.margin = m;
      best.degenerate = false;
    }
    const double step = 1.0 / std::sqrt(static_cast<double>(k));
    for (std::size_t j = 0; j < dim; ++j) w[j] += step * diffs[arg][j];
    const double n = l2(w);
    if (n > 1.0)
      for (double& x : w) x /= n;
  }
  const auto [m, arg] = worst(w);
  if (m > best.margin) {
    best.weights.w = w;
    best.margin = m;
    best.degenerate = false;
  }
  return best;
}

Algorithm1Result run_algorithm1(const PolicyParams& expert, const PolicyParams& base,
                                const WorldConfig& world, const FeatureSpec& spec,
                                const IrlConfig& cfg, std::span<const Sequence> prompts,
                                const PpoConfig& inner_ppo) {
  cfg.validate();
  const double gamma = world.gamma;
  // Greedy decoding makes every mu deterministic, so one sample per prompt.
  auto mu_of = [&](const PolicyParams& p) {
    return feature_expectations(p, prompts, 1, gamma, spec, cfg.seed, world, 0.0);
  };

  Algorithm1Result result{RewardWeights{std::vector<double>(spec.dimension(world.vocab_size), 0.0)},
                          {}, false, mu_of(expert), {}, base};
  result.policy_set.entries.emplace_back("pi_0", mu_of(base));

  for (int it = 1; it <= cfg.max_iterations; ++it) {
    const auto mm = max_margin_weights(result.mu_expert, result.policy_set, cfg.solver_iterations);
    const RewardWeights w = mm.weights;

    PpoConfig ppo = inner_ppo;
    ppo.total_steps = cfg.inner_rl_steps;
    ppo.seed = cfg.seed + 1000003ull * static_cast<std::uint64_t>(it);
    const StateRewardFn state_reward = [&](const Sequence& prefix) {
      return reward_of(prefix, w, spec, world);
    };
    PolicyParams learner = base;
    try {
      learner = train_rlhf(base, base, {}, prompts, ppo, world, state_reward).policy;
    } catch (const DivergenceError& e) {
      throw DivergenceError(it, std::string("inner RL: ") + e.what());
    }
    auto mu_t = mu_of(learner);

    const double gap = dot(w.w, result.mu_expert.mu) - dot(w.w, mu_t.mu);
    result.trace.push_back({it, mm.margin, gap, mm.degenerate});
    result.weights = w;
    result.last_policy = std::move(learner);
    if (gap <= cfg.epsilon) {
      result.converged = true;
      break;
    }
    result.policy_set.entries.emplace_back("pi_" + std::to_string(it), std::move(mu_t));
  }
  return result;
}

RewardWeights initial_weights(std::size_t dim, const IrlConfig& cfg) {
  Rng rng = make_stream(cfg.seed, {0x1417ull});
  RewardWeights w{std::vector<double>(dim)};
  for (double& x : w.w) x = cfg.init_scale * standard_normal(rng);
  return w;
}

ExtractResult pairwise_extract_diffs(std::span<const FeatureVector> diffs, RewardWeights init,
                                     const IrlConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  if (diffs.empty()) throw ConfigError("pairwise extraction needs at least one pair");
  const std::size_t dim = init.w.size();
  if (dim == 0) throw ConfigError("zero-dimensional features");
  for (const auto& d : diffs)
    if (d.size() != dim) throw ShapeError("pair difference dimension mismatch");

  ExtractResult out{std::move(init), {}};
  auto& w = out.weights.w;
  Rng rng = make_stream(cfg.seed, {0x5A0Full});
  std::vector<std::size_t> order(diffs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<FeatureVector> batch;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      batch.clear();
      for (std::size_t i = start; i < stop; ++i) batch.push_back(diffs[order[i]]);
      const auto lg = kernels::pairwise_loss_grad(w, batch);
      for (std::size_t j = 0; j < dim; ++j) w[j] -= cfg.lr * lg.grad[j];
    }
    const auto full = kernels::pairwise_loss_grad(w, diffs);
    if (!std::isfinite(full.loss)) throw DivergenceError(epoch, "non-finite extraction loss");
    out.epochs.push_back({epoch, full.loss,
                          static_cast<double>(full.correct) / static_cast<double>(diffs.size())});
    if (on_epoch) on_epoch(epoch, out.weights);
  }
  return out;
}

std::vector<FeatureVector> pair_differences(std::span<const PairedSample> pairs,
                                            const FeatureSpec& spec, const WorldConfig& world) {
  std::vector<FeatureVector> diffs;
  diffs.reserve(pairs.size());
  for (const auto& p : pairs) {
    auto good = extract_features(p.completion_nontoxic, spec, world);
    const auto bad = extract_features(p.completion_toxic, spec, world);
    for (std::size_t j = 0; j < good.size(); ++j) good[j] -= bad[j];
    diffs.push_back(std::move(good));
  }
  return diffs;
}

ExtractResult pairwise_extract(std::span<const PairedSample> pairs, const FeatureSpec& spec,
                               const IrlConfig& cfg, const WorldConfig& world,
                               const EpochCallback& on_epoch) {
  if (pairs.empty()) throw ConfigError("pairwise extraction needs at least one pair");
  const auto dim = spec.dimension(world.vocab_size);
  if (dim == 0) throw ConfigError("zero-dimensional features");
  const auto diffs = pair_differences(pairs, spec, world);
  return pairwise_extract_diffs(diffs, initial_weights(dim, cfg), cfg, on_epoch);
}

double pair_ordering_accuracy(std::span<const PairedSample> pairs, const RewardWeights& w,
                              const FeatureSpec& spec, const WorldConfig& world) {
  if (pairs.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto& p : pairs)
    if (reward_of(p.completion_nontoxic, w, spec, world) - reward_of(p.completion_toxic, w, spec, world) > 0.0)
      ++correct;
  return static_cast<double>(correct) / static_cast<double>(pairs.size());
}

RewardWeights groundtruth_weights(const FeatureSpec& spec, const WorldConfig& world) {
  RewardWeights w{std::vector<double>(spec.dimension(world.vocab_size), 0.0)};
  if (spec.unigram) {
    for (Token t = 0; t < world.vocab_size; ++t)
      w.w[static_cast<std::size_t>(t)] = world.is_toxic(t) ? -1.0 : 1.0;
  } else if (spec.lexicon_fraction) {
    w.w[spec.lexicon_index(world.vocab_size)] = -1.0;
  } else {
    throw ConfigError("groundtruth weights need unigram or lexicon features");
  }
  const double n = w.norm();
  for (double& x : w.w) x /= n;
  return w;
}

namespace {
constexpr const char* kWeightsFormat = "irllab-weights";
constexpr int kWeightsVersion = 1;
}  // namespace

void write_weights(std::ostream& os, const WeightsRecord& rec) {
  nlohmann::ordered_json doc;
  doc["format"] = kWeightsFormat;
  doc["version"] = kWeightsVersion;
  doc["spec"] = {{"unigram", rec.spec.unigram},
                 {"bigram", rec.spec.bigram},
                 {"lexicon_fraction", rec.spec.lexicon_fraction},
                 {"normalize_by_length", rec.spec.normalize_by_length}};
  doc["dimension"] = rec.weights.w.size();
  doc["w"] = rec.weights.w;
  doc["norm"] = rec.weights.norm();
  doc["strategy"] = rec.strategy;
  doc["epochs"] = rec.epochs;
  doc["seed"] = rec.seed;
  doc["final_accuracy"] = rec.final_accuracy;
  os << doc.dump(1) << '\n';
}

WeightsRecord read_weights(std::istream& is) {
  try {
    const auto doc = nlohmann::json::parse(is);
    if (doc.at("format").get<std::string>() != kWeightsFormat) throw FormatError("not a weights file");
    if (doc.at("version").get<int>() != kWeightsVersion) throw FormatError("unsupported weights version");
    WeightsRecord rec;
    const auto& s = doc.at("spec");
    rec.spec = {s.at("unigram").get<bool>(), s.at("bigram").get<bool>(),
                s.at("lexicon_fraction").get<bool>(), s.at("normalize_by_length").get<bool>()};
    rec.weights.w = doc.at("w").get<std::vector<double>>();
    if (rec.weights.w.size() != doc.at("dimension").get<std::size_t>())
      throw FormatError("weights dimension field disagrees with entries");
    rec.strategy = doc.at("strategy").get<std::string>();
    rec.epochs = doc.at("epochs").get<int>();
    rec.seed = doc.at("seed").get<std::uint64_t>();
    rec.final_accuracy = doc.at("final_accuracy").get<double>();
    return rec;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("weights file: ") + e.what());
  }
}

}  // namespace irllab
