#include "irllab/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <string>

#include "irllab/error.hpp"
#include "irllab/kernels.hpp"
#include "json.hpp"

namespace irllab {

void PpoConfig::validate() const {
  if (!(clip_epsilon > 0.0)) throw ConfigError("clip_epsilon must be positive");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("ppo gamma must lie in [0,1]");
  if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) throw ConfigError("gae_lambda must lie in [0,1]");
  if (!(beta_kl >= 0.0)) throw ConfigError("beta_kl must be non-negative");
  if (total_steps < 0) throw ConfigError("total_steps must be non-negative");
  if (batch_size <= 0) throw ConfigError("batch_size must be positive");
  if (ppo_epochs <= 0) throw ConfigError("ppo_epochs must be positive");
  if (!std::isfinite(lr) || !std::isfinite(value_lr)) throw ConfigError("learning rates must be finite");
}

std::vector<double> rewards_to_go(std::span<const double> rewards, double gamma) {
  std::vector<double> g(rewards.size());
  double acc = 0.0;
  for (std::size_t t = rewards.size(); t-- > 0;) {
    acc = rewards[t] + gamma * acc;
    g[t] = acc;
  }
  return g;
}

std::vector<double> advantage_estimates(std::span<const double> rewards,
                                        std::span<const double> values, double gamma,
                                        double lambda) {
  if (values.size() != rewards.size() + 1)
    throw ShapeError("values must have one more entry than rewards (got " +
                     std::to_string(values.size()) + " vs " + std::to_string(rewards.size()) + ")");
  std::vector<double> adv(rewards.size());
  double acc = 0.0;
  for (std::size_t t = rewards.size(); t-- > 0;) {
    const double delta = rewards[t] + gamma * values[t + 1] - values[t];
    acc = delta + gamma * lambda * acc;
    adv[t] = acc;
  }
  return adv;
}

double ppo_clip_objective(double new_logp, double old_logp, double advantage, double clip_epsilon) {
  const double ratio = std::exp(new_logp - old_logp);
  const double clipped = std::clamp(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon);
  return std::min(ratio * advantage, clipped * advantage);
}

namespace {

double log_softmax_at(std::span<const double> logits, std::size_t a) {
  const double hi = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - hi);
  return logits[a] - hi - std::log(z);
}

// One token of experience.
struct Step {
  std::size_t ctx;
  std::size_t action;
  double old_logp;
  double advantage;
  double target;  // rewards-to-go
};

struct Moments {
  double mean = 0.0;
  double stddev = 0.0;
};

Moments moments(std::span<const double> xs) {
  Moments m;
  if (xs.empty()) return m;
  for (double x : xs) m.mean += x;
  m.mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - m.mean) * (x - m.mean);
  m.stddev = std::sqrt(var / static_cast<double>(xs.size()));
  return m;
}

}  // namespace

RlhfResult train_rlhf(const PolicyParams& policy, const PolicyParams& reference,
                      const SequenceRewardFn& reward, std::span<const Sequence> prompts,
                      const PpoConfig& cfg, const WorldConfig& world,
                      const StateRewardFn& state_reward) {
  cfg.validate();
  if (prompts.empty()) throw ConfigError("train_rlhf needs at least one prompt");
  if (!(policy.vocab_size() == reference.vocab_size() &&
        policy.context_window() == reference.context_window()))
    throw ConfigError("policy and reference have different shapes");
  for (const auto& p : prompts) validate_sequence(p, world);

  RlhfResult result{policy, ValueParams{std::vector<double>(policy.num_contexts(), 0.0)}, {}};
  auto& params = result.policy;
  auto& values = result.values.value_table;
  const auto vocab = static_cast<std::size_t>(params.vocab_size());

  for (long step = 0; step < cfg.total_steps; ++step) {
    // Sample the prompt batch.
    Rng rng = make_stream(cfg.seed, {0x5050ull, static_cast<std::uint64_t>(step)});
    std::vector<Sequence> batch;
    batch.reserve(static_cast<std::size_t>(cfg.batch_size));
    for (int b = 0; b < cfg.batch_size; ++b) batch.push_back(prompts[uniform_index(rng, prompts.size())]);
    const auto rollouts = kernels::rollout_batch(params, batch, world, 1.0, cfg.seed,
                                                 0x1000'0000ull + static_cast<std::uint64_t>(step));

    // Score, shape and estimate advantages.
    std::vector<Step> steps;
    std::vector<double> shaped_episode, all_targets;
    double kl_sum = 0.0;
    std::size_t kl_count = 0;
    for (std::size_t e = 0; e < rollouts.size(); ++e) {
      const auto& seq = rollouts[e];
      const std::span<const Token> all(seq.tokens);
      const std::size_t begin = seq.prompt_boundary, n = seq.tokens.size() - begin;
      if (n == 0) continue;
      std::vector<double> rewards(n), vals(n + 1, 0.0);
      const double score = reward ? reward(seq, batch[e]) : 0.0;
      double episode = score;
      std::vector<Step> local(n);
      Sequence prefix{{seq.tokens.begin(), seq.tokens.begin() + static_cast<std::ptrdiff_t>(begin)}, begin};
      for (std::size_t t = 0; t < n; ++t) {
        const std::size_t pos = begin + t;
        const auto ctx = params.context_index(all.first(pos));
        const auto a = static_cast<std::size_t>(seq.tokens[pos]);
        const double logp = log_softmax_at(params.logits(ctx), a);
        const double ref_logp = log_softmax_at(reference.logits(ctx), a);
        const double kl = logp - ref_logp;
        kl_sum += kl;
        ++kl_count;
        rewards[t] = shaped_reward(0.0, kl, cfg.beta_kl);
        episode -= cfg.beta_kl * kl;
        if (state_reward) {
          prefix.tokens.push_back(seq.tokens[pos]);
          const double r = state_reward(prefix);
          rewards[t] += r;
          episode += r;
        }
        vals[t] = values[ctx];
        local[t] = Step{ctx, a, logp, 0.0, 0.0};
      }
      rewards[n - 1] += score;
      const auto adv = advantage_estimates(rewards, vals, cfg.gamma, cfg.gae_lambda);
      const auto targets = rewards_to_go(rewards, cfg.gamma);
      for (std::size_t t = 0; t < n; ++t) {
        local[t].advantage = adv[t];
        local[t].target = targets[t];
        all_targets.push_back(targets[t]);
      }
      steps.insert(steps.end(), local.begin(), local.end());
      shaped_episode.push_back(episode);
    }

    TrainRecord rec;
    rec.step = step;
    if (steps.empty()) {
      result.log.push_back(rec);
      continue;
    }
    const double n_steps = static_cast<double>(steps.size());

    if (cfg.whiten_advantages) {
      std::vector<double> adv(steps.size());
      for (std::size_t i = 0; i < steps.size(); ++i) adv[i] = steps[i].advantage;
      const auto m = moments(adv);
      for (auto& s : steps) s.advantage = (s.advantage - m.mean) / (m.stddev + 1e-8);
    }

    // Value loss against the pre-update baseline.
    double value_loss = 0.0;
    for (const auto& s : steps) value_loss += (values[s.ctx] - s.target) * (values[s.ctx] - s.target);
    value_loss /= n_steps;

    // Clipped-surrogate ascent.
    double policy_loss = 0.0;
    std::vector<double> grad(params.table().size(), 0.0);
    for (int epoch = 0; epoch < cfg.ppo_epochs; ++epoch) {
      std::fill(grad.begin(), grad.end(), 0.0);
      double objective = 0.0;
      for (const auto& s : steps) {
        const auto logits = params.logits(s.ctx);
        const double new_logp = log_softmax_at(logits, s.action);
        const double ratio = std::exp(new_logp - s.old_logp);
        const double obj = ppo_clip_objective(new_logp, s.old_logp, s.advantage, cfg.clip_epsilon);
        objective += obj;
        // Gradient flows only through the unclipped branch.
        if (ratio * s.advantage <= obj) {
          const auto p = softmax(logits);
          double* g = grad.data() + s.ctx * vocab;
          for (std::size_t a = 0; a < vocab; ++a)
            g[a] += s.advantage * ratio * ((a == s.action ? 1.0 : 0.0) - p[a]);
        }
      }
      if (epoch == 0) policy_loss = -objective / n_steps;
      auto table = params.table();
      for (std::size_t i = 0; i < table.size(); ++i) table[i] += cfg.lr * grad[i] / n_steps;
    }

    // Per-context least-squares step towards the mean target.
    std::vector<double> target_sum(values.size(), 0.0), target_n(values.size(), 0.0);
    for (const auto& s : steps) {
      target_sum[s.ctx] += s.target;
      target_n[s.ctx] += 1.0;
    }
    for (std::size_t c = 0; c < values.size(); ++c)
      if (target_n[c] > 0.0) values[c] += cfg.value_lr * (target_sum[c] / target_n[c] - values[c]);

    const auto ret = moments(all_targets);
    rec.policy_loss = policy_loss;
    rec.value_loss = value_loss;
    rec.total_loss = policy_loss + cfg.vf_coef * value_loss;
    rec.returns_mean = ret.mean;
    rec.returns_std = ret.stddev;
    rec.reward_mean = moments(shaped_episode).mean;
    rec.kl_estimate = kl_count ? kl_sum / static_cast<double>(kl_count) : 0.0;

    for (double x : {rec.total_loss, rec.policy_loss, rec.value_loss, rec.returns_mean,
                     rec.returns_std, rec.reward_mean, rec.kl_estimate})
      if (!std::isfinite(x)) throw DivergenceError(step, "non-finite PPO statistic");
    for (double x : params.table())
      if (!std::isfinite(x)) throw DivergenceError(step, "non-finite policy logit");
    result.log.push_back(rec);
  }
  return result;
}

void write_train_log(std::ostream& os, const TrainLog& log) {
  for (const auto& r : log) {
    nlohmann::ordered_json rec;
    rec["step"] = r.step;
    rec["total_loss"] = r.total_loss;
    rec["policy_loss"] = r.policy_loss;
    rec["value_loss"] = r.value_loss;
    rec["returns_mean"] = r.returns_mean;
    rec["returns_std"] = r.returns_std;
    rec["reward_mean"] = r.reward_mean;
    rec["kl_estimate"] = r.kl_estimate;
    os << rec.dump() << '\n';
  }
}

TrainLog read_train_log(std::istream& is) {
  TrainLog log;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      TrainRecord r;
      r.step = j.at("step").get<long>();
      r.total_loss = j.at("total_loss").get<double>();
      r.policy_loss = j.at("policy_loss").get<double>();
      r.value_loss = j.at("value_loss").get<double>();
      r.returns_mean = j.at("returns_mean").get<double>();
      r.returns_std = j.at("returns_std").get<double>();
      r.reward_mean = j.at("reward_mean").get<double>();
      r.kl_estimate = j.at("kl_estimate").get<double>();
      if (!log.empty() && r.step <= log.back().step) throw FormatError("train log steps not increasing");
      log.push_back(r);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("train log: ") + e.what());
    }
  }
  return log;
}

}  // namespace irllab
