#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "irllab/policy.hpp"
#include "irllab/world.hpp"

namespace irllab {

struct PpoConfig {
  double clip_epsilon = 0.2;
  double gamma = 1.0;
  double gae_lambda = 0.95;
  double lr = 1.0;
  double value_lr = 0.5;
  double vf_coef = 1.0;
  double beta_kl = 0.035;
  int total_steps = 300;
  int batch_size = 16;
  int ppo_epochs = 4;
  bool whiten_advantages = true;
  std::uint64_t seed = 0;

  void validate() const;
};

// Tabular baseline over the same contexts as the policy.
struct ValueParams {
  std::vector<double> value_table;
};

struct TrainRecord {
  long step = 0;
  double total_loss = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double returns_mean = 0.0;
  double returns_std = 0.0;
  double reward_mean = 0.0;  // mean shaped episode reward: score - beta * sum_t kl_t
  double kl_estimate = 0.0;  // mean per-token log pi - log pi_ref
  bool operator==(const TrainRecord&) const = default;
};
using TrainLog = std::vector<TrainRecord>;

// G_t = r_t + gamma * G_{t+1}.
std::vector<double> rewards_to_go(std::span<const double> rewards, double gamma);

// GAE(lambda). `values` carries one bootstrap entry past the last reward.
std::vector<double> advantage_estimates(std::span<const double> rewards,
                                        std::span<const double> values, double gamma,
                                        double lambda);

inline double shaped_reward(double reward_model_score, double kl_estimate, double beta) {
  return reward_model_score - beta * kl_estimate;
}

// min(ratio * A, clip(ratio, 1 - eps, 1 + eps) * A) with ratio = exp(new - old).
double ppo_clip_objective(double new_logp, double old_logp, double advantage, double clip_epsilon);

// Scores a finished generation against the corpus sequence its prompt came from.
using SequenceRewardFn = std::function<double(const Sequence& generated, const Sequence& original)>;
// Optional per-state reward R(s_{t+1}) paid after each generated token.
using StateRewardFn = std::function<double(const Sequence& prefix)>;

struct RlhfResult {
  PolicyParams policy;
  ValueParams values;
  TrainLog log;
};

// PPO fine-tuning of `policy` against `reward`, with per-token KL shaping
// towards the frozen `reference`. Each step samples cfg.batch_size entries of
// `prompts` (full corpus sequences; their prompt part seeds generation and the
// whole sequence is handed to the scorer as the original).
RlhfResult train_rlhf(const PolicyParams& policy, const PolicyParams& reference,
                      const SequenceRewardFn& reward, std::span<const Sequence> prompts,
                      const PpoConfig& cfg, const WorldConfig& world,
                      const StateRewardFn& state_reward = {});

void write_train_log(std::ostream& os, const TrainLog& log);
TrainLog read_train_log(std::istream& is);

}  // namespace irllab
