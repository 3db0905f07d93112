#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "irllab/random.hpp"
#include "irllab/world.hpp"

namespace irllab {

// Tabular autoregressive softmax policy. The next-token logits depend on the
// last `context_window` tokens of the sequence, with positions before the
// sequence start filled by the pad id (== vocab_size). Storage is dense over
// all (vocab_size+1)^k contexts; contexts never written keep zero logits,
// which makes the policy uniform there.
class PolicyParams {
 public:
  PolicyParams(int vocab_size, int context_window);

  int vocab_size() const { return vocab_; }
  int context_window() const { return window_; }
  std::size_t num_contexts() const { return num_contexts_; }

  // Context index for predicting the token at position `prefix.size()`.
  std::size_t context_index(std::span<const Token> prefix) const;
  std::vector<Token> context_tokens(std::size_t ctx) const;

  std::span<const double> logits(std::size_t ctx) const {
    return {table_.data() + ctx * static_cast<std::size_t>(vocab_),
            static_cast<std::size_t>(vocab_)};
  }
  std::span<double> logits(std::size_t ctx) {
    return {table_.data() + ctx * static_cast<std::size_t>(vocab_),
            static_cast<std::size_t>(vocab_)};
  }
  std::span<const double> table() const { return table_; }
  std::span<double> table() { return table_; }

  bool operator==(const PolicyParams&) const = default;

 private:
  int vocab_;
  int window_;
  std::size_t num_contexts_;
  std::vector<double> table_;
};

struct GenerationConfig {
  double temperature = 0.0;  // 0 selects greedy argmax decoding
  int max_new_tokens = 12;
  std::uint64_t seed = 0;
};

// Numerically stable softmax of logits / temperature (temperature > 0).
std::vector<double> softmax(std::span<const double> logits, double temperature = 1.0);
// Index of the largest entry; ties resolve to the lowest index.
std::size_t argmax_lowest(std::span<const double> values);

std::vector<double> next_token_distribution(const PolicyParams& params,
                                            std::span<const Token> context);

// Extends `prompt.prompt()` by cfg.max_new_tokens tokens. The result has its
// prompt boundary at the end of the prompt.
Sequence generate(const PolicyParams& params, const Sequence& prompt, const GenerationConfig& cfg,
                  const WorldConfig& world);
// Same, drawing from a caller-owned stream (ignores cfg.seed).
Sequence generate(const PolicyParams& params, const Sequence& prompt, const GenerationConfig& cfg,
                  const WorldConfig& world, Rng& rng);

// Sum over completion positions of log pi(token | context).
double sequence_log_prob(const PolicyParams& params, const Sequence& seq);

struct MleSettings {
  int context_window = 2;
  int epochs = 200;
  double lr = 0.02;
};

// Full-batch gradient ascent on the total completion log-likelihood.
PolicyParams mle_fit(std::span<const Sequence> corpus, const WorldConfig& world, int epochs,
                     double lr, int context_window = 2);
PolicyParams mle_fit(PolicyParams init, std::span<const Sequence> corpus, const WorldConfig& world,
                     int epochs, double lr);
double corpus_log_likelihood(const PolicyParams& params, std::span<const Sequence> corpus);

struct KlEstimate {
  double raw = 0.0;       // unclipped Monte-Carlo estimate, per completion token
  std::size_t tokens = 0;
  double value() const { return raw > 0.0 ? raw : 0.0; }
};

// Monte-Carlo estimate of KL(p || q) per completion token, sampling
// completions from p at temperature 1 up to world.max_len.
KlEstimate kl_divergence(const PolicyParams& p, const PolicyParams& q,
                         std::span<const Sequence> prompts, int samples_per_prompt,
                         std::uint64_t seed, const WorldConfig& world);

void write_policy(std::ostream& os, const PolicyParams& params);
PolicyParams read_policy(std::istream& is);

}  // namespace irllab
