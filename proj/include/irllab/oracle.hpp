#pragma once

#include <vector>

#include "irllab/world.hpp"

namespace irllab {

struct OracleConfig {
  std::vector<Token> toxic_lexicon{9, 10, 11};
  double classify_threshold = 0.5;

  void validate() const;
};

// Groundtruth toxicity scorer f_tox: the fraction of completion tokens that
// belong to the lexicon. Stateless after construction.
class ToxicityOracle {
 public:
  explicit ToxicityOracle(OracleConfig cfg);

  double tox_score(const Sequence& seq) const;
  // f_tox(original) - f_tox(generated); positive when the generation is
  // cleaner than the original.
  double pairwise_reward(const Sequence& generated, const Sequence& original) const;
  // Inclusive boundary: score >= threshold is toxic.
  bool classify_toxic(const Sequence& seq) const;

  const OracleConfig& config() const { return cfg_; }

 private:
  OracleConfig cfg_;
  std::vector<bool> mask_;
};

}  // namespace irllab
