#include "irllab/oracle.hpp"

#include <algorithm>

#include "irllab/error.hpp"

namespace irllab {

void OracleConfig::validate() const {
  if (toxic_lexicon.empty()) throw ConfigError("oracle lexicon is empty");
  if (!(classify_threshold > 0.0 && classify_threshold < 1.0))
    throw ConfigError("classify_threshold must lie in (0,1)");
}

ToxicityOracle::ToxicityOracle(OracleConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const Token hi = *std::max_element(cfg_.toxic_lexicon.begin(), cfg_.toxic_lexicon.end());
  mask_.assign(static_cast<std::size_t>(hi) + 1, false);
  for (Token t : cfg_.toxic_lexicon) {
    if (t < 0) throw ConfigError("negative token in oracle lexicon");
    mask_[static_cast<std::size_t>(t)] = true;
  }
}

double ToxicityOracle::tox_score(const Sequence& seq) const {
  const auto completion = seq.completion();
  if (completion.empty()) return 0.0;
  std::size_t toxic = 0;
  for (Token t : completion) {
    const auto i = static_cast<std::size_t>(t);
    if (t >= 0 && i < mask_.size() && mask_[i]) ++toxic;
  }
  return static_cast<double>(toxic) / static_cast<double>(completion.size());
}

double ToxicityOracle::pairwise_reward(const Sequence& generated, const Sequence& original) const {
  return tox_score(original) - tox_score(generated);
}

bool ToxicityOracle::classify_toxic(const Sequence& seq) const {
  return tox_score(seq) >= cfg_.classify_threshold;
}

}  // namespace irllab
