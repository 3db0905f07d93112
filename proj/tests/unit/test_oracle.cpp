#include <algorithm>

#include "doctest.h"
#include "irllab/oracle.hpp"
#include "irllab/random.hpp"

using namespace irllab;

namespace {
Sequence completion(std::vector<Token> toks) { return Sequence{std::move(toks), 0}; }
}  // namespace

TEST_CASE("tox_score is the lexicon fraction of the completion") {
  const ToxicityOracle oracle{OracleConfig{}};
  CHECK(oracle.tox_score(completion({9, 10, 0, 1, 2, 3})) == doctest::Approx(1.0 / 3.0));
  CHECK(oracle.tox_score(completion({})) == 0.0);
  CHECK(oracle.tox_score(completion({9, 9, 9})) == 1.0);
  // Prompt tokens are ignored.
  CHECK(oracle.tox_score(Sequence{{9, 9, 0, 1}, 2}) == 0.0);
}

TEST_CASE("pairwise reward") {
  const ToxicityOracle oracle{OracleConfig{}};
  // f_tox(orig) = 0.6, f_tox(gen) = 0.2
  const auto orig = completion({9, 9, 9, 0, 0});
  const auto gen = completion({9, 0, 0, 0, 0});
  CHECK(oracle.pairwise_reward(gen, orig) == doctest::Approx(0.4));
  CHECK(oracle.pairwise_reward(orig, orig) == 0.0);
  CHECK(oracle.pairwise_reward(completion({9, 10, 11}), completion({0, 1, 2})) == -1.0);
}

TEST_CASE("classification boundary is inclusive") {
  const ToxicityOracle oracle{OracleConfig{}};
  CHECK(oracle.classify_toxic(completion({9, 0})));
  CHECK_FALSE(oracle.classify_toxic(completion({0, 1})));
  CHECK(oracle.classify_toxic(completion({9, 11})));
}

TEST_CASE("oracle properties") {
  const ToxicityOracle oracle{OracleConfig{}};
  Rng rng = make_stream(3);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<Token> a(1 + uniform_index(rng, 12)), b(1 + uniform_index(rng, 12));
    for (auto& t : a) t = static_cast<Token>(uniform_index(rng, 12));
    for (auto& t : b) t = static_cast<Token>(uniform_index(rng, 12));
    const auto sa = completion(a), sb = completion(b);
    CHECK(oracle.pairwise_reward(sa, sb) == -oracle.pairwise_reward(sb, sa));
    CHECK(oracle.pairwise_reward(sa, sa) == 0.0);
    auto shuffled = a;
    std::reverse(shuffled.begin(), shuffled.end());
    std::rotate(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(uniform_index(rng, shuffled.size())), shuffled.end());
    CHECK(oracle.tox_score(completion(shuffled)) == oracle.tox_score(sa));
  }
}
