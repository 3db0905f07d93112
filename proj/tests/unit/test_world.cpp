#include <algorithm>
#include <numeric>
#include <sstream>

#include "doctest.h"
#include "irllab/error.hpp"
#include "irllab/oracle.hpp"
#include "irllab/random.hpp"
#include "irllab/world.hpp"

using namespace irllab;

namespace {

WorldConfig tiny_world(int vocab) {
  WorldConfig w;
  w.vocab_size = vocab;
  w.toxic_lexicon = {static_cast<Token>(vocab - 1)};
  w.max_len = 8;
  w.prompt_len = 2;
  return w;
}

Sequence random_sequence(Rng& rng, const WorldConfig& world) {
  Sequence s;
  const auto len = 1 + uniform_index(rng, static_cast<std::size_t>(world.max_len));
  for (std::size_t i = 0; i < len; ++i)
    s.tokens.push_back(static_cast<Token>(uniform_index(rng, static_cast<std::size_t>(world.vocab_size))));
  s.prompt_boundary = uniform_index(rng, len + 1);
  return s;
}

}  // namespace

TEST_CASE("unigram counts") {
  const auto world = tiny_world(3);
  const FeatureSpec spec{true, false, false, false};
  const auto phi = extract_features(Sequence{{1, 1, 2}, 0}, spec, world);
  CHECK(phi == FeatureVector{0, 2, 1});
}

TEST_CASE("empty completion gives zero lexicon fraction") {
  const auto world = tiny_world(4);
  const FeatureSpec spec{false, false, true, true};
  CHECK(extract_features(Sequence{{0, 1}, 2}, spec, world) == FeatureVector{0.0});
  CHECK(extract_features(Sequence{{}, 0}, FeatureSpec{}, world) ==
        FeatureVector(FeatureSpec{}.dimension(4), 0.0));
}

TEST_CASE("lexicon fraction counts toxic tokens") {
  auto world = tiny_world(4);
  world.toxic_lexicon = {3};
  const FeatureSpec spec{false, false, true, false};
  CHECK(extract_features(Sequence{{0, 3, 3, 0}, 0}, spec, world) == FeatureVector{0.5});
}

TEST_CASE("out-of-range token is an invalid sequence") {
  const auto world = tiny_world(3);
  CHECK_THROWS_AS(extract_features(Sequence{{0, 7}, 0}, FeatureSpec{}, world), InvalidSequenceError);
  CHECK_THROWS_AS(extract_features(Sequence{{0, 1}, 3}, FeatureSpec{}, world), InvalidSequenceError);
}

TEST_CASE("bigram layout and dimension") {
  const auto world = tiny_world(3);
  const FeatureSpec spec{false, true, false, false};
  const auto phi = extract_features(Sequence{{0, 1, 2}, 0}, spec, world);
  REQUIRE(phi.size() == 9);
  CHECK(phi[0 * 3 + 1] == 1.0);
  CHECK(phi[1 * 3 + 2] == 1.0);
  CHECK(std::accumulate(phi.begin(), phi.end(), 0.0) == 2.0);
}

TEST_CASE("feature properties over random sequences") {
  const auto world = tiny_world(5);
  Rng rng = make_stream(7);
  for (int trial = 0; trial < 300; ++trial) {
    const FeatureSpec spec{uniform01(rng) < 0.5, uniform01(rng) < 0.5, uniform01(rng) < 0.5,
                           uniform01(rng) < 0.5};
    const auto a = random_sequence(rng, world);
    const auto phi = extract_features(a, spec, world);
    CHECK(phi.size() == spec.dimension(world.vocab_size));
    if (spec.lexicon_fraction) {
      CHECK(phi.back() >= 0.0);
      CHECK(phi.back() <= 1.0);
    }
  }
  // Unnormalized unigram counts are additive under concatenation.
  const FeatureSpec counts{true, false, false, false};
  for (int trial = 0; trial < 200; ++trial) {
    auto a = random_sequence(rng, world), b = random_sequence(rng, world);
    a.prompt_boundary = b.prompt_boundary = 0;
    a.tokens.resize(std::min<std::size_t>(a.tokens.size(), 4));
    b.tokens.resize(std::min<std::size_t>(b.tokens.size(), 4));
    Sequence ab{a.tokens, 0};
    ab.tokens.insert(ab.tokens.end(), b.tokens.begin(), b.tokens.end());
    const auto fa = extract_features(a, counts, world), fb = extract_features(b, counts, world),
               fab = extract_features(ab, counts, world);
    for (std::size_t j = 0; j < fab.size(); ++j) CHECK(fab[j] == fa[j] + fb[j]);
  }
}

TEST_CASE("transition appends") {
  const Sequence s{{1, 2}, 1};
  const auto next = s.append(3);
  CHECK(next.tokens == std::vector<Token>{1, 2, 3});
  CHECK(next.prompt_boundary == 1);
}

TEST_CASE("generate_corpus balance, determinism and validity") {
  const WorldConfig world;
  const auto corpus = generate_corpus(world, 100, 0.8, 0.35, 11);
  CHECK(corpus.size() == 200);
  CHECK(std::count_if(corpus.begin(), corpus.end(),
                      [](const auto& c) { return c.label == Label::Toxic; }) == 100);
  for (const auto& c : corpus) {
    CHECK(c.seq.tokens.size() == static_cast<std::size_t>(world.max_len));
    CHECK(c.seq.prompt_boundary == static_cast<std::size_t>(world.prompt_len));
    for (Token t : c.seq.prompt()) CHECK_FALSE(world.is_toxic(t));
  }
  std::ostringstream a, b;
  write_corpus(a, corpus);
  write_corpus(b, generate_corpus(world, 100, 0.8, 0.35, 11));
  CHECK(a.str() == b.str());
  CHECK_THROWS_AS(generate_corpus(world, 0, 0.8, 0.1, 1), EmptyCorpusError);
  CHECK_THROWS_AS(generate_corpus(world, 5, 0.1, 0.8, 1), ConfigError);
}

TEST_CASE("toxic class matches its Bernoulli rate") {
  const WorldConfig world;
  const auto corpus = generate_corpus(world, 500, 0.8, 0.1, 3);
  const FeatureSpec spec{false, false, true, true};
  double sum = 0.0;
  int n = 0;
  for (const auto& c : corpus)
    if (c.label == Label::Toxic) {
      sum += extract_features(c.seq, spec, world)[0];
      ++n;
    }
  CHECK(n == 500);
  CHECK(std::abs(sum / n - 0.8) <= 0.05);
}

TEST_CASE("split_prompt_target") {
  const auto [p, t] = split_prompt_target(Sequence{{5, 6, 7, 8}, 0}, 2);
  CHECK(p.tokens == std::vector<Token>{5, 6});
  CHECK(p.prompt_boundary == 2);
  CHECK(t.tokens == std::vector<Token>{7, 8});
  const auto [p2, t2] = split_prompt_target(Sequence{{5, 6}, 0}, 2);
  CHECK(p2.tokens == std::vector<Token>{5, 6});
  CHECK(t2.tokens.empty());
  CHECK_THROWS_AS(split_prompt_target(Sequence{{5}, 0}, 3), SplitError);
}

TEST_CASE("corpus file round trip and format") {
  const WorldConfig world;
  const auto corpus = generate_corpus(world, 3, 0.8, 0.2, 5);
  std::ostringstream out;
  write_corpus(out, corpus);
  CHECK(out.str().rfind("{\"label\":\"toxic\",\"prompt\":\"", 0) == 0);
  std::istringstream in(out.str());
  CHECK(read_corpus(in, world) == corpus);
  std::istringstream bad("{\"label\":\"toxic\",\"prompt\":\"1 2\",\"completion\":\"40\"}\n");
  CHECK_THROWS_AS(read_corpus(bad, world), InvalidSequenceError);
}

TEST_CASE("world config validation") {
  WorldConfig w;
  CHECK_NOTHROW(w.validate());
  w.toxic_lexicon = {};
  CHECK_THROWS_AS(w.validate(), ConfigError);
  w = WorldConfig{};
  w.prompt_len = w.max_len;
  CHECK_THROWS_AS(w.validate(), ConfigError);
  w = WorldConfig{};
  w.vocab_size = 3;
  w.toxic_lexicon = {0, 1, 2};
  CHECK_THROWS_AS(w.validate(), ConfigError);
}
