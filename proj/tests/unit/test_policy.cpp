#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include "doctest.h"
#include "irllab/error.hpp"
#include "irllab/policy.hpp"

using namespace irllab;

namespace {

WorldConfig small_world(int vocab, int prompt_len, int max_len) {
  WorldConfig w;
  w.vocab_size = vocab;
  w.toxic_lexicon = {static_cast<Token>(vocab - 1)};
  w.prompt_len = prompt_len;
  w.max_len = max_len;
  return w;
}

PolicyParams random_policy(int vocab, int window, std::uint64_t seed, double scale) {
  PolicyParams p(vocab, window);
  Rng rng = make_stream(seed);
  for (double& x : p.table()) x = scale * standard_normal(rng);
  return p;
}

// Exact KL(p || q) per token for one-step completions, by enumeration.
double exact_one_step_kl(const PolicyParams& p, const PolicyParams& q, std::span<const Token> prompt) {
  const auto pp = next_token_distribution(p, prompt);
  const auto qq = next_token_distribution(q, prompt);
  double kl = 0.0;
  for (std::size_t a = 0; a < pp.size(); ++a) kl += pp[a] * (std::log(pp[a]) - std::log(qq[a]));
  return kl;
}

}  // namespace

TEST_CASE("next_token_distribution") {
  PolicyParams uniform(4, 2);
  for (double p : next_token_distribution(uniform, std::vector<Token>{1, 2}))
    CHECK(p == doctest::Approx(0.25));

  PolicyParams two(2, 1);
  const std::vector<Token> ctx{0};
  two.logits(two.context_index(ctx))[0] = std::log(2.0);
  const auto p = next_token_distribution(two, ctx);
  CHECK(p[0] == doctest::Approx(2.0 / 3.0));
  CHECK(p[1] == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("probabilities normalize for random logits") {
  Rng rng = make_stream(5);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> logits(1 + uniform_index(rng, 20));
    for (double& l : logits) l = 30.0 * standard_normal(rng);
    const auto p = softmax(logits);
    CHECK(std::abs(std::accumulate(p.begin(), p.end(), 0.0) - 1.0) <= 1e-9);
  }
}

TEST_CASE("contexts pad at sequence start") {
  PolicyParams p(3, 2);
  CHECK(p.num_contexts() == 16);
  CHECK(p.context_tokens(p.context_index(std::vector<Token>{})) == std::vector<Token>{3, 3});
  CHECK(p.context_tokens(p.context_index(std::vector<Token>{2})) == std::vector<Token>{3, 2});
  CHECK(p.context_tokens(p.context_index(std::vector<Token>{0, 1, 2})) == std::vector<Token>{1, 2});
}

TEST_CASE("greedy decoding breaks ties to the lowest token and is deterministic") {
  const WorldConfig world;
  PolicyParams uniform(world.vocab_size, 2);
  const Sequence prompt{{1, 2, 3, 4}, 4};
  const auto out = generate(uniform, prompt, GenerationConfig{0.0, 12, 1}, world);
  CHECK(out.prompt_boundary == 4);
  for (Token t : out.completion()) CHECK(t == 0);

  const auto policy = random_policy(world.vocab_size, 2, 9, 1.0);
  CHECK(generate(policy, prompt, {0.0, 12, 1}, world) == generate(policy, prompt, {0.0, 12, 77}, world));
  CHECK(generate(policy, prompt, {1.0, 12, 5}, world) == generate(policy, prompt, {1.0, 12, 5}, world));
  CHECK_THROWS_AS(generate(policy, prompt, {0.0, 13, 1}, world), GenerationError);
}

TEST_CASE("greedy decode ignores a constant shift of a context's logits") {
  const WorldConfig world;
  auto policy = random_policy(world.vocab_size, 2, 21, 1.0);
  const Sequence prompt{{0, 1, 2, 3}, 4};
  const auto before = generate(policy, prompt, {0.0, 12, 0}, world);
  auto shifted = policy;
  for (std::size_t ctx = 0; ctx < shifted.num_contexts(); ++ctx)
    for (double& l : shifted.logits(ctx)) l += static_cast<double>(ctx % 7) - 3.0;
  CHECK(generate(shifted, prompt, {0.0, 12, 0}, world) == before);
}

TEST_CASE("sequence_log_prob") {
  const WorldConfig world = small_world(4, 1, 4);
  PolicyParams uniform(4, 2);
  CHECK(sequence_log_prob(uniform, Sequence{{0, 1, 2, 3}, 1}) == doctest::Approx(3.0 * std::log(0.25)));

  PolicyParams sharp(4, 2);
  for (std::size_t ctx = 0; ctx < sharp.num_contexts(); ++ctx) sharp.logits(ctx)[2] = 40.0;
  const auto out = generate(sharp, Sequence{{1}, 1}, {0.0, 3, 0}, world);
  CHECK(std::abs(sequence_log_prob(sharp, out)) <= 1e-9 * 3);

  const auto policy = random_policy(12, 2, 4, 2.0);
  const WorldConfig big;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto seq = generate(policy, Sequence{{0, 1, 2, 3}, 4}, {1.0, 12, s}, big);
    const double lp = sequence_log_prob(policy, seq);
    CHECK(std::isfinite(lp));
    CHECK(lp <= 0.0);
  }
}

TEST_CASE("mle_fit") {
  const WorldConfig world;
  const std::vector<Sequence> corpus(5, Sequence{{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 0, 2, 4, 6}, 4});

  SUBCASE("zero learning rate is a no-op") {
    CHECK(mle_fit(corpus, world, 50, 0.0) == PolicyParams(world.vocab_size, 2));
  }
  SUBCASE("converges to the single training sequence") {
    const auto fitted = mle_fit(corpus, world, 300, 0.05);
    const auto out = generate(fitted, corpus[0], {0.0, 12, 0}, world);
    CHECK(out == corpus[0]);
  }
  SUBCASE("small steps increase the likelihood") {
    const auto mixed = generate_corpus(world, 20, 0.8, 0.35, 2);
    std::vector<Sequence> seqs;
    for (const auto& c : mixed) seqs.push_back(c.seq);
    const PolicyParams init(world.vocab_size, 2);
    double prev = corpus_log_likelihood(init, seqs);
    for (int epochs : {1, 5, 20, 80}) {
      const double ll = corpus_log_likelihood(mle_fit(seqs, world, epochs, 0.01), seqs);
      CHECK(ll >= prev);
      prev = ll;
    }
  }
  CHECK_THROWS_AS(mle_fit(std::vector<Sequence>{}, world, 1, 0.1), FitError);
}

TEST_CASE("kl_divergence") {
  const WorldConfig world = small_world(2, 1, 2);
  PolicyParams p(2, 1), q(2, 1);
  const std::vector<Token> prompt_tokens{0};
  q.logits(q.context_index(prompt_tokens))[0] = std::log(2.0);
  const std::vector<Sequence> prompts{Sequence{prompt_tokens, 1}};

  const double exact = exact_one_step_kl(p, q, prompt_tokens);
  CHECK(exact == doctest::Approx(0.5 * std::log(0.5 / (2.0 / 3.0)) + 0.5 * std::log(0.5 / (1.0 / 3.0))));
  CHECK(exact == doctest::Approx(0.0589).epsilon(1e-3));

  const auto est = kl_divergence(p, q, prompts, 10000, 3, world);
  CHECK(est.tokens == 10000);
  CHECK(std::abs(est.raw - exact) <= 0.01);

  const auto self = kl_divergence(q, q, prompts, 100, 3, world);
  CHECK(self.raw == 0.0);

  const WorldConfig big;
  const auto a = random_policy(12, 2, 1, 1.0);
  CHECK(kl_divergence(a, a, std::vector<Sequence>{Sequence{{0, 1, 2, 3}, 4}}, 50, 9, big).raw == 0.0);
}

TEST_CASE("checkpoint round trips bit-exactly") {
  auto policy = random_policy(12, 2, 17, 3.0);
  policy.logits(5)[3] = -0.0;
  std::ostringstream out;
  write_policy(out, policy);
  std::istringstream in(out.str());
  const auto back = read_policy(in);
  CHECK(back.vocab_size() == 12);
  CHECK(back.context_window() == 2);
  for (std::size_t i = 0; i < policy.table().size(); ++i) {
    CHECK(std::memcmp(&policy.table()[i], &back.table()[i], sizeof(double)) == 0);
  }

  std::istringstream garbage("{\"format\":\"other\"}");
  CHECK_THROWS_AS(read_policy(garbage), FormatError);
}
