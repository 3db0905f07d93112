#include "irllab/policy.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>

#include "irllab/error.hpp"
#include "json.hpp"

namespace irllab {

PolicyParams::PolicyParams(int vocab_size, int context_window)
    : vocab_(vocab_size), window_(context_window), num_contexts_(1) {
  if (vocab_size <= 0) throw ConfigError("policy vocab_size must be positive");
  if (context_window <= 0 || context_window > 6)
    throw ConfigError("context_window must lie in [1,6]");
  for (int i = 0; i < window_; ++i) num_contexts_ *= static_cast<std::size_t>(vocab_ + 1);
  table_.assign(num_contexts_ * static_cast<std::size_t>(vocab_), 0.0);
}

std::size_t PolicyParams::context_index(std::span<const Token> prefix) const {
  const auto base = static_cast<std::size_t>(vocab_ + 1);
  const auto n = static_cast<std::ptrdiff_t>(prefix.size());
  std::size_t idx = 0;
  for (std::ptrdiff_t pos = n - window_; pos < n; ++pos) {
    Token t = pos < 0 ? static_cast<Token>(vocab_) : prefix[static_cast<std::size_t>(pos)];
    if (t < 0 || t >= vocab_ + (pos < 0 ? 1 : 0))
      throw InvalidSequenceError("context token " + std::to_string(t) + " out of range");
    idx = idx * base + static_cast<std::size_t>(t);
  }
  return idx;
}

std::vector<Token> PolicyParams::context_tokens(std::size_t ctx) const {
  const auto base = static_cast<std::size_t>(vocab_ + 1);
  std::vector<Token> out(static_cast<std::size_t>(window_));
  for (std::size_t i = out.size(); i-- > 0;) {
    out[i] = static_cast<Token>(ctx % base);
    ctx /= base;
  }
  return out;
}

std::vector<double> softmax(std::span<const double> logits, double temperature) {
  std::vector<double> p(logits.size());
  if (logits.empty()) return p;
  const double hi = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp((logits[i] - hi) / temperature);
    z += p[i];
  }
  for (double& x : p) x /= z;
  return p;
}

std::size_t argmax_lowest(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

std::vector<double> next_token_distribution(const PolicyParams& params,
                                            std::span<const Token> context) {
  return softmax(params.logits(params.context_index(context)));
}

Sequence generate(const PolicyParams& params, const Sequence& prompt, const GenerationConfig& cfg,
                  const WorldConfig& world, Rng& rng) {
  if (cfg.max_new_tokens <= 0) throw GenerationError("max_new_tokens must be positive");
  if (cfg.temperature < 0.0) throw GenerationError("temperature must be non-negative");
  const auto head = prompt.prompt();
  if (head.size() + static_cast<std::size_t>(cfg.max_new_tokens) >
      static_cast<std::size_t>(world.max_len))
    throw GenerationError("prompt length " + std::to_string(head.size()) + " + " +
                          std::to_string(cfg.max_new_tokens) + " new tokens exceeds max_len " +
                          std::to_string(world.max_len));
  Sequence out{{head.begin(), head.end()}, head.size()};
  out.tokens.reserve(head.size() + static_cast<std::size_t>(cfg.max_new_tokens));
  for (int step = 0; step < cfg.max_new_tokens; ++step) {
    const auto logits = params.logits(params.context_index(out.tokens));
    std::size_t next;
    if (cfg.temperature == 0.0) {
      next = argmax_lowest(logits);
    } else {
      const auto probs = softmax(logits, cfg.temperature);
      next = sample_categorical(rng, probs);
    }
    out.tokens.push_back(static_cast<Token>(next));
  }
  return out;
}

Sequence generate(const PolicyParams& params, const Sequence& prompt, const GenerationConfig& cfg,
                  const WorldConfig& world) {
  Rng rng = make_stream(cfg.seed);
  return generate(params, prompt, cfg, world, rng);
}

double sequence_log_prob(const PolicyParams& params, const Sequence& seq) {
  double total = 0.0;
  const std::span<const Token> all(seq.tokens);
  for (std::size_t pos = seq.prompt_boundary; pos < seq.tokens.size(); ++pos) {
    const auto logits = params.logits(params.context_index(all.first(pos)));
    const double hi = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double l : logits) z += std::exp(l - hi);
    total += logits[static_cast<std::size_t>(seq.tokens[pos])] - hi - std::log(z);
  }
  return total;
}

PolicyParams mle_fit(PolicyParams params, std::span<const Sequence> corpus,
                     const WorldConfig& world, int epochs, double lr) {
  if (corpus.empty()) throw FitError("empty corpus");
  if (params.vocab_size() != world.vocab_size) throw FitError("policy/world vocab mismatch");
  for (const auto& seq : corpus) validate_sequence(seq, world);

  // Per-context token counts are fixed across epochs; the gradient of the
  // total log-likelihood at a context is counts - n_ctx * softmax(logits).
  const auto v = static_cast<std::size_t>(params.vocab_size());
  std::vector<double> counts(params.num_contexts() * v, 0.0);
  std::vector<double> totals(params.num_contexts(), 0.0);
  for (const auto& seq : corpus) {
    const std::span<const Token> all(seq.tokens);
    for (std::size_t pos = seq.prompt_boundary; pos < seq.tokens.size(); ++pos) {
      const auto ctx = params.context_index(all.first(pos));
      counts[ctx * v + static_cast<std::size_t>(seq.tokens[pos])] += 1.0;
      totals[ctx] += 1.0;
    }
  }
  if (lr == 0.0) return params;

  for (int epoch = 0; epoch < epochs; ++epoch) {
    for (std::size_t ctx = 0; ctx < params.num_contexts(); ++ctx) {
      if (totals[ctx] == 0.0) continue;
      auto logits = params.logits(ctx);
      const auto p = softmax(logits);
      for (std::size_t a = 0; a < v; ++a) logits[a] += lr * (counts[ctx * v + a] - totals[ctx] * p[a]);
    }
  }
  return params;
}

PolicyParams mle_fit(std::span<const Sequence> corpus, const WorldConfig& world, int epochs,
                     double lr, int context_window) {
  return mle_fit(PolicyParams(world.vocab_size, context_window), corpus, world, epochs, lr);
}

double corpus_log_likelihood(const PolicyParams& params, std::span<const Sequence> corpus) {
  double total = 0.0;
  for (const auto& seq : corpus) total += sequence_log_prob(params, seq);
  return total;
}

KlEstimate kl_divergence(const PolicyParams& p, const PolicyParams& q,
                         std::span<const Sequence> prompts, int samples_per_prompt,
                         std::uint64_t seed, const WorldConfig& world) {
  if (p.vocab_size() != q.vocab_size()) throw ShapeError("KL between policies of different vocab");
  if (samples_per_prompt < 1) throw ConfigError("samples_per_prompt must be >= 1");
  KlEstimate est;
  double sum = 0.0;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    const int new_tokens = world.max_len - static_cast<int>(prompts[i].prompt_boundary);
    if (new_tokens <= 0) continue;
    Rng rng = make_stream(seed, {0x4B4Cull, i});
    const GenerationConfig gen{1.0, new_tokens, seed};
    for (int s = 0; s < samples_per_prompt; ++s) {
      const auto seq = generate(p, prompts[i], gen, world, rng);
      sum += sequence_log_prob(p, seq) - sequence_log_prob(q, seq);
      est.tokens += static_cast<std::size_t>(new_tokens);
    }
  }
  est.raw = est.tokens ? sum / static_cast<double>(est.tokens) : 0.0;
  return est;
}

namespace {
constexpr const char* kPolicyFormat = "irllab-policy";
constexpr int kPolicyVersion = 1;
}  // namespace

void write_policy(std::ostream& os, const PolicyParams& params) {
  nlohmann::ordered_json doc;
  doc["format"] = kPolicyFormat;
  doc["version"] = kPolicyVersion;
  doc["context_window"] = params.context_window();
  doc["vocab_size"] = params.vocab_size();
  auto entries = nlohmann::ordered_json::array();
  for (std::size_t ctx = 0; ctx < params.num_contexts(); ++ctx) {
    const auto logits = params.logits(ctx);
    // Untouched contexts (all +0.0) are implied by the format.
    const bool stored = std::any_of(logits.begin(), logits.end(),
                                    [](double x) { return x != 0.0 || std::signbit(x); });
    if (!stored) continue;
    nlohmann::ordered_json e;
    e["context"] = params.context_tokens(ctx);
    e["logits"] = std::vector<double>(logits.begin(), logits.end());
    entries.push_back(std::move(e));
  }
  doc["entries"] = std::move(entries);
  os << doc.dump(1) << '\n';
}

PolicyParams read_policy(std::istream& is) {
  try {
    const auto doc = nlohmann::json::parse(is);
    if (doc.at("format").get<std::string>() != kPolicyFormat)
      throw FormatError("not a policy checkpoint");
    if (doc.at("version").get<int>() != kPolicyVersion)
      throw FormatError("unsupported policy checkpoint version");
    PolicyParams params(doc.at("vocab_size").get<int>(), doc.at("context_window").get<int>());
    for (const auto& e : doc.at("entries")) {
      const auto ctx_tokens = e.at("context").get<std::vector<Token>>();
      const auto logits = e.at("logits").get<std::vector<double>>();
      if (ctx_tokens.size() != static_cast<std::size_t>(params.context_window()) ||
          logits.size() != static_cast<std::size_t>(params.vocab_size()))
        throw FormatError("policy entry has wrong shape");
      std::size_t ctx = 0;
      for (Token t : ctx_tokens) {
        if (t < 0 || t > params.vocab_size()) throw FormatError("context token out of range");
        ctx = ctx * static_cast<std::size_t>(params.vocab_size() + 1) + static_cast<std::size_t>(t);
      }
      for (double x : logits)
        if (!std::isfinite(x)) throw FormatError("non-finite logit in checkpoint");
      std::copy(logits.begin(), logits.end(), params.logits(ctx).begin());
    }
    return params;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("policy checkpoint: ") + e.what());
  }
}

}  // namespace irllab
