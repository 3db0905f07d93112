#include "irllab/world.hpp"

#include <algorithm>
#include <istream>
#include <ostream>
#include <sstream>

#include "irllab/error.hpp"
#include "irllab/random.hpp"
#include "json.hpp"

namespace irllab {

void WorldConfig::validate() const {
  if (vocab_size <= 0) throw ConfigError("vocab_size must be positive");
  if (max_len <= 0) throw ConfigError("max_len must be positive");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in [0,1]");
  if (prompt_len <= 0 || prompt_len + 1 > max_len)
    throw ConfigError("prompt_len must satisfy 0 < prompt_len < max_len");
  if (toxic_lexicon.empty()) throw ConfigError("toxic_lexicon is empty");
  for (Token t : toxic_lexicon)
    if (t < 0 || t >= vocab_size) throw ConfigError("toxic_lexicon token out of range");
  if (non_toxic_tokens().empty()) throw ConfigError("toxic_lexicon covers the whole vocabulary");
}

bool WorldConfig::is_toxic(Token t) const {
  return std::find(toxic_lexicon.begin(), toxic_lexicon.end(), t) != toxic_lexicon.end();
}

std::vector<Token> WorldConfig::non_toxic_tokens() const {
  std::vector<Token> out;
  for (Token t = 0; t < vocab_size; ++t)
    if (!is_toxic(t)) out.push_back(t);
  return out;
}

Sequence Sequence::append(Token a) const {
  Sequence next = *this;
  next.tokens.push_back(a);
  return next;
}

void validate_sequence(const Sequence& seq, const WorldConfig& world) {
  if (seq.prompt_boundary > seq.tokens.size())
    throw InvalidSequenceError("prompt boundary beyond sequence end");
  if (seq.tokens.size() > static_cast<std::size_t>(world.max_len))
    throw InvalidSequenceError("sequence longer than max_len");
  for (Token t : seq.tokens)
    if (t < 0 || t >= world.vocab_size)
      throw InvalidSequenceError("token id " + std::to_string(t) + " out of range");
}

FeatureVector extract_features(const Sequence& seq, const FeatureSpec& spec,
                               const WorldConfig& world) {
  validate_sequence(seq, world);
  const auto v = static_cast<std::size_t>(world.vocab_size);
  FeatureVector phi(spec.dimension(world.vocab_size), 0.0);
  const auto completion = seq.completion();
  if (completion.empty()) return phi;

  std::size_t offset = 0;
  if (spec.unigram) {
    for (Token t : completion) phi[offset + static_cast<std::size_t>(t)] += 1.0;
    offset += v;
  }
  if (spec.bigram) {
    for (std::size_t i = 1; i < completion.size(); ++i)
      phi[offset + static_cast<std::size_t>(completion[i - 1]) * v +
          static_cast<std::size_t>(completion[i])] += 1.0;
    offset += v * v;
  }
  const double len = static_cast<double>(completion.size());
  if (spec.normalize_by_length)
    for (std::size_t i = 0; i < offset; ++i) phi[i] /= len;
  if (spec.lexicon_fraction) {
    const auto toxic = std::count_if(completion.begin(), completion.end(),
                                     [&](Token t) { return world.is_toxic(t); });
    phi[offset] = static_cast<double>(toxic) / len;
  }
  return phi;
}

const char* to_string(Label label) { return label == Label::Toxic ? "toxic" : "non-toxic"; }

Label label_from_string(const std::string& s) {
  if (s == "toxic") return Label::Toxic;
  if (s == "non-toxic") return Label::NonToxic;
  throw FormatError("unknown label '" + s + "'");
}

std::vector<LabeledSequence> generate_corpus(const WorldConfig& world, int n_per_class,
                                             double toxic_rate_hi, double toxic_rate_lo,
                                             std::uint64_t seed) {
  world.validate();
  if (n_per_class <= 0) throw EmptyCorpusError("n_per_class must be positive");
  if (!(0.0 <= toxic_rate_lo && toxic_rate_lo < toxic_rate_hi && toxic_rate_hi <= 1.0))
    throw ConfigError("toxic rates must satisfy 0 <= lo < hi <= 1");

  const auto clean = world.non_toxic_tokens();
  const auto& lexicon = world.toxic_lexicon;
  Rng rng = make_stream(seed, {0xC0'8B'05ull});

  std::vector<LabeledSequence> corpus;
  corpus.reserve(2 * static_cast<std::size_t>(n_per_class));
  for (Label label : {Label::Toxic, Label::NonToxic}) {
    const double rate = label == Label::Toxic ? toxic_rate_hi : toxic_rate_lo;
    for (int i = 0; i < n_per_class; ++i) {
      Sequence seq;
      seq.tokens.reserve(static_cast<std::size_t>(world.max_len));
      for (int j = 0; j < world.prompt_len; ++j)
        seq.tokens.push_back(clean[uniform_index(rng, clean.size())]);
      seq.prompt_boundary = seq.tokens.size();
      for (int j = 0; j < world.completion_len(); ++j) {
        const bool toxic = uniform01(rng) < rate;
        const auto& pool = toxic ? lexicon : clean;
        seq.tokens.push_back(pool[uniform_index(rng, pool.size())]);
      }
      corpus.push_back({label, std::move(seq)});
    }
  }
  return corpus;
}

std::pair<Sequence, Sequence> split_prompt_target(const Sequence& seq, std::size_t prompt_len) {
  if (prompt_len > seq.tokens.size())
    throw SplitError("prompt_len " + std::to_string(prompt_len) + " exceeds sequence length " +
                     std::to_string(seq.tokens.size()));
  const auto mid = seq.tokens.begin() + static_cast<std::ptrdiff_t>(prompt_len);
  Sequence prompt{{seq.tokens.begin(), mid}, prompt_len};
  Sequence target{{mid, seq.tokens.end()}, 0};
  return {std::move(prompt), std::move(target)};
}

namespace {

std::string join_tokens(std::span<const Token> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += std::to_string(tokens[i]);
  }
  return out;
}

std::vector<Token> parse_tokens(const std::string& s) {
  std::istringstream in(s);
  std::vector<Token> out;
  long long t;
  while (in >> t) out.push_back(static_cast<Token>(t));
  if (!in.eof()) throw FormatError("malformed token list '" + s + "'");
  return out;
}

Sequence join_sequence(const std::string& prompt, const std::string& completion) {
  Sequence seq;
  seq.tokens = parse_tokens(prompt);
  seq.prompt_boundary = seq.tokens.size();
  const auto tail = parse_tokens(completion);
  seq.tokens.insert(seq.tokens.end(), tail.begin(), tail.end());
  return seq;
}

template <class F>
void for_each_record(std::istream& is, F&& f) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      f(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
}

}  // namespace

void write_corpus(std::ostream& os, std::span<const LabeledSequence> corpus) {
  for (const auto& item : corpus) {
    nlohmann::ordered_json rec;
    rec["label"] = to_string(item.label);
    rec["prompt"] = join_tokens(item.seq.prompt());
    rec["completion"] = join_tokens(item.seq.completion());
    os << rec.dump() << '\n';
  }
}

std::vector<LabeledSequence> read_corpus(std::istream& is, const WorldConfig& world) {
  std::vector<LabeledSequence> out;
  for_each_record(is, [&](const nlohmann::json& rec) {
    LabeledSequence item{label_from_string(rec.at("label").get<std::string>()),
                         join_sequence(rec.at("prompt").get<std::string>(),
                                       rec.at("completion").get<std::string>())};
    validate_sequence(item.seq, world);
    out.push_back(std::move(item));
  });
  return out;
}

void write_pairs(std::ostream& os, std::span<const PairedSample> pairs) {
  for (const auto& p : pairs) {
    nlohmann::ordered_json rec;
    rec["prompt"] = join_tokens(p.prompt.tokens);
    rec["preferred"] = join_tokens(p.completion_nontoxic.completion());
    rec["rejected"] = join_tokens(p.completion_toxic.completion());
    os << rec.dump() << '\n';
  }
}

std::vector<PairedSample> read_pairs(std::istream& is, const WorldConfig& world) {
  std::vector<PairedSample> out;
  for_each_record(is, [&](const nlohmann::json& rec) {
    const auto prompt = rec.at("prompt").get<std::string>();
    PairedSample p;
    p.prompt = join_sequence(prompt, "");
    p.completion_nontoxic = join_sequence(prompt, rec.at("preferred").get<std::string>());
    p.completion_toxic = join_sequence(prompt, rec.at("rejected").get<std::string>());
    validate_sequence(p.completion_nontoxic, world);
    validate_sequence(p.completion_toxic, world);
    out.push_back(std::move(p));
  });
  return out;
}

}  // namespace irllab
