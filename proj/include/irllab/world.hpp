#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace irllab {

using Token = std::int32_t;
using FeatureVector = std::vector<double>;

// The synthetic language MDP. States are token prefixes, actions are token
// ids, and the transition appends the chosen token. Episodes end at max_len.
struct WorldConfig {
  int vocab_size = 12;
  int max_len = 16;
  double gamma = 1.0;
  std::vector<Token> toxic_lexicon{9, 10, 11};
  int prompt_len = 4;

  void validate() const;
  bool is_toxic(Token t) const;
  std::vector<Token> non_toxic_tokens() const;
  int completion_len() const { return max_len - prompt_len; }
  // Pad id used for context positions before the sequence start.
  Token pad() const { return static_cast<Token>(vocab_size); }
};

struct Sequence {
  std::vector<Token> tokens;
  std::size_t prompt_boundary = 0;

  std::span<const Token> prompt() const { return {tokens.data(), prompt_boundary}; }
  std::span<const Token> completion() const {
    return {tokens.data() + prompt_boundary, tokens.size() - prompt_boundary};
  }
  std::size_t size() const { return tokens.size(); }
  // Deterministic append transition.
  Sequence append(Token a) const;

  bool operator==(const Sequence&) const = default;
};

// Throws InvalidSequenceError unless every token is in range, the boundary is
// within the sequence and the length does not exceed max_len.
void validate_sequence(const Sequence& seq, const WorldConfig& world);

struct FeatureSpec {
  bool unigram = true;
  bool bigram = false;
  bool lexicon_fraction = true;
  bool normalize_by_length = true;

  std::size_t dimension(int vocab_size) const {
    const auto v = static_cast<std::size_t>(vocab_size);
    return (unigram ? v : 0) + (bigram ? v * v : 0) + (lexicon_fraction ? 1 : 0);
  }
  // Offset of the lexicon-fraction entry, if enabled.
  std::size_t lexicon_index(int vocab_size) const { return dimension(vocab_size) - 1; }

  bool operator==(const FeatureSpec&) const = default;
};

// phi(s): features of the completion part of `seq`. Unigram and bigram
// entries are counts (divided by the completion length when normalized); the
// lexicon entry is the toxic fraction of the completion. An empty completion
// maps to the zero vector.
FeatureVector extract_features(const Sequence& seq, const FeatureSpec& spec,
                               const WorldConfig& world);

enum class Label { NonToxic, Toxic };
const char* to_string(Label label);
Label label_from_string(const std::string& s);

struct LabeledSequence {
  Label label;
  Sequence seq;
  bool operator==(const LabeledSequence&) const = default;
};

// Balanced synthetic corpus: n_per_class toxic sequences followed by
// n_per_class non-toxic ones. Prompts are uniform over non-toxic tokens;
// each completion token is drawn from the lexicon with the class rate.
std::vector<LabeledSequence> generate_corpus(const WorldConfig& world, int n_per_class,
                                             double toxic_rate_hi, double toxic_rate_lo,
                                             std::uint64_t seed);

std::pair<Sequence, Sequence> split_prompt_target(const Sequence& seq, std::size_t prompt_len);

// (prompt, preferred completion, dispreferred completion). Both completions
// are full sequences whose prompt part equals `prompt`.
struct PairedSample {
  Sequence prompt;
  Sequence completion_nontoxic;
  Sequence completion_toxic;
};

void write_corpus(std::ostream& os, std::span<const LabeledSequence> corpus);
std::vector<LabeledSequence> read_corpus(std::istream& is, const WorldConfig& world);

void write_pairs(std::ostream& os, std::span<const PairedSample> pairs);
std::vector<PairedSample> read_pairs(std::istream& is, const WorldConfig& world);

}  // namespace irllab
