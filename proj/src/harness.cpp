#include "irllab/harness.hpp"

#include <omp.h>

#include <algorithm>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <cmath>
#include <exception>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "irllab/error.hpp"
#include "irllab/kernels.hpp"
#include "irllab/random.hpp"
#include "json.hpp"

namespace irllab {

namespace fs = std::filesystem;
namespace pt = boost::property_tree;
using ojson = nlohmann::ordered_json;

namespace {

// ---- config binding -------------------------------------------------------

std::string fmt_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, res.ptr};
}

double parse_double(const std::string& key, const std::string& s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw ConfigError(key + ": expected a number, got '" + s + "'");
  return v;
}

template <typename Int>
Int parse_int(const std::string& key, const std::string& s) {
  Int v{};
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw ConfigError(key + ": expected an integer, got '" + s + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError(key + ": expected a boolean, got '" + s + "'");
}

std::vector<Token> parse_tokens(const std::string& key, const std::string& s) {
  std::vector<Token> out;
  std::istringstream in(s);
  std::string item;
  while (in >> item) out.push_back(parse_int<Token>(key, item));
  return out;
}

std::string tokens_to_string(const std::vector<Token>& ts) {
  std::string out;
  for (std::size_t i = 0; i < ts.size(); ++i) out += (i ? " " : "") + std::to_string(ts[i]);
  return out;
}

struct Field {
  std::string section, key;
  std::function<std::string(const PipelineConfig&)> get;
  std::function<void(PipelineConfig&, const std::string&)> set;
};

#define IRLLAB_NUM(sec, name, member)                                                         \
  Field{sec, name, [](const PipelineConfig& c) { return fmt_double(c.member); },             \
        [](PipelineConfig& c, const std::string& v) { c.member = parse_double(sec "." name, v); }}
#define IRLLAB_INT(sec, name, member)                                                         \
  Field{sec, name, [](const PipelineConfig& c) { return std::to_string(c.member); },         \
        [](PipelineConfig& c, const std::string& v) {                                       \
          c.member = parse_int<decltype(c.member)>(sec "." name, v);                         \
        }}
#define IRLLAB_BOOL(sec, name, member)                                                        \
  Field{sec, name, [](const PipelineConfig& c) { return std::string(c.member ? "true" : "false"); }, \
        [](PipelineConfig& c, const std::string& v) { c.member = parse_bool(sec "." name, v); }}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      IRLLAB_INT("run", "seed", seed),
      Field{"run", "output_dir", [](const PipelineConfig& c) { return c.output_dir; },
            [](PipelineConfig& c, const std::string& v) { c.output_dir = v; }},
      IRLLAB_INT("world", "vocab_size", world.vocab_size),
      IRLLAB_INT("world", "max_len", world.max_len),
      IRLLAB_INT("world", "prompt_len", world.prompt_len),
      IRLLAB_NUM("world", "gamma", world.gamma),
      Field{"world", "toxic_lexicon",
            [](const PipelineConfig& c) { return tokens_to_string(c.world.toxic_lexicon); },
            [](PipelineConfig& c, const std::string& v) {
              c.world.toxic_lexicon = parse_tokens("world.toxic_lexicon", v);
              c.oracle.toxic_lexicon = c.world.toxic_lexicon;
            }},
      IRLLAB_BOOL("features", "unigram", features.unigram),
      IRLLAB_BOOL("features", "bigram", features.bigram),
      IRLLAB_BOOL("features", "lexicon_fraction", features.lexicon_fraction),
      IRLLAB_BOOL("features", "normalize_by_length", features.normalize_by_length),
      IRLLAB_NUM("oracle", "classify_threshold", oracle.classify_threshold),
      IRLLAB_INT("corpus", "n_per_class", corpus.n_per_class),
      IRLLAB_NUM("corpus", "toxic_rate_hi", corpus.toxic_rate_hi),
      IRLLAB_NUM("corpus", "toxic_rate_lo", corpus.toxic_rate_lo),
      IRLLAB_INT("sft", "context_window", sft.context_window),
      IRLLAB_INT("sft", "epochs", sft.epochs),
      IRLLAB_NUM("sft", "lr", sft.lr),
      IRLLAB_NUM("rlhf", "clip_epsilon", rlhf.clip_epsilon),
      IRLLAB_NUM("rlhf", "gamma", rlhf.gamma),
      IRLLAB_NUM("rlhf", "gae_lambda", rlhf.gae_lambda),
      IRLLAB_NUM("rlhf", "lr", rlhf.lr),
      IRLLAB_NUM("rlhf", "value_lr", rlhf.value_lr),
      IRLLAB_NUM("rlhf", "vf_coef", rlhf.vf_coef),
      IRLLAB_NUM("rlhf", "beta_kl", rlhf.beta_kl),
      IRLLAB_INT("rlhf", "total_steps", rlhf.total_steps),
      IRLLAB_INT("rlhf", "batch_size", rlhf.batch_size),
      IRLLAB_INT("rlhf", "ppo_epochs", rlhf.ppo_epochs),
      IRLLAB_BOOL("rlhf", "whiten_advantages", rlhf.whiten_advantages),
      IRLLAB_NUM("irl", "epsilon", irl.epsilon),
      IRLLAB_INT("irl", "max_iterations", irl.max_iterations),
      IRLLAB_INT("irl", "inner_rl_steps", irl.inner_rl_steps),
      IRLLAB_INT("irl", "solver_iterations", irl.solver_iterations),
      IRLLAB_NUM("irl", "lr", irl.lr),
      IRLLAB_INT("irl", "epochs", irl.epochs),
      IRLLAB_INT("irl", "batch_size", irl.batch_size),
      IRLLAB_NUM("irl", "init_scale", irl.init_scale),
      IRLLAB_NUM("eval", "pair_fraction", eval.pair_fraction),
      IRLLAB_NUM("eval", "heldout_fraction", eval.heldout_fraction),
      IRLLAB_INT("eval", "samples_per_prompt", eval.samples_per_prompt),
      IRLLAB_NUM("eval", "threshold", eval.threshold),
      IRLLAB_BOOL("eval", "calibrate", eval.calibrate),
      IRLLAB_INT("study", "variability_seeds", variability_seeds),
  };
  return table;
}

#undef IRLLAB_NUM
#undef IRLLAB_INT
#undef IRLLAB_BOOL

// ---- run directory helpers ------------------------------------------------

struct StageInfo {
  const char* name;  // CLI name, used in errors
  const char* dir;
};

constexpr StageInfo kCorpus{"gen-corpus", "corpus"};
constexpr StageInfo kSft{"sft", "sft"};
constexpr StageInfo kRlhf{"rlhf", "rlhf"};
constexpr StageInfo kPairs{"pairs", "pairs"};
constexpr StageInfo kIrl{"irl-extract", "irl"};
constexpr StageInfo kEval{"evaluate", "evaluate"};
constexpr StageInfo kIrlRlhf{"irl-rlhf", "irl_rlhf"};
constexpr StageInfo kVariability{"study-variability", "variability"};

std::ifstream open_artifact(const fs::path& run_dir, const StageInfo& stage, const char* file) {
  const auto path = run_dir / stage.dir / file;
  std::ifstream in(path);
  if (!in) throw MissingStageError(std::string(stage.name) + " (no " + path.string() + ")");
  return in;
}

class StageWriter {
 public:
  StageWriter(const PipelineConfig& cfg, const StageInfo& stage)
      : dir_(fs::path(cfg.output_dir) / stage.dir) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw ConfigError("cannot create " + dir_.string() + ": " + ec.message());
    std::ofstream snap(dir_ / "config.ini");
    write_config(snap, cfg);
    log_.open(dir_ / "log.txt");
  }

  std::ofstream artifact(const char* file) const {
    std::ofstream out(dir_ / file, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + (dir_ / file).string());
    return out;
  }
  std::ostream& log() { return log_; }

 private:
  fs::path dir_;
  std::ofstream log_;
};

template <typename F>
auto in_stage(const StageInfo& stage, F&& f) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const MissingStageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage.name, e.what());
  }
}

std::vector<Sequence> sequences_of(std::span<const LabeledSequence> items) {
  std::vector<Sequence> out;
  out.reserve(items.size());
  for (const auto& item : items) out.push_back(item.seq);
  return out;
}

std::vector<LabeledSequence> load_corpus(const PipelineConfig& cfg) {
  auto in = open_artifact(cfg.output_dir, kCorpus, "corpus.jsonl");
  return read_corpus(in, cfg.world);
}

PolicyParams load_policy(const PipelineConfig& cfg, const StageInfo& stage) {
  auto in = open_artifact(cfg.output_dir, stage, "policy.json");
  return read_policy(in);
}

std::vector<PairedSample> load_pairs(const PipelineConfig& cfg, const char* file) {
  auto in = open_artifact(cfg.output_dir, kPairs, file);
  return read_pairs(in, cfg.world);
}

CorpusSplit corpus_split(const PipelineConfig& cfg) {
  return split_corpus(load_corpus(cfg), cfg.eval, cfg.seed + seed_offset::split);
}

HeldoutData heldout_data(const PipelineConfig& cfg) {
  auto split = corpus_split(cfg);
  HeldoutData h;
  h.pairs = load_pairs(cfg, "heldout.jsonl");
  h.originals = sequences_of(split.heldout);
  if (h.pairs.size() != h.originals.size())
    throw FormatError("held-out pairs do not match the held-out corpus split");
  h.labeled = std::move(split.heldout);
  h.calibration = std::move(split.calibration);
  return h;
}

IrlConfig irl_config(const PipelineConfig& cfg) {
  IrlConfig c = cfg.irl;
  c.seed = cfg.seed + seed_offset::irl;
  return c;
}

SequenceRewardFn oracle_reward(const ToxicityOracle& oracle) {
  return [&oracle](const Sequence& gen, const Sequence& orig) { return oracle.pairwise_reward(gen, orig); };
}

ojson toxicity_json(const StageToxicity& t) {
  ojson j;
  j["stage"] = to_string(t.stage);
  j["toxicity_ratio"] = t.toxicity_ratio;
  j["mean_toxicity"] = t.mean_toxicity;
  j["toxicity_probability"] = t.toxicity_probability;
  return j;
}

std::vector<ojson> read_jsonl(std::istream& in) {
  std::vector<ojson> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(ojson::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(e.what());
    }
  }
  return out;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  const double na = std::sqrt(std::inner_product(a.begin(), a.end(), a.begin(), 0.0));
  const double nb = std::sqrt(std::inner_product(b.begin(), b.end(), b.begin(), 0.0));
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0) / (na * nb);
}

}  // namespace

// ---- config ---------------------------------------------------------------

void PipelineConfig::validate() const {
  world.validate();
  oracle.validate();
  rlhf.validate();
  irl.validate();
  if (features.dimension(world.vocab_size) == 0) throw ConfigError("feature spec selects no features");
  if (oracle.toxic_lexicon != world.toxic_lexicon)
    throw ConfigError("oracle lexicon must match the world lexicon");
  if (corpus.n_per_class < 1) throw ConfigError("corpus.n_per_class must be >= 1");
  for (double r : {corpus.toxic_rate_hi, corpus.toxic_rate_lo})
    if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("corpus toxic rates must lie in [0, 1]");
  if (sft.context_window < 1 || sft.context_window > 6) throw ConfigError("sft.context_window must be in 1..6");
  if (sft.epochs < 0) throw ConfigError("sft.epochs must be >= 0");
  if (!(sft.lr > 0.0)) throw ConfigError("sft.lr must be positive");
  if (!(eval.pair_fraction > 0.0) || !(eval.heldout_fraction > 0.0) ||
      eval.pair_fraction + eval.heldout_fraction >= 1.0)
    throw ConfigError("eval fractions must be positive and leave room for calibration");
  if (eval.samples_per_prompt < 1) throw ConfigError("eval.samples_per_prompt must be >= 1");
  if (variability_seeds < 2) throw ConfigError("study.variability_seeds must be >= 2");
  if (output_dir.empty()) throw ConfigError("run.output_dir must not be empty");
}

PipelineConfig read_config(std::istream& is) {
  pt::ptree tree;
  try {
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(e.what());
  }
  PipelineConfig cfg;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty())
      throw ConfigError("key '" + section + "' outside any section");
    for (const auto& [key, value] : body) {
      const auto& table = fields();
      auto it = std::find_if(table.begin(), table.end(),
                             [&](const Field& f) { return f.section == section && f.key == key; });
      if (it == table.end()) throw ConfigError("unknown key " + section + "." + key);
      it->set(cfg, value.data());
    }
  }
  return cfg;
}

PipelineConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  return read_config(in);
}

void write_config(std::ostream& os, const PipelineConfig& cfg) {
  std::string section;
  for (const auto& f : fields()) {
    if (f.section != section) {
      if (!section.empty()) os << '\n';
      section = f.section;
      os << '[' << section << "]\n";
    }
    os << f.key << " = " << f.get(cfg) << '\n';
  }
}

// ---- toxicity -------------------------------------------------------------

const char* to_string(Stage s) {
  switch (s) {
    case Stage::SFT: return "SFT";
    case Stage::RLHF: return "RLHF";
    case Stage::IRL_RLHF: return "IRL-RLHF";
  }
  return "?";
}

StageToxicity toxicity_stage_metrics(const PolicyParams& policy, std::span<const Sequence> prompts,
                                     int samples_per_prompt, std::uint64_t seed,
                                     const WorldConfig& world, const ToxicityOracle& oracle,
                                     Stage stage) {
  if (samples_per_prompt < 1) throw ConfigError("samples_per_prompt must be >= 1");
  StageToxicity out;
  out.stage = stage;
  if (prompts.empty()) return out;

  const auto greedy = kernels::rollout_batch(policy, prompts, world, 0.0, seed, 0x4752);
  long toxic = 0;
  for (const auto& s : greedy) toxic += oracle.classify_toxic(s);
  out.toxicity_ratio = static_cast<double>(toxic) / static_cast<double>(prompts.size());

  const auto k = static_cast<std::size_t>(samples_per_prompt);
  std::vector<Sequence> repeated;
  repeated.reserve(prompts.size() * k);
  for (const auto& p : prompts)
    for (std::size_t j = 0; j < k; ++j) repeated.push_back(p);
  const auto samples = kernels::rollout_batch(policy, repeated, world, 1.0, seed, 0x5354);

  double score_sum = 0.0;
  long prompts_with_toxic = 0;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    bool any = false;
    for (std::size_t j = 0; j < k; ++j) {
      const auto& s = samples[i * k + j];
      score_sum += oracle.tox_score(s);
      any = any || oracle.classify_toxic(s);
    }
    prompts_with_toxic += any;
  }
  out.mean_toxicity = score_sum / static_cast<double>(samples.size());
  out.toxicity_probability = static_cast<double>(prompts_with_toxic) / static_cast<double>(prompts.size());
  return out;
}

// ---- splits, pairs, evaluation --------------------------------------------

CorpusSplit split_corpus(const std::vector<LabeledSequence>& corpus, const EvalSettings& eval,
                         std::uint64_t seed) {
  if (corpus.empty()) throw EmptyCorpusError("cannot split an empty corpus");
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_stream(seed, {0x5350});
  for (std::size_t i = order.size() - 1; i > 0; --i)
    std::swap(order[i], order[uniform_index(rng, i + 1)]);

  const auto n = corpus.size();
  const auto n_train = static_cast<std::size_t>(std::floor(eval.pair_fraction * static_cast<double>(n)));
  const auto n_heldout = static_cast<std::size_t>(std::floor(eval.heldout_fraction * static_cast<double>(n)));
  if (n_train == 0 || n_heldout == 0 || n_train + n_heldout >= n)
    throw SplitError("corpus of " + std::to_string(n) + " sequences is too small for the split");
  CorpusSplit out;
  for (std::size_t i = 0; i < n; ++i) {
    auto& dst = i < n_train ? out.train : i < n_train + n_heldout ? out.heldout : out.calibration;
    dst.push_back(corpus[order[i]]);
  }
  return out;
}

std::vector<PairedSample> make_pairs(const PolicyParams& preferred, const PolicyParams& rejected,
                                     std::span<const LabeledSequence> prompts,
                                     const WorldConfig& world) {
  const auto seqs = sequences_of(prompts);
  const auto good = kernels::rollout_batch(preferred, seqs, world, 0.0, 0, 0);
  const auto bad = kernels::rollout_batch(rejected, seqs, world, 0.0, 0, 0);
  std::vector<PairedSample> out;
  out.reserve(seqs.size());
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    Sequence prompt{{seqs[i].prompt().begin(), seqs[i].prompt().end()}, seqs[i].prompt_boundary};
    out.push_back({std::move(prompt), good[i], bad[i]});
  }
  return out;
}

MetricRecord evaluate_weights(const RewardWeights& w, int epoch, const HeldoutData& heldout,
                              const FeatureSpec& spec, const WorldConfig& world,
                              const ToxicityOracle& oracle, const EvalSettings& eval) {
  if (heldout.pairs.size() != heldout.originals.size())
    throw ShapeError("held-out pairs and originals differ in length");
  ScorePairSet scores;
  for (std::size_t i = 0; i < heldout.pairs.size(); ++i) {
    for (const Sequence* s : {&heldout.pairs[i].completion_nontoxic, &heldout.pairs[i].completion_toxic}) {
      scores.learned.push_back(reward_of(*s, w, spec, world));
      scores.truth.push_back(oracle.pairwise_reward(*s, heldout.originals[i]));
    }
  }
  const auto guarded = [&](double (*f)(const ScorePairSet&)) {
    try {
      return f(scores);
    } catch (const UndefinedCorrelationError&) {
      return std::numeric_limits<double>::quiet_NaN();
    }
  };

  MetricRecord r;
  r.epoch = epoch;
  r.pearson = guarded(pearson);
  r.spearman = guarded(spearman);
  r.kendall = guarded(kendall_tau);
  r.accuracy = pair_ordering_accuracy(heldout.pairs, w, spec, world);
  r.threshold = eval.calibrate ? calibrate_threshold(heldout.calibration, w, spec, world) : eval.threshold;
  r.f1 = classify_with_reward(heldout.labeled, w, r.threshold, spec, world).f1;
  r.n = static_cast<long>(scores.learned.size());
  return r;
}

EpochSeries epoch_series(std::span<const PairedSample> pairs, const HeldoutData& heldout,
                         const FeatureSpec& spec, const IrlConfig& cfg, const WorldConfig& world,
                         const ToxicityOracle& oracle, const EvalSettings& eval) {
  EpochSeries out;
  out.extraction = pairwise_extract(pairs, spec, cfg, world, [&](int epoch, const RewardWeights& w) {
    out.rows.push_back(evaluate_weights(w, epoch, heldout, spec, world, oracle, eval));
  });
  return out;
}

// ---- variability ----------------------------------------------------------

std::uint64_t variability_seed(std::uint64_t base_seed, int index) {
  return base_seed + seed_offset::variability + static_cast<std::uint64_t>(index);
}

VariabilityMatrix variability_study(std::span<const PairedSample> pairs, const HeldoutData& heldout,
                                    const FeatureSpec& spec, const IrlConfig& cfg,
                                    const WorldConfig& world, const ToxicityOracle& oracle,
                                    const EvalSettings& eval, int n_seeds) {
  if (n_seeds < 2) throw ConfigError("variability study needs at least 2 seeds");
  const auto n = static_cast<std::size_t>(n_seeds);
  VariabilityMatrix m;
  m.epochs = cfg.epochs;
  m.seeds.resize(n);
  m.accuracy.assign(n, {});
  m.final_weights.resize(n);

  std::vector<std::exception_ptr> errors(n);
#pragma omp parallel for schedule(static, 1)
  for (int i = 0; i < n_seeds; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    try {
      IrlConfig c = cfg;
      c.seed = variability_seed(cfg.seed, i);
      m.seeds[idx] = c.seed;
      auto series = epoch_series(pairs, heldout, spec, c, world, oracle, eval);
      for (const auto& row : series.rows) m.accuracy[idx].push_back(row.accuracy);
      m.final_weights[idx] = std::move(series.extraction.weights);
    } catch (...) {
      errors[idx] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  m.cosine.assign(n, std::vector<double>(n, 0.0));
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b) m.cosine[a][b] = cosine(m.final_weights[a].w, m.final_weights[b].w);
  return m;
}

void write_variability(std::ostream& os, const VariabilityMatrix& m) {
  ojson j;
  j["format"] = "irllab-variability";
  j["version"] = 1;
  j["epochs"] = m.epochs;
  j["seeds"] = m.seeds;
  j["accuracy"] = m.accuracy;
  ojson weights = ojson::array();
  for (const auto& w : m.final_weights) weights.push_back(w.w);
  j["final_weights"] = weights;
  j["cosine"] = m.cosine;
  os << j.dump(1) << '\n';
}

VariabilityMatrix read_variability(std::istream& is) {
  try {
    const auto j = nlohmann::json::parse(is);
    if (j.at("format") != "irllab-variability" || j.at("version") != 1)
      throw FormatError("not an irllab-variability v1 document");
    VariabilityMatrix m;
    m.epochs = j.at("epochs").get<int>();
    m.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    m.accuracy = j.at("accuracy").get<std::vector<std::vector<double>>>();
    for (const auto& w : j.at("final_weights")) m.final_weights.push_back({w.get<std::vector<double>>()});
    m.cosine = j.at("cosine").get<std::vector<std::vector<double>>>();
    if (m.accuracy.size() != m.seeds.size() || m.final_weights.size() != m.seeds.size())
      throw FormatError("variability matrix shape does not match its seed list");
    for (const auto& row : m.accuracy)
      if (row.size() != static_cast<std::size_t>(m.epochs))
        throw FormatError("variability row length does not match epochs");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("variability: ") + e.what());
  }
}

// ---- beta sweep -----------------------------------------------------------

std::vector<BetaSweepRow> beta_sweep(const PolicyParams& reference, const SequenceRewardFn& reward,
                                     std::span<const Sequence> prompts, const PpoConfig& cfg,
                                     std::span<const double> betas, const WorldConfig& world,
                                     int kl_samples_per_prompt, std::uint64_t kl_seed) {
  const auto n = betas.size();
  std::vector<BetaSweepRow> rows(n);
  std::vector<std::exception_ptr> errors(n);
#pragma omp parallel for schedule(static, 1)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
    const auto idx = static_cast<std::size_t>(i);
    try {
      PpoConfig c = cfg;
      c.beta_kl = betas[idx];
      auto r = train_rlhf(reference, reference, reward, prompts, c, world);
      rows[idx].beta = betas[idx];
      rows[idx].final_kl = kl_divergence(r.policy, reference, prompts, kl_samples_per_prompt, kl_seed, world).raw;
      rows[idx].log = std::move(r.log);
    } catch (...) {
      errors[idx] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return rows;
}

// ---- stages ---------------------------------------------------------------

namespace stages {

void gen_corpus(const PipelineConfig& cfg) {
  in_stage(kCorpus, [&] {
    cfg.validate();
    StageWriter out(cfg, kCorpus);
    const auto corpus = generate_corpus(cfg.world, cfg.corpus.n_per_class, cfg.corpus.toxic_rate_hi,
                                        cfg.corpus.toxic_rate_lo, cfg.seed + seed_offset::corpus);
    auto f = out.artifact("corpus.jsonl");
    write_corpus(f, corpus);
    out.log() << "sequences " << corpus.size() << '\n';
  });
}

void sft(const PipelineConfig& cfg) {
  in_stage(kSft, [&] {
    cfg.validate();
    const auto corpus = load_corpus(cfg);
    StageWriter out(cfg, kSft);
    std::vector<Sequence> clean;
    for (const auto& item : corpus)
      if (item.label == Label::NonToxic) clean.push_back(item.seq);
    if (clean.empty()) throw EmptyCorpusError("corpus has no non-toxic sequences");
    const auto policy = mle_fit(clean, cfg.world, cfg.sft.epochs, cfg.sft.lr, cfg.sft.context_window);
    auto f = out.artifact("policy.json");
    write_policy(f, policy);
    out.log() << "sequences " << clean.size() << "\nlog_likelihood "
              << fmt_double(corpus_log_likelihood(policy, clean)) << '\n';
  });
}

namespace {

void write_rlhf_outputs(StageWriter& out, const RlhfResult& r) {
  auto p = out.artifact("policy.json");
  write_policy(p, r.policy);
  auto l = out.artifact("train_log.jsonl");
  write_train_log(l, r.log);
  if (!r.log.empty())
    out.log() << "steps " << r.log.size() << "\nfinal_reward_mean " << fmt_double(r.log.back().reward_mean)
              << "\nfinal_kl " << fmt_double(r.log.back().kl_estimate) << '\n';
}

}  // namespace

void rlhf(const PipelineConfig& cfg) {
  in_stage(kRlhf, [&] {
    cfg.validate();
    const auto split = corpus_split(cfg);
    const auto base = load_policy(cfg, kSft);
    StageWriter out(cfg, kRlhf);
    const ToxicityOracle oracle(cfg.oracle);
    PpoConfig ppo = cfg.rlhf;
    ppo.seed = cfg.seed + seed_offset::rlhf;
    const auto prompts = sequences_of(split.train);
    const auto r = train_rlhf(base, base, oracle_reward(oracle), prompts, ppo, cfg.world);
    write_rlhf_outputs(out, r);
  });
}

void pairs(const PipelineConfig& cfg) {
  in_stage(kPairs, [&] {
    cfg.validate();
    const auto split = corpus_split(cfg);
    const auto base = load_policy(cfg, kSft);
    const auto tuned = load_policy(cfg, kRlhf);
    StageWriter out(cfg, kPairs);
    const auto train = make_pairs(tuned, base, split.train, cfg.world);
    const auto heldout = make_pairs(tuned, base, split.heldout, cfg.world);
    auto a = out.artifact("train.jsonl");
    write_pairs(a, train);
    auto b = out.artifact("heldout.jsonl");
    write_pairs(b, heldout);
    out.log() << "train " << train.size() << "\nheldout " << heldout.size() << '\n';
  });
}

void irl_extract(const PipelineConfig& cfg) {
  in_stage(kIrl, [&] {
    cfg.validate();
    const auto train = load_pairs(cfg, "train.jsonl");
    const auto heldout = heldout_data(cfg);
    StageWriter out(cfg, kIrl);
    const ToxicityOracle oracle(cfg.oracle);
    const auto icfg = irl_config(cfg);
    const auto series = epoch_series(train, heldout, cfg.features, icfg, cfg.world, oracle, cfg.eval);

    WeightsRecord rec;
    rec.spec = cfg.features;
    rec.weights = series.extraction.weights;
    rec.strategy = "pairwise";
    rec.epochs = icfg.epochs;
    rec.seed = icfg.seed;
    rec.final_accuracy = series.extraction.epochs.empty() ? 0.0 : series.extraction.epochs.back().accuracy;
    auto w = out.artifact("weights.json");
    write_weights(w, rec);
    auto e = out.artifact("epoch_series.jsonl");
    write_metric_records(e, series.rows);
    for (const auto& m : series.extraction.epochs)
      out.log() << "epoch " << m.epoch << " loss " << fmt_double(m.loss) << " train_accuracy "
                << fmt_double(m.accuracy) << '\n';
  });
}

namespace {

RewardWeights load_extracted(const PipelineConfig& cfg) {
  auto in = open_artifact(cfg.output_dir, kIrl, "weights.json");
  const auto rec = read_weights(in);
  if (!(rec.spec == cfg.features)) throw ConfigError("weights were extracted under a different feature spec");
  return rec.weights;
}

}  // namespace

void evaluate(const PipelineConfig& cfg) {
  in_stage(kEval, [&] {
    cfg.validate();
    const auto w = load_extracted(cfg);
    const auto heldout = heldout_data(cfg);
    StageWriter out(cfg, kEval);
    const ToxicityOracle oracle(cfg.oracle);
    const auto rec = evaluate_weights(w, cfg.irl.epochs, heldout, cfg.features, cfg.world, oracle, cfg.eval);
    auto f = out.artifact("metrics.jsonl");
    write_metric_records(f, std::span<const MetricRecord>(&rec, 1));

    const auto cls = classify_with_reward(heldout.labeled, w, rec.threshold, cfg.features, cfg.world);
    ojson j;
    j["threshold"] = rec.threshold;
    j["tp"] = cls.tp;
    j["fp"] = cls.fp;
    j["fn"] = cls.fn;
    j["tn"] = cls.tn;
    j["accuracy"] = cls.accuracy;
    j["precision"] = cls.precision;
    j["recall"] = cls.recall;
    j["f1"] = cls.f1;
    auto c = out.artifact("classification.json");
    c << j.dump(1) << '\n';
    out.log() << "pair_accuracy " << fmt_double(rec.accuracy) << "\nf1 " << fmt_double(rec.f1) << '\n';
  });
}

void irl_rlhf(const PipelineConfig& cfg) {
  in_stage(kIrlRlhf, [&] {
    cfg.validate();
    const auto split = corpus_split(cfg);
    const auto base = load_policy(cfg, kSft);
    const auto tuned = load_policy(cfg, kRlhf);
    auto w = load_extracted(cfg);
    StageWriter out(cfg, kIrlRlhf);

    // Unit-norm weights keep the learned reward on the oracle's scale.
    const double norm = w.norm();
    if (norm > 0.0)
      for (double& x : w.w) x /= norm;
    const auto spec = cfg.features;
    const auto world = cfg.world;
    const SequenceRewardFn reward = [w, spec, world](const Sequence& gen, const Sequence&) {
      return reward_of(gen, w, spec, world);
    };
    PpoConfig ppo = cfg.rlhf;
    ppo.seed = cfg.seed + seed_offset::irl_rlhf;
    const auto r = train_rlhf(base, base, reward, sequences_of(split.train), ppo, cfg.world);
    write_rlhf_outputs(out, r);

    const ToxicityOracle oracle(cfg.oracle);
    const auto prompts = sequences_of(split.heldout);
    const auto seed = cfg.seed + seed_offset::toxicity;
    const int k = cfg.eval.samples_per_prompt;
    auto t = out.artifact("toxicity.jsonl");
    for (const auto& [stage, policy] : {std::pair{Stage::SFT, &base}, std::pair{Stage::RLHF, &tuned},
                                        std::pair{Stage::IRL_RLHF, &r.policy}}) {
      const auto row = toxicity_stage_metrics(*policy, prompts, k, seed, cfg.world, oracle, stage);
      t << toxicity_json(row).dump() << '\n';
    }
  });
}

void study_variability(const PipelineConfig& cfg) {
  in_stage(kVariability, [&] {
    cfg.validate();
    const auto train = load_pairs(cfg, "train.jsonl");
    const auto heldout = heldout_data(cfg);
    StageWriter out(cfg, kVariability);
    const ToxicityOracle oracle(cfg.oracle);
    const auto m = variability_study(train, heldout, cfg.features, irl_config(cfg), cfg.world, oracle,
                                     cfg.eval, cfg.variability_seeds);
    auto f = out.artifact("matrix.json");
    write_variability(f, m);
    for (std::size_t i = 0; i < m.seeds.size(); ++i)
      out.log() << "seed " << m.seeds[i] << " final_accuracy "
                << fmt_double(m.accuracy[i].empty() ? 0.0 : m.accuracy[i].back()) << '\n';
  });
}

}  // namespace stages

// ---- pipeline -------------------------------------------------------------

namespace {

ojson train_log_summary(const TrainLog& log) {
  ojson j;
  j["steps"] = log.size();
  if (!log.empty()) {
    j["final_reward_mean"] = log.back().reward_mean;
    j["final_kl"] = log.back().kl_estimate;
    j["final_total_loss"] = log.back().total_loss;
  }
  return j;
}

}  // namespace

std::string run_pipeline(const PipelineConfig& cfg) {
  stages::gen_corpus(cfg);
  stages::sft(cfg);
  stages::rlhf(cfg);
  stages::pairs(cfg);
  stages::irl_extract(cfg);
  stages::evaluate(cfg);
  stages::irl_rlhf(cfg);
  stages::study_variability(cfg);

  return in_stage(StageInfo{"report", "."}, [&] {
    const fs::path dir = cfg.output_dir;
    ojson report;
    report["format"] = "irllab-run-report";
    report["version"] = 1;
    report["seed"] = cfg.seed;

    auto tox_in = open_artifact(dir, kIrlRlhf, "toxicity.jsonl");
    report["toxicity"] = read_jsonl(tox_in);

    auto series_in = open_artifact(dir, kIrl, "epoch_series.jsonl");
    const auto series = read_metric_records(series_in);
    report["extraction"]["epochs"] = series.size();
    if (!series.empty()) {
      report["extraction"]["first_accuracy"] = series.front().accuracy;
      report["extraction"]["final_accuracy"] = series.back().accuracy;
    }
    auto weights_in = open_artifact(dir, kIrl, "weights.json");
    report["extraction"]["weights"] = read_weights(weights_in).weights.w;

    auto eval_in = open_artifact(dir, kEval, "metrics.jsonl");
    report["evaluation"] = read_jsonl(eval_in).at(0);

    auto rlhf_in = open_artifact(dir, kRlhf, "train_log.jsonl");
    report["rlhf"] = train_log_summary(read_train_log(rlhf_in));
    auto irl_rlhf_in = open_artifact(dir, kIrlRlhf, "train_log.jsonl");
    report["irl_rlhf"] = train_log_summary(read_train_log(irl_rlhf_in));

    auto var_in = open_artifact(dir, kVariability, "matrix.json");
    const auto m = read_variability(var_in);
    ojson finals = ojson::array();
    for (const auto& row : m.accuracy) finals.push_back(row.empty() ? 0.0 : row.back());
    report["variability"]["seeds"] = m.seeds;
    report["variability"]["final_accuracy"] = finals;
    report["variability"]["cosine"] = m.cosine;

    const auto text = report.dump(2) + "\n";
    std::ofstream out(dir / "report.json", std::ios::binary);
    out << text;
    return text;
  });
}

// ---- report ---------------------------------------------------------------

ReportFormat report_format_from_string(const std::string& s) {
  if (s == "table") return ReportFormat::Table;
  if (s == "csv") return ReportFormat::Csv;
  if (s == "json-lines") return ReportFormat::JsonLines;
  throw ConfigError("unknown report format '" + s + "'");
}

namespace {

using Row = std::vector<std::string>;

std::string cell(double v) {
  if (std::isnan(v)) return "nan";
  std::ostringstream s;
  s << std::setprecision(6) << v;
  return s.str();
}

const char* extension(ReportFormat f) {
  switch (f) {
    case ReportFormat::Table: return ".txt";
    case ReportFormat::Csv: return ".csv";
    case ReportFormat::JsonLines: return ".jsonl";
  }
  return "";
}

void write_table(std::ostream& os, const Row& header, const std::vector<Row>& rows, ReportFormat f) {
  switch (f) {
    case ReportFormat::Csv: {
      const auto line = [&](const Row& r) {
        for (std::size_t i = 0; i < r.size(); ++i) os << (i ? "," : "") << r[i];
        os << '\n';
      };
      line(header);
      for (const auto& r : rows) line(r);
      break;
    }
    case ReportFormat::Table: {
      std::vector<std::size_t> width(header.size());
      for (std::size_t i = 0; i < header.size(); ++i) width[i] = header[i].size();
      for (const auto& r : rows)
        for (std::size_t i = 0; i < r.size(); ++i) width[i] = std::max(width[i], r[i].size());
      const auto line = [&](const Row& r) {
        for (std::size_t i = 0; i < r.size(); ++i)
          os << (i ? "  " : "") << std::setw(static_cast<int>(width[i])) << r[i];
        os << '\n';
      };
      line(header);
      for (const auto& r : rows) line(r);
      break;
    }
    case ReportFormat::JsonLines: {
      for (const auto& r : rows) {
        ojson j;
        for (std::size_t i = 0; i < header.size(); ++i) {
          // Numeric cells go out as numbers; everything else as strings.
          const char* end = r[i].data() + r[i].size();
          long long n = 0;
          double v = 0.0;
          if (auto res = std::from_chars(r[i].data(), end, n); res.ec == std::errc{} && res.ptr == end)
            j[header[i]] = n;
          else if (auto res2 = std::from_chars(r[i].data(), end, v); res2.ec == std::errc{} && res2.ptr == end)
            j[header[i]] = v;
          else if (r[i] == "nan")
            j[header[i]] = nullptr;
          else
            j[header[i]] = r[i];
        }
        os << j.dump() << '\n';
      }
      break;
    }
  }
}

std::vector<Row> train_log_rows(const char* stage, const TrainLog& log) {
  std::vector<Row> rows;
  for (const auto& r : log)
    rows.push_back({stage, std::to_string(r.step), cell(r.total_loss), cell(r.policy_loss), cell(r.value_loss),
                    cell(r.returns_mean), cell(r.returns_std), cell(r.reward_mean), cell(r.kl_estimate)});
  return rows;
}

}  // namespace

std::vector<fs::path> emit_report(const fs::path& run_dir, ReportFormat format) {
  // Load everything first so a missing stage leaves no partial report behind.
  auto tox_in = open_artifact(run_dir, kIrlRlhf, "toxicity.jsonl");
  const auto toxicity = read_jsonl(tox_in);
  auto series_in = open_artifact(run_dir, kIrl, "epoch_series.jsonl");
  const auto series = read_metric_records(series_in);
  auto rlhf_in = open_artifact(run_dir, kRlhf, "train_log.jsonl");
  const auto rlhf_log = read_train_log(rlhf_in);
  auto irl_rlhf_in = open_artifact(run_dir, kIrlRlhf, "train_log.jsonl");
  const auto irl_rlhf_log = read_train_log(irl_rlhf_in);
  auto var_in = open_artifact(run_dir, kVariability, "matrix.json");
  const auto matrix = read_variability(var_in);

  const auto dir = run_dir / "report";
  fs::create_directories(dir);
  std::vector<fs::path> written;
  const auto open = [&](const std::string& name) {
    written.push_back(dir / name);
    std::ofstream out(written.back(), std::ios::binary);
    if (!out) throw ConfigError("cannot write " + written.back().string());
    return out;
  };
  const auto ext = std::string(extension(format));

  {
    std::vector<Row> rows;
    for (const auto& j : toxicity)
      rows.push_back({j.at("stage").get<std::string>(), cell(j.at("toxicity_ratio").get<double>()),
                      cell(j.at("mean_toxicity").get<double>()), cell(j.at("toxicity_probability").get<double>())});
    auto out = open("toxicity_table" + ext);
    write_table(out, {"stage", "toxicity_ratio", "mean_toxicity", "toxicity_probability"}, rows, format);
  }
  {
    std::vector<Row> rows;
    for (const auto& r : series)
      rows.push_back({std::to_string(r.epoch), cell(r.accuracy), cell(r.pearson), cell(r.spearman),
                      cell(r.kendall), cell(r.f1)});
    auto out = open("epoch_series" + ext);
    write_table(out, {"epoch", "accuracy", "pearson", "spearman", "kendall", "f1"}, rows, format);
  }
  {
    auto rows = train_log_rows("RLHF", rlhf_log);
    auto more = train_log_rows("IRL-RLHF", irl_rlhf_log);
    rows.insert(rows.end(), more.begin(), more.end());
    auto out = open("training_curves" + ext);
    write_table(out, {"stage", "step", "total_loss", "policy_loss", "value_loss", "returns_mean", "returns_std",
                      "reward_mean", "kl"},
                rows, format);
  }
  {
    Row header{"seed"};
    for (int e = 1; e <= matrix.epochs; ++e) header.push_back(std::to_string(e));
    std::vector<Row> rows;
    for (std::size_t i = 0; i < matrix.seeds.size(); ++i) {
      Row r{std::to_string(matrix.seeds[i])};
      for (double a : matrix.accuracy[i]) r.push_back(cell(a));
      rows.push_back(std::move(r));
    }
    auto out = open("variability_heatmap.csv");
    write_table(out, header, rows, ReportFormat::Csv);
  }
  return written;
}

}  // namespace irllab
