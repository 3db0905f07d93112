#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "irllab/error.hpp"
#include "irllab/irl.hpp"
#include "irllab/metrics.hpp"
#include "irllab/oracle.hpp"
#include "irllab/policy.hpp"
#include "irllab/ppo.hpp"
#include "irllab/world.hpp"

namespace irllab {

struct CorpusSettings {
  int n_per_class = 200;
  double toxic_rate_hi = 0.8;
  double toxic_rate_lo = 0.35;
};

struct EvalSettings {
  double pair_fraction = 0.5;     // corpus share whose prompts train the extractor
  double heldout_fraction = 0.25; // share used for held-out metrics; the rest calibrates
  int samples_per_prompt = 25;    // k for the toxicity probability
  double threshold = 0.0;
  bool calibrate = true;
};

struct PipelineConfig {
  WorldConfig world;
  FeatureSpec features;
  OracleConfig oracle;
  CorpusSettings corpus;
  MleSettings sft;
  PpoConfig rlhf;
  IrlConfig irl;
  EvalSettings eval;
  int variability_seeds = 5;
  std::string output_dir = "run";
  std::uint64_t seed = 0;

  void validate() const;
};

// Stage seeds are fixed offsets from the master seed.
namespace seed_offset {
inline constexpr std::uint64_t corpus = 1;
inline constexpr std::uint64_t split = 2;
inline constexpr std::uint64_t rlhf = 3;
inline constexpr std::uint64_t irl = 4;
inline constexpr std::uint64_t irl_rlhf = 5;
inline constexpr std::uint64_t toxicity = 6;
inline constexpr std::uint64_t variability = 100;
}  // namespace seed_offset

// INI-style nested key/value file: [world] vocab_size = 12, etc. Unknown keys
// are rejected; missing keys keep their defaults.
PipelineConfig read_config(std::istream& is);
PipelineConfig load_config(const std::filesystem::path& path);
void write_config(std::ostream& os, const PipelineConfig& cfg);

enum class Stage { SFT, RLHF, IRL_RLHF };
const char* to_string(Stage s);

struct StageToxicity {
  Stage stage = Stage::SFT;
  double toxicity_ratio = 0.0;
  double mean_toxicity = 0.0;
  double toxicity_probability = 0.0;
};

StageToxicity toxicity_stage_metrics(const PolicyParams& policy, std::span<const Sequence> prompts,
                                     int samples_per_prompt, std::uint64_t seed,
                                     const WorldConfig& world, const ToxicityOracle& oracle,
                                     Stage stage = Stage::SFT);

// Corpus split by a seeded permutation into extractor-training prompts,
// held-out prompts and a calibration set.
struct CorpusSplit {
  std::vector<LabeledSequence> train, heldout, calibration;
};
CorpusSplit split_corpus(const std::vector<LabeledSequence>& corpus, const EvalSettings& eval,
                         std::uint64_t seed);

// Greedy completions of `preferred` (RLHF) and `rejected` (base) per prompt.
std::vector<PairedSample> make_pairs(const PolicyParams& preferred, const PolicyParams& rejected,
                                     std::span<const LabeledSequence> prompts,
                                     const WorldConfig& world);

// Everything needed to score a weight vector on held-out data.
struct HeldoutData {
  std::vector<PairedSample> pairs;        // aligned with `originals`
  std::vector<Sequence> originals;        // corpus sequences the prompts came from
  std::vector<LabeledSequence> labeled;   // held-out corpus sequences
  std::vector<LabeledSequence> calibration;
};

MetricRecord evaluate_weights(const RewardWeights& w, int epoch, const HeldoutData& heldout,
                              const FeatureSpec& spec, const WorldConfig& world,
                              const ToxicityOracle& oracle, const EvalSettings& eval);

struct EpochSeries {
  ExtractResult extraction;
  std::vector<MetricRecord> rows;  // one per epoch, evaluated on held-out data
};

EpochSeries epoch_series(std::span<const PairedSample> pairs, const HeldoutData& heldout,
                         const FeatureSpec& spec, const IrlConfig& cfg, const WorldConfig& world,
                         const ToxicityOracle& oracle, const EvalSettings& eval);

struct VariabilityMatrix {
  std::vector<std::uint64_t> seeds;
  int epochs = 0;
  std::vector<std::vector<double>> accuracy;  // seeds x epochs, held-out pair accuracy
  std::vector<RewardWeights> final_weights;
  std::vector<std::vector<double>> cosine;    // seeds x seeds
};

std::uint64_t variability_seed(std::uint64_t base_seed, int index);

// Runs the pairwise extraction n_seeds times (concurrently) with identical
// hyperparameters and seeds variability_seed(cfg.seed, i).
VariabilityMatrix variability_study(std::span<const PairedSample> pairs, const HeldoutData& heldout,
                                    const FeatureSpec& spec, const IrlConfig& cfg,
                                    const WorldConfig& world, const ToxicityOracle& oracle,
                                    const EvalSettings& eval, int n_seeds);

void write_variability(std::ostream& os, const VariabilityMatrix& m);
VariabilityMatrix read_variability(std::istream& is);

struct BetaSweepRow {
  double beta = 0.0;
  double final_kl = 0.0;  // Monte-Carlo KL(trained || reference) per completion token
  TrainLog log;
};

// Trains one PPO run per beta (concurrently, from `reference`) and measures
// the final divergence from it with common sampling streams. Rows follow the
// order of `betas`.
std::vector<BetaSweepRow> beta_sweep(const PolicyParams& reference, const SequenceRewardFn& reward,
                                     std::span<const Sequence> prompts, const PpoConfig& cfg,
                                     std::span<const double> betas, const WorldConfig& world,
                                     int kl_samples_per_prompt, std::uint64_t kl_seed);

// Stage runners. Each reads its inputs from, and writes its artifacts to, the
// run directory cfg.output_dir: one subdirectory per stage holding a config
// snapshot, the artifact(s) and a log.
namespace stages {
void gen_corpus(const PipelineConfig& cfg);
void sft(const PipelineConfig& cfg);
void rlhf(const PipelineConfig& cfg);
void pairs(const PipelineConfig& cfg);
void irl_extract(const PipelineConfig& cfg);
void evaluate(const PipelineConfig& cfg);
void irl_rlhf(const PipelineConfig& cfg);
void study_variability(const PipelineConfig& cfg);
}  // namespace stages

// Thrown by run_pipeline and the stage runners; names the failing stage.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what)
      : Error("stage", stage + ": " + what), stage_(std::move(stage)), detail_(what) {}
  const std::string& stage() const noexcept { return stage_; }
  // The underlying error message, without the stage prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  std::string stage_;
  std::string detail_;
};

// Runs every stage in order and writes report.json into the run directory.
// Returns the serialized report.
std::string run_pipeline(const PipelineConfig& cfg);

enum class ReportFormat { Table, Csv, JsonLines };
ReportFormat report_format_from_string(const std::string& s);

// Regenerates the plot/table data from persisted stage artifacts into
// <run_dir>/report/. Returns the written paths.
std::vector<std::filesystem::path> emit_report(const std::filesystem::path& run_dir, ReportFormat format);

}  // namespace irllab
