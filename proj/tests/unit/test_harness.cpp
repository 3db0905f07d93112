#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "irllab/harness.hpp"

using namespace irllab;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("irllab_harness_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  return p;
}

// Window-1 policy that always prefers `next[t]` after token t.
PolicyParams deterministic_policy(const WorldConfig& world, const std::vector<Token>& next) {
  PolicyParams p(world.vocab_size, 1);
  for (Token t = 0; t < world.vocab_size; ++t)
    p.logits(p.context_index(std::vector<Token>{t}))[static_cast<std::size_t>(next[static_cast<std::size_t>(t)])] =
        1000.0;
  return p;
}

std::vector<Sequence> prompts_ending_in(const std::vector<Token>& last, const WorldConfig& world) {
  std::vector<Sequence> out;
  for (Token t : last) {
    std::vector<Token> toks(static_cast<std::size_t>(world.prompt_len), 1);
    toks.back() = t;
    out.push_back(Sequence{toks, toks.size()});
  }
  return out;
}

PipelineConfig small_config(const fs::path& dir) {
  PipelineConfig cfg;
  cfg.output_dir = dir.string();
  cfg.corpus.n_per_class = 60;
  cfg.rlhf.total_steps = 30;
  cfg.irl.epochs = 6;
  cfg.variability_seeds = 3;
  cfg.eval.samples_per_prompt = 4;
  return cfg;
}

}  // namespace

TEST_CASE("config round trip and validation") {
  PipelineConfig cfg;
  cfg.seed = 17;
  cfg.rlhf.lr = 0.37;
  cfg.irl.init_scale = 0.123456789;
  cfg.world.toxic_lexicon = {8, 9, 10, 11};
  cfg.oracle.toxic_lexicon = cfg.world.toxic_lexicon;
  cfg.features.bigram = true;
  std::stringstream s;
  write_config(s, cfg);
  const auto back = read_config(s);
  std::stringstream again;
  write_config(again, back);
  CHECK(again.str() == s.str());
  CHECK(back.irl.init_scale == cfg.irl.init_scale);
  CHECK(back.oracle.toxic_lexicon == cfg.world.toxic_lexicon);

  std::istringstream partial("[rlhf]\ntotal_steps = 5\n");
  const auto p = read_config(partial);
  CHECK(p.rlhf.total_steps == 5);
  CHECK(p.world.vocab_size == 12);

  std::istringstream unknown("[rlhf]\nlearning_rate = 1\n");
  CHECK_THROWS_AS(read_config(unknown), ConfigError);
  std::istringstream bad("[world]\nvocab_size = twelve\n");
  CHECK_THROWS_AS(read_config(bad), ConfigError);

  PipelineConfig invalid;
  invalid.eval.pair_fraction = 0.8;
  CHECK_THROWS_AS(invalid.validate(), ConfigError);
  invalid = PipelineConfig{};
  invalid.variability_seeds = 1;
  CHECK_THROWS_AS(invalid.validate(), ConfigError);
}

TEST_CASE("toxicity stage metrics") {
  const WorldConfig world;
  const ToxicityOracle oracle{OracleConfig{}};
  const auto prompts = prompts_ending_in(std::vector<Token>(10, 2), world);

  SUBCASE("clean policy") {
    const auto p = deterministic_policy(world, std::vector<Token>(13, 0));
    const auto t = toxicity_stage_metrics(p, prompts, 5, 1, world, oracle);
    CHECK(t.toxicity_ratio == 0.0);
    CHECK(t.mean_toxicity == 0.0);
    CHECK(t.toxicity_probability == 0.0);
  }
  SUBCASE("lexicon-only policy") {
    const auto p = deterministic_policy(world, std::vector<Token>(13, 10));
    const auto t = toxicity_stage_metrics(p, prompts, 5, 1, world, oracle, Stage::RLHF);
    CHECK(t.stage == Stage::RLHF);
    CHECK(t.toxicity_ratio == 1.0);
    CHECK(t.mean_toxicity == 1.0);
    CHECK(t.toxicity_probability == 1.0);
  }
  SUBCASE("two toxic of one hundred greedy completions") {
    // After token 0 the policy switches to the lexicon and stays there.
    std::vector<Token> next(13, 1);
    next[0] = 9;
    next[9] = 9;
    const auto p = deterministic_policy(world, next);
    std::vector<Token> last(100, 2);
    last[17] = 0;
    last[63] = 0;
    const auto t = toxicity_stage_metrics(p, prompts_ending_in(last, world), 1, 3, world, oracle);
    CHECK(t.toxicity_ratio == doctest::Approx(0.02));
  }
  CHECK_THROWS_AS(toxicity_stage_metrics(PolicyParams(12, 1), prompts, 0, 1, world, oracle), ConfigError);
}

TEST_CASE("corpus split is a seeded partition") {
  const WorldConfig world;
  const auto corpus = generate_corpus(world, 50, 0.8, 0.35, 3);
  const auto s = split_corpus(corpus, EvalSettings{}, 9);
  CHECK(s.train.size() == 50);
  CHECK(s.heldout.size() == 25);
  CHECK(s.calibration.size() == 25);
  CHECK(split_corpus(corpus, EvalSettings{}, 9).heldout == s.heldout);
  CHECK_FALSE(split_corpus(corpus, EvalSettings{}, 10).heldout == s.heldout);
  const auto tiny = generate_corpus(world, 1, 0.8, 0.35, 3);
  CHECK_THROWS_AS(split_corpus(tiny, EvalSettings{}, 9), SplitError);
  CHECK_THROWS_AS(split_corpus({}, EvalSettings{}, 9), EmptyCorpusError);
}

TEST_CASE("pipeline stages, studies and report") {
  const auto dir = scratch("pipeline");
  auto cfg = small_config(dir);
  const auto report = run_pipeline(cfg);
  CHECK(report.find("\"IRL-RLHF\"") != std::string::npos);

  for (const char* f : {"corpus/corpus.jsonl", "sft/policy.json", "rlhf/policy.json", "rlhf/train_log.jsonl",
                        "pairs/train.jsonl", "pairs/heldout.jsonl", "irl/weights.json", "irl/epoch_series.jsonl",
                        "evaluate/metrics.jsonl", "irl_rlhf/toxicity.jsonl", "variability/matrix.json",
                        "sft/config.ini", "sft/log.txt", "report.json"})
    CHECK_MESSAGE(fs::exists(dir / f), f);

  SUBCASE("re-run reproduces the report bytes") { CHECK(run_pipeline(cfg) == report); }

  SUBCASE("stage config snapshot reads back") {
    std::ifstream in(dir / "rlhf" / "config.ini");
    const auto back = read_config(in);
    CHECK(back.rlhf.total_steps == 30);
    CHECK(back.output_dir == cfg.output_dir);
  }

  std::ifstream pin(dir / "pairs" / "train.jsonl");
  const auto pairs = read_pairs(pin, cfg.world);
  std::ifstream cin(dir / "corpus" / "corpus.jsonl");
  const auto split = split_corpus(read_corpus(cin, cfg.world), cfg.eval, cfg.seed + seed_offset::split);
  std::ifstream hin(dir / "pairs" / "heldout.jsonl");
  HeldoutData heldout;
  heldout.pairs = read_pairs(hin, cfg.world);
  for (const auto& item : split.heldout) heldout.originals.push_back(item.seq);
  heldout.labeled = split.heldout;
  heldout.calibration = split.calibration;
  const ToxicityOracle oracle(cfg.oracle);

  SUBCASE("epoch series shape") {
    IrlConfig icfg = cfg.irl;
    icfg.epochs = 1;
    CHECK(epoch_series(pairs, heldout, cfg.features, icfg, cfg.world, oracle, cfg.eval).rows.size() == 1);
    icfg.epochs = 30;
    const auto s = epoch_series(pairs, heldout, cfg.features, icfg, cfg.world, oracle, cfg.eval);
    REQUIRE(s.rows.size() == 30);
    for (const auto& r : s.rows) {
      CHECK(r.accuracy >= 0.0);
      CHECK(r.accuracy <= 1.0);
      CHECK(r.n == static_cast<long>(2 * heldout.pairs.size()));
    }
  }

  SUBCASE("variability rows match isolated runs") {
    IrlConfig icfg = cfg.irl;
    icfg.epochs = 10;
    icfg.seed = 5;
    const auto m = variability_study(pairs, heldout, cfg.features, icfg, cfg.world, oracle, cfg.eval, 5);
    REQUIRE(m.accuracy.size() == 5);
    for (const auto& row : m.accuracy) CHECK(row.size() == 10);
    for (int i : {0, 3}) {
      IrlConfig single = icfg;
      single.seed = variability_seed(icfg.seed, i);
      const auto s = epoch_series(pairs, heldout, cfg.features, single, cfg.world, oracle, cfg.eval);
      for (std::size_t e = 0; e < 10; ++e) CHECK(m.accuracy[static_cast<std::size_t>(i)][e] == s.rows[e].accuracy);
      CHECK(m.final_weights[static_cast<std::size_t>(i)] == s.extraction.weights);
    }
    for (std::size_t a = 0; a < 5; ++a) CHECK(m.cosine[a][a] == doctest::Approx(1.0));
    std::stringstream ss;
    write_variability(ss, m);
    const auto back = read_variability(ss);
    CHECK(back.accuracy == m.accuracy);
    CHECK(back.seeds == m.seeds);
    CHECK_THROWS_AS(variability_study(pairs, heldout, cfg.features, icfg, cfg.world, oracle, cfg.eval, 1),
                    ConfigError);
  }

  SUBCASE("report files") {
    for (auto fmt : {ReportFormat::Table, ReportFormat::Csv, ReportFormat::JsonLines}) {
      const auto files = emit_report(dir, fmt);
      CHECK(files.size() == 4);
      for (const auto& f : files) CHECK(fs::file_size(f) > 0);
    }
    std::ifstream heat(dir / "report" / "variability_heatmap.csv");
    std::string header, row;
    std::getline(heat, header);
    std::getline(heat, row);
    CHECK(header == "seed,1,2,3,4,5,6");
    CHECK(row.rfind(std::to_string(variability_seed(cfg.seed + seed_offset::irl, 0)) + ",", 0) == 0);
    CHECK_THROWS_AS(report_format_from_string("xml"), ConfigError);
  }

  fs::remove_all(dir);
}

TEST_CASE("missing stages are named") {
  const auto dir = scratch("empty");
  fs::create_directories(dir);
  try {
    emit_report(dir, ReportFormat::Csv);
    FAIL("expected a missing-stage error");
  } catch (const MissingStageError& e) {
    CHECK(std::string(e.what()).find("irl-rlhf") != std::string::npos);
  }
  auto cfg = small_config(dir);
  try {
    stages::sft(cfg);
    FAIL("expected a missing-stage error");
  } catch (const MissingStageError& e) {
    CHECK(std::string(e.what()).find("gen-corpus") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("stage failures carry the stage name and keep earlier artifacts") {
  const auto dir = scratch("failing");
  auto cfg = small_config(dir);
  cfg.corpus.n_per_class = 1;  // too small to split
  stages::gen_corpus(cfg);
  stages::sft(cfg);
  try {
    stages::rlhf(cfg);
    FAIL("expected a stage error");
  } catch (const StageError& e) {
    CHECK(e.stage() == "rlhf");
  }
  CHECK(fs::exists(dir / "sft" / "policy.json"));
  fs::remove_all(dir);
}

TEST_CASE("beta sweep keeps input order") {
  const WorldConfig world;
  const auto corpus = generate_corpus(world, 20, 0.8, 0.35, 1);
  std::vector<Sequence> clean, prompts;
  for (const auto& item : corpus) {
    prompts.push_back(item.seq);
    if (item.label == Label::NonToxic) clean.push_back(item.seq);
  }
  const auto base = mle_fit(clean, world, 50, 0.05);
  const ToxicityOracle oracle{OracleConfig{}};
  PpoConfig ppo;
  ppo.total_steps = 10;
  const std::vector<double> betas{1.0, 0.0};
  const auto rows = beta_sweep(base, [&](const Sequence& g, const Sequence& o) { return oracle.pairwise_reward(g, o); },
                               prompts, ppo, betas, world, 2, 3);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].beta == 1.0);
  CHECK(rows[1].beta == 0.0);
  CHECK(rows[0].log.size() == 10);
}
