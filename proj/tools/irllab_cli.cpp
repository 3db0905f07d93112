#include <CLI11.hpp>

#include <cstdint>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "irllab/error.hpp"
#include "irllab/harness.hpp"

namespace {

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

irllab::PipelineConfig resolve(const CommonOptions& o) {
  irllab::PipelineConfig cfg = o.config.empty() ? irllab::PipelineConfig{} : irllab::load_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (!o.out.empty()) cfg.output_dir = o.out;
  cfg.validate();
  return cfg;
}

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config, "Configuration file (INI sections mirroring the pipeline config)");
  cmd->add_option("--seed", o.seed, "Master seed; overrides [run] seed");
  cmd->add_option("--out", o.out, "Run directory; overrides [run] output_dir");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Toy RLHF and inverse-RL reward extraction lab"};
  app.require_subcommand(1);

  struct Command {
    const char* name;
    const char* help;
    std::function<void(const irllab::PipelineConfig&)> run;
  };
  const std::vector<Command> commands = {
      {"gen-corpus", "Generate the labeled synthetic corpus", irllab::stages::gen_corpus},
      {"sft", "Fit the base policy on non-toxic sequences", irllab::stages::sft},
      {"rlhf", "PPO fine-tuning against the toxicity oracle", irllab::stages::rlhf},
      {"pairs", "Greedy RLHF vs base completions on shared prompts", irllab::stages::pairs},
      {"irl-extract", "Pairwise reward extraction with per-epoch held-out metrics", irllab::stages::irl_extract},
      {"evaluate", "Score the extracted reward against the oracle", irllab::stages::evaluate},
      {"irl-rlhf", "PPO under the extracted reward plus the staged toxicity table", irllab::stages::irl_rlhf},
      {"study-variability", "Multi-seed extraction variability study", irllab::stages::study_variability},
      {"run", "Run every stage and write report.json",
       [](const irllab::PipelineConfig& cfg) { irllab::run_pipeline(cfg); }},
  };

  std::vector<CommonOptions> options(commands.size() + 1);
  std::vector<CLI::App*> subs;
  for (std::size_t i = 0; i < commands.size(); ++i) {
    auto* cmd = app.add_subcommand(commands[i].name, commands[i].help);
    add_common(cmd, options[i]);
    subs.push_back(cmd);
  }
  auto& report_opts = options.back();
  std::string format = "table";
  auto* report = app.add_subcommand("report", "Emit tables and plot data from a finished run directory");
  add_common(report, report_opts);
  report->add_option("--format", format, "table, csv or json-lines")
      ->check(CLI::IsMember({"table", "csv", "json-lines"}));

  CLI11_PARSE(app, argc, argv);

  std::string stage;
  try {
    for (std::size_t i = 0; i < commands.size(); ++i) {
      if (!subs[i]->parsed()) continue;
      stage = commands[i].name;
      const auto cfg = resolve(options[i]);
      commands[i].run(cfg);
      std::cout << stage << ": done (" << cfg.output_dir << ")\n";
    }
    if (report->parsed()) {
      stage = "report";
      const auto cfg = resolve(report_opts);
      for (const auto& path : irllab::emit_report(cfg.output_dir, irllab::report_format_from_string(format)))
        std::cout << path.string() << '\n';
    }
  } catch (const irllab::StageError& e) {
    std::cerr << "irllab: stage " << e.stage() << " failed: " << e.detail() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "irllab: stage " << stage << " failed: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
