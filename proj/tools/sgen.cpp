// sgen: command line front end of the scenario generation pipeline.
// Exit codes: 0 success, 1 validation error, 2 runtime failure.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "sgen/error.hpp"
#include "sgen/pipeline.hpp"

namespace {

constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

bool is_validation(sgen::ErrorKind k) {
  return k == sgen::ErrorKind::kValidation || k == sgen::ErrorKind::kConfiguration;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Safety-critical driving scenario generator"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> workdir;
  std::optional<int> jobs;
  bool sr_conditional = false;
  app.add_option("--config", config_path, "JSON config file (defaults apply when omitted)");
  app.add_option("--seed", seed, "Global seed; overrides the config");
  app.add_option("--workdir", workdir, "Artifact directory; overrides the config");
  app.add_option("--jobs", jobs, "Worker threads; overrides the config");

  struct Command {
    const char* name;
    const char* help;
  };
  const Command commands[] = {
      {"synth", "Synthesize the train and eval scenario sets"},
      {"train-prior", "Train the realism prior on the train set"},
      {"collect", "Collect the offline ego-CBV transition dataset"},
      {"train-feasibility", "Train the feasibility value networks"},
      {"oracle", "Grid DP oracle on the 1D braking environment"},
      {"evaluate", "Dual-stage evaluation of every configured CBV mode"},
      {"report", "Consolidate the workdir reports"},
  };
  for (const Command& c : commands) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    if (std::string(c.name) == "evaluate") {
      sub->add_flag("--sr-conditional", sr_conditional,
                    "Also report SR over stage-1 collisions only");
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  }

  try {
    sgen::PipelineConfig cfg =
        config_path.empty() ? sgen::PipelineConfig{} : sgen::load_pipeline_config(config_path);
    if (seed) cfg.seed = *seed;
    if (workdir) cfg.workdir = *workdir;
    if (jobs) cfg.jobs = *jobs;
    if (sr_conditional) cfg.evaluate.sr_conditional = true;
    cfg.propagate();
    cfg.validate();

    const std::string name = app.get_subcommands().front()->get_name();
    std::cerr << "sgen " << name << " (config " << sgen::config_hash(cfg) << ", seed " << cfg.seed
              << ")\n";
    if (name == "synth") {
      sgen::cmd_synth(cfg);
    } else if (name == "train-prior") {
      sgen::cmd_train_prior(cfg);
    } else if (name == "collect") {
      sgen::cmd_collect(cfg);
    } else if (name == "train-feasibility") {
      sgen::cmd_train_feasibility(cfg);
    } else if (name == "oracle") {
      sgen::cmd_oracle(cfg);
    } else if (name == "evaluate") {
      sgen::cmd_evaluate(cfg);
      std::cout << sgen::cmd_report(cfg);
    } else if (name == "report") {
      std::cout << sgen::cmd_report(cfg);
    }
    return 0;
  } catch (const sgen::Error& e) {
    std::cerr << "error (" << sgen::to_string(e.kind()) << "): " << e.what() << '\n';
    return is_validation(e.kind()) ? kExitValidation : kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}
