#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "sgen/dp_oracle.hpp"
#include "sgen/feasibility.hpp"
#include "sgen/metrics.hpp"
#include "sgen/realism_prior.hpp"
#include "sgen/scenario.hpp"
#include "sgen/simulator.hpp"

namespace sgen {

inline constexpr const char* kCodeVersion = "0.1.0";

struct SynthConfig {
  int train_scenarios = 100;  // prior training set
  int eval_scenarios = 100;   // held out, used by collect and evaluate
  std::vector<ArchetypeKind> archetypes{std::begin(kAllArchetypes), std::end(kAllArchetypes)};
  double duration = 10.0;  // s
};

struct EvaluateConfig {
  std::vector<CbvMode> modes{CbvMode::kPrior, CbvMode::kSafer, CbvMode::kSaferNoLfr};
  bool sr_conditional = false;
  bool dump_episodes = true;
};

struct OracleConfig {
  int cells = 200;  // per axis of the braking grid
  DpConfig dp;
};

/// One file, one section per module; omitted fields keep their defaults. The global seed
/// derives every stage seed.
struct PipelineConfig {
  std::filesystem::path workdir = "work";
  std::uint64_t seed = 1;
  int jobs = 1;
  SynthConfig synth;
  PriorConfig prior;
  TrainPriorConfig train_prior;
  CollectConfig collect;
  FeasibilityNetConfig feasibility_net;
  TrainFeasibilityConfig train_feasibility;
  RolloutConfig rollout;
  EvaluateConfig evaluate;
  OracleConfig oracle;

  /// Copies the global seed and the shared feasibility settings into the sections.
  void propagate();
  /// Throws Error(kValidation) naming every violated field.
  void validate() const;
};

nlohmann::json to_json(const PipelineConfig& c);
/// Unknown keys are validation errors. Throws Error(kValidation) listing all problems.
PipelineConfig pipeline_config_from_json(const nlohmann::json& j);
PipelineConfig load_pipeline_config(const std::filesystem::path& path);

/// FNV-1a 64 of the canonical JSON of the config, without workdir and jobs.
std::string config_hash(const PipelineConfig& c);

/// Header stamped into every artifact.
nlohmann::json provenance(const PipelineConfig& c);

/// Runs fn(i) for i in [0, n) on up to `jobs` threads.
void parallel_for(int n, int jobs, const std::function<void(int)>& fn);

struct Workdir {
  std::filesystem::path root;

  std::filesystem::path scenarios(const std::string& split) const { return root / "scenarios" / split; }
  std::filesystem::path prior_checkpoint() const { return root / "checkpoints" / "prior.json"; }
  std::filesystem::path feasibility_checkpoint() const {
    return root / "checkpoints" / "feasibility.json";
  }
  std::filesystem::path dataset() const { return root / "datasets" / "offline.jsonl"; }
  std::filesystem::path oracle_dir() const { return root / "oracle"; }
  std::filesystem::path reports() const { return root / "reports"; }
};

std::vector<Scenario> synthesize_split(const PipelineConfig& c, const std::string& split);
/// Throws Error(kMissingArtifact) naming the producing command when the split is absent.
std::vector<Scenario> load_split(const Workdir& w, const std::string& split);

struct ModeEvaluation {
  MetricsReport report;
  std::vector<EpisodeResult> stage1;  // log-replay ego
  std::vector<EpisodeResult> stage2;  // reactive ego
  KinematicHistograms histograms;
};

/// Both stages for one CBV mode; scenario i uses seed rollout.seed + i in both stages.
ModeEvaluation evaluate_mode(std::span<const Scenario> scenarios, const RolloutConfig& rollout,
                             const Models& models, int jobs, bool sr_conditional,
                             const nlohmann::json& config_echo = {});

// Commands. Each writes its artifacts plus a manifest under workdir/manifests.
void cmd_synth(const PipelineConfig& c);
void cmd_train_prior(const PipelineConfig& c);
void cmd_collect(const PipelineConfig& c);
void cmd_train_feasibility(const PipelineConfig& c);
void cmd_oracle(const PipelineConfig& c);
void cmd_evaluate(const PipelineConfig& c);
/// Consolidates the reports present in the workdir into reports/summary.txt and returns it.
std::string cmd_report(const PipelineConfig& c);

}  // namespace sgen
