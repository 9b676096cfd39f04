#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "sgen/driving.hpp"
#include "sgen/feasibility.hpp"
#include "sgen/realism_prior.hpp"
#include "sgen/resampler.hpp"
#include "sgen/scenario.hpp"

namespace sgen {

enum class EgoKind { kLogReplay, kReactive };

struct EgoPolicy {
  EgoKind kind = EgoKind::kLogReplay;
  double time_headway = 1.5;  // s
  double max_brake = 5.0;     // m/s^2
  double min_lookahead = 4.0;  // m, pure-pursuit lookahead floor
  double emergency_margin = 1.0;  // m above d_th that triggers full braking
};

enum class CbvMode {
  kPrior,       // sampled from the prior
  kSafer,       // trust region + feasibility-guided loss
  kSaferNoLfr,  // trust region + distance loss only
  kLogReplay,   // logged track re-tokenized (diagnostic)
};

enum class BackgroundMode { kPrior, kLogReplay };

const char* to_string(EgoKind k);
const char* to_string(CbvMode m);
const char* to_string(BackgroundMode m);
EgoKind ego_kind_from_string(const std::string& s);
CbvMode cbv_mode_from_string(const std::string& s);
BackgroundMode background_mode_from_string(const std::string& s);

struct RolloutConfig {
  double horizon = 10.0;  // s, a multiple of the planning period
  std::uint64_t seed = 1;
  CbvMode cbv_mode = CbvMode::kPrior;
  BackgroundMode background = BackgroundMode::kPrior;
  ResampleConfig resample;
  FeasibilityConfig feasibility;

  int planning_steps() const;
  /// Throws Error(kValidation).
  void validate() const;
};

nlohmann::json to_json(const RolloutConfig& c);
RolloutConfig rollout_config_from_json(const nlohmann::json& j);

struct Models {
  const PriorModel* prior = nullptr;
  const FeasibilityModel* feasibility = nullptr;
};

struct CbvDecision {
  MotionToken token;
  double probability = 0.0;  // prior probability of the executed token
  int rank = 0;              // 0 = most probable under the prior
  bool resampled = false;    // chosen by the resampler rather than sampled
};

struct EpisodeResult {
  std::vector<Track> trajectories;  // every agent at kSimDt, up to termination
  int ego_index = 0;
  int cbv_index = 1;
  bool collision = false;
  std::optional<double> collision_time;  // s
  int collided_with = -1;
  std::vector<MotionToken> ego_tokens;
  std::vector<CbvDecision> cbv_decisions;

  int substeps() const {
    return trajectories.empty() ? 0 : static_cast<int>(trajectories.front().size()) - 1;
  }
};

nlohmann::json to_json(const EpisodeResult& r);
EpisodeResult episode_from_json(const nlohmann::json& j);

struct EgoObservation {
  const AgentState& ego;
  std::span<const AgentState> others;
  const Path& path;
  double desired_speed = 10.0;
  double d_th = 0.3;
};

/// Pure-pursuit steering toward the path, IDM speed control behind agents in the path
/// corridor, and full braking when an agent ahead is predicted (constant velocity) to come
/// within d_th + emergency_margin during the next second. Snapped to the token grid.
MotionToken reactive_ego_step(const EgoObservation& obs, const EgoPolicy& policy = {});

/// Closed-loop rollout. The ego is checked against every agent at each sub-step and the
/// episode stops at the first overlap. Deterministic in the config seed.
EpisodeResult run_episode(const Scenario& scenario, const EgoPolicy& ego,
                          const RolloutConfig& config, const Models& models);

struct CollectConfig {
  int episodes = 30;
  int adversarial_period = 3;  // every n-th episode uses the distance-loss CBV (2:1 mix)
  int log_replay_period = 0;   // every n-th episode uses the log-replay ego; 0 = reactive only
  int cautious_period = 2;     // every n-th episode uses the cautious reactive ego; 0 = never
  double cautious_headway = 2.5;  // s
  double cautious_margin = 3.0;   // m
  RolloutConfig rollout;       // seed is offset per episode
};

nlohmann::json to_json(const CollectConfig& c);
CollectConfig collect_config_from_json(const nlohmann::json& j);

/// Ego-CBV transitions of one episode at planning resolution. The ego control is recovered
/// from consecutive ego states. A horizon-ended episode marks its last transition terminal;
/// a collision-ended one appends a terminal record at the final state.
std::vector<TransitionRecord> episode_records(const EpisodeResult& episode,
                                              const FeasibilityConfig& cfg);

/// Records of episode e of collect_offline_dataset.
std::vector<TransitionRecord> collect_episode(std::span<const Scenario> scenarios,
                                              const CollectConfig& config, const Models& models,
                                              int e);

/// Episode e runs scenario e mod |scenarios| with the reactive ego (log replay on every
/// log_replay_period-th episode, longer headway and emergency margin on every
/// cautious_period-th) and uses the distance-loss CBV on every
/// adversarial_period-th episode (prior CBV otherwise).
std::vector<TransitionRecord> collect_offline_dataset(std::span<const Scenario> scenarios,
                                                      const CollectConfig& config,
                                                      const Models& models);

}  // namespace sgen
