#pragma once

#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "json.hpp"
#include "sgen/feasibility.hpp"
#include "sgen/kinematics.hpp"

namespace sgen {

struct ResampleConfig {
  int n = 20;                     // trust-region size
  double delta = 50.0;            // margin added to V_h of infeasible candidates
  double adversary_range = 40.0;  // m, distance clamp and activation range

  /// delta > adversary_range keeps every infeasible loss above every feasible one.
  void validate() const;
};

nlohmann::json to_json(const ResampleConfig& c);
ResampleConfig resample_config_from_json(const nlohmann::json& j);

struct TrustRegion {
  std::vector<std::pair<MotionToken, double>> tokens;  // probability non-increasing

  bool contains(MotionToken t) const;
};

/// The n most probable tokens, ties broken by lowest index.
TrustRegion trust_region(std::span<const double> dist, int n);

/// Batch V_h over predicted joint states.
using ValueFunction = std::function<std::vector<double>(std::span<const RelativeFeatures>)>;
ValueFunction value_function(const FeasibilityModel& model);

struct CandidateEvaluation {
  MotionToken token;
  double probability = 0.0;
  AgentState cbv_next;
  AgentState ego_next;
  RelativeFeatures joint_next;
  double value = 0.0;     // V_h at the predicted joint state
  double distance = 0.0;  // predicted box distance, clamped to adversary_range
  double loss = 0.0;
  bool feasible = false;
};

/// Ego prediction over one planning step at constant speed and heading.
AgentState predict_constant_velocity(const AgentState& ego, double dt = kPlanDt);

/// Single-candidate loss: distance if V_h <= 0, else V_h + delta.
CandidateEvaluation adversarial_loss(MotionToken token, const AgentState& ego_now,
                                     const AgentState& cbv_now, const ValueFunction& v_h,
                                     const ResampleConfig& cfg);

enum class LossMode {
  kFeasibilityGuided,  // piecewise loss
  kDistanceOnly,       // feasible branch for every candidate
};

/// Evaluates every trust-region candidate in one V_h batch.
std::vector<CandidateEvaluation> evaluate_candidates(const TrustRegion& region,
                                                     const AgentState& ego_now,
                                                     const AgentState& cbv_now,
                                                     const ValueFunction& v_h,
                                                     const ResampleConfig& cfg);

/// Index of the minimum loss (distance under kDistanceOnly); ties to the lowest token.
std::size_t select_candidate(std::span<const CandidateEvaluation> candidates, LossMode mode);

MotionToken select_cbv_token(std::span<const double> dist, const AgentState& ego_now,
                             const AgentState& cbv_now, const ValueFunction& v_h,
                             const ResampleConfig& cfg,
                             LossMode mode = LossMode::kFeasibilityGuided);

}  // namespace sgen
