#include "sgen/resampler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sgen/error.hpp"

namespace sgen {

void ResampleConfig::validate() const {
  std::vector<std::string> bad;
  if (n < 1) bad.push_back("n must be >= 1");
  if (!(adversary_range > 0.0)) bad.push_back("adversary_range must be > 0");
  if (!(delta > adversary_range)) bad.push_back("delta must exceed adversary_range");
  if (!bad.empty()) {
    std::string msg = "resample config:";
    for (const auto& b : bad) msg += " " + b + ";";
    throw Error(ErrorKind::kValidation, msg);
  }
}

nlohmann::json to_json(const ResampleConfig& c) {
  return {{"n", c.n}, {"delta", c.delta}, {"adversary_range", c.adversary_range}};
}

ResampleConfig resample_config_from_json(const nlohmann::json& j) {
  ResampleConfig c;
  c.n = j.value("n", c.n);
  c.delta = j.value("delta", c.delta);
  c.adversary_range = j.value("adversary_range", c.adversary_range);
  c.validate();
  return c;
}

bool TrustRegion::contains(MotionToken t) const {
  return std::any_of(tokens.begin(), tokens.end(), [&](const auto& e) { return e.first == t; });
}

TrustRegion trust_region(std::span<const double> dist, int n) {
  if (dist.size() != static_cast<std::size_t>(kVocabularySize)) {
    throw Error(ErrorKind::kShapeMismatch, "trust_region: distribution must have 3969 entries");
  }
  if (n < 1) throw Error(ErrorKind::kConfiguration, "trust_region: n must be >= 1");
  const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(n), dist.size());
  std::vector<int> idx(dist.size());
  std::iota(idx.begin(), idx.end(), 0);
  const auto before = [&](int a, int b) { return dist[a] > dist[b] || (dist[a] == dist[b] && a < b); };
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), before);
  TrustRegion r;
  for (std::size_t i = 0; i < k; ++i) r.tokens.emplace_back(MotionToken{idx[i]}, dist[idx[i]]);
  return r;
}

ValueFunction value_function(const FeasibilityModel& model) {
  return [&model](std::span<const RelativeFeatures> s) { return model.values(s); };
}

AgentState predict_constant_velocity(const AgentState& ego, double dt) {
  return step(ego, Control{}, dt);
}

namespace {

CandidateEvaluation predict(MotionToken token, double probability, const AgentState& ego_next,
                            const AgentState& cbv_now, const ResampleConfig& cfg) {
  CandidateEvaluation c;
  c.token = token;
  c.probability = probability;
  c.ego_next = ego_next;
  c.cbv_next = step(cbv_now, token, kPlanDt);
  c.joint_next = relative_features(c.ego_next, c.cbv_next);
  c.distance =
      std::min(min_distance(box_of(c.ego_next), box_of(c.cbv_next)), cfg.adversary_range);
  return c;
}

void score(CandidateEvaluation& c, double value, const ResampleConfig& cfg) {
  c.value = value;
  c.feasible = value <= 0.0;
  c.loss = c.feasible ? c.distance : value + cfg.delta;
}

}  // namespace

CandidateEvaluation adversarial_loss(MotionToken token, const AgentState& ego_now,
                                     const AgentState& cbv_now, const ValueFunction& v_h,
                                     const ResampleConfig& cfg) {
  CandidateEvaluation c = predict(token, 0.0, predict_constant_velocity(ego_now), cbv_now, cfg);
  score(c, v_h({&c.joint_next, 1}).at(0), cfg);
  return c;
}

std::vector<CandidateEvaluation> evaluate_candidates(const TrustRegion& region,
                                                     const AgentState& ego_now,
                                                     const AgentState& cbv_now,
                                                     const ValueFunction& v_h,
                                                     const ResampleConfig& cfg) {
  const AgentState ego_next = predict_constant_velocity(ego_now);
  std::vector<CandidateEvaluation> out;
  std::vector<RelativeFeatures> joint;
  for (const auto& [token, p] : region.tokens) {
    out.push_back(predict(token, p, ego_next, cbv_now, cfg));
    joint.push_back(out.back().joint_next);
  }
  const std::vector<double> values = v_h(joint);
  if (values.size() != out.size()) {
    throw Error(ErrorKind::kShapeMismatch, "value function returned a wrong count");
  }
  for (std::size_t i = 0; i < out.size(); ++i) score(out[i], values[i], cfg);
  return out;
}

std::size_t select_candidate(std::span<const CandidateEvaluation> candidates, LossMode mode) {
  if (candidates.empty()) throw Error(ErrorKind::kConfiguration, "no candidates to select");
  std::size_t best = 0;
  auto loss = [&](const CandidateEvaluation& c) {
    return mode == LossMode::kDistanceOnly ? c.distance : c.loss;
  };
  for (std::size_t i = 1; i < candidates.size(); ++i) {
    const double a = loss(candidates[i]);
    const double b = loss(candidates[best]);
    if (a < b || (a == b && candidates[i].token.index < candidates[best].token.index)) best = i;
  }
  return best;
}

MotionToken select_cbv_token(std::span<const double> dist, const AgentState& ego_now,
                             const AgentState& cbv_now, const ValueFunction& v_h,
                             const ResampleConfig& cfg, LossMode mode) {
  const TrustRegion region = trust_region(dist, cfg.n);
  const auto candidates = evaluate_candidates(region, ego_now, cbv_now, v_h, cfg);
  return candidates[select_candidate(candidates, mode)].token;
}

}  // namespace sgen
