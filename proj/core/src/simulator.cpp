#include "sgen/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "sgen/error.hpp"

namespace sgen {

namespace {

template <typename E, std::size_t N>
E enum_from_string(const std::string& s, const std::pair<E, const char*> (&table)[N],
                   const char* what) {
  for (const auto& [e, name] : table) {
    if (s == name) return e;
  }
  throw Error(ErrorKind::kConfiguration, std::string("unknown ") + what + ": " + s);
}

constexpr std::pair<EgoKind, const char*> kEgoKinds[] = {{EgoKind::kLogReplay, "log_replay"},
                                                         {EgoKind::kReactive, "reactive"}};
constexpr std::pair<CbvMode, const char*> kCbvModes[] = {{CbvMode::kPrior, "prior"},
                                                         {CbvMode::kSafer, "safer"},
                                                         {CbvMode::kSaferNoLfr, "safer_no_lfr"},
                                                         {CbvMode::kLogReplay, "log_replay"}};
constexpr std::pair<BackgroundMode, const char*> kBackgroundModes[] = {
    {BackgroundMode::kPrior, "prior"}, {BackgroundMode::kLogReplay, "log_replay"}};

template <typename E, std::size_t N>
const char* enum_name(E e, const std::pair<E, const char*> (&table)[N]) {
  for (const auto& [k, name] : table) {
    if (k == e) return name;
  }
  return "?";
}

}  // namespace

const char* to_string(EgoKind k) { return enum_name(k, kEgoKinds); }
const char* to_string(CbvMode m) { return enum_name(m, kCbvModes); }
const char* to_string(BackgroundMode m) { return enum_name(m, kBackgroundModes); }
EgoKind ego_kind_from_string(const std::string& s) {
  return enum_from_string(s, kEgoKinds, "ego policy");
}
CbvMode cbv_mode_from_string(const std::string& s) {
  return enum_from_string(s, kCbvModes, "cbv mode");
}
BackgroundMode background_mode_from_string(const std::string& s) {
  return enum_from_string(s, kBackgroundModes, "background mode");
}

// ---------------------------------------------------------------- config

int RolloutConfig::planning_steps() const {
  return static_cast<int>(std::lround(horizon / kPlanDt));
}

void RolloutConfig::validate() const {
  std::vector<std::string> bad;
  if (!(horizon > 0.0) || std::abs(horizon / kPlanDt - planning_steps()) > 1e-9) {
    bad.push_back("horizon must be a positive multiple of 0.5 s");
  }
  if (!bad.empty()) {
    std::string msg = "rollout config:";
    for (const auto& b : bad) msg += " " + b + ";";
    throw Error(ErrorKind::kValidation, msg);
  }
  resample.validate();
  feasibility.validate();
}

nlohmann::json to_json(const RolloutConfig& c) {
  return {{"horizon", c.horizon},
          {"seed", c.seed},
          {"cbv_mode", to_string(c.cbv_mode)},
          {"background", to_string(c.background)},
          {"resample", to_json(c.resample)},
          {"feasibility", to_json(c.feasibility)}};
}

RolloutConfig rollout_config_from_json(const nlohmann::json& j) {
  RolloutConfig c;
  c.horizon = j.value("horizon", c.horizon);
  c.seed = j.value("seed", c.seed);
  if (j.contains("cbv_mode")) c.cbv_mode = cbv_mode_from_string(j.at("cbv_mode").get<std::string>());
  if (j.contains("background")) {
    c.background = background_mode_from_string(j.at("background").get<std::string>());
  }
  if (j.contains("resample")) c.resample = resample_config_from_json(j.at("resample"));
  if (j.contains("feasibility")) c.feasibility = feasibility_config_from_json(j.at("feasibility"));
  c.validate();
  return c;
}

nlohmann::json to_json(const CollectConfig& c) {
  return {{"episodes", c.episodes},
          {"adversarial_period", c.adversarial_period},
          {"log_replay_period", c.log_replay_period},
          {"cautious_period", c.cautious_period},
          {"rollout", to_json(c.rollout)}};
}

CollectConfig collect_config_from_json(const nlohmann::json& j) {
  CollectConfig c;
  c.episodes = j.value("episodes", c.episodes);
  c.adversarial_period = j.value("adversarial_period", c.adversarial_period);
  c.log_replay_period = j.value("log_replay_period", c.log_replay_period);
  c.cautious_period = j.value("cautious_period", c.cautious_period);
  if (j.contains("rollout")) c.rollout = rollout_config_from_json(j.at("rollout"));
  if (c.episodes < 1 || c.adversarial_period < 1 || c.log_replay_period < 0 ||
      c.cautious_period < 0) {
    throw Error(ErrorKind::kValidation,
                "collect config: episodes and adversarial_period must be >= 1, "
                "log_replay_period and cautious_period >= 0");
  }
  return c;
}

// ---------------------------------------------------------------- episode JSON

namespace {

nlohmann::json state_json(const AgentState& s) {
  return {s.x, s.y, s.v, s.theta, s.length, s.width};
}

AgentState state_from_json(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 6) throw Error(ErrorKind::kMalformedFile, "episode: state needs 6 values");
  return {v[0], v[1], v[2], v[3], v[4], v[5]};
}

}  // namespace

nlohmann::json to_json(const EpisodeResult& r) {
  nlohmann::json tracks = nlohmann::json::array();
  for (const Track& tr : r.trajectories) {
    nlohmann::json t = nlohmann::json::array();
    for (const AgentState& s : tr) t.push_back(state_json(s));
    tracks.push_back(std::move(t));
  }
  nlohmann::json ego = nlohmann::json::array();
  for (const MotionToken& t : r.ego_tokens) ego.push_back(t.index);
  nlohmann::json cbv = nlohmann::json::array();
  for (const CbvDecision& d : r.cbv_decisions) {
    cbv.push_back({{"token", d.token.index},
                   {"probability", d.probability},
                   {"rank", d.rank},
                   {"resampled", d.resampled}});
  }
  return {{"trajectories", tracks},
          {"ego_index", r.ego_index},
          {"cbv_index", r.cbv_index},
          {"collision", r.collision},
          {"collision_time", r.collision_time ? nlohmann::json(*r.collision_time) : nlohmann::json()},
          {"collided_with", r.collided_with},
          {"ego_tokens", ego},
          {"cbv_decisions", cbv}};
}

EpisodeResult episode_from_json(const nlohmann::json& j) {
  try {
    EpisodeResult r;
    for (const auto& t : j.at("trajectories")) {
      Track tr;
      for (const auto& s : t) tr.push_back(state_from_json(s));
      r.trajectories.push_back(std::move(tr));
    }
    r.ego_index = j.at("ego_index").get<int>();
    r.cbv_index = j.at("cbv_index").get<int>();
    r.collision = j.at("collision").get<bool>();
    if (!j.at("collision_time").is_null()) r.collision_time = j.at("collision_time").get<double>();
    r.collided_with = j.at("collided_with").get<int>();
    for (const auto& t : j.at("ego_tokens")) r.ego_tokens.push_back(MotionToken{t.get<int>()});
    for (const auto& d : j.at("cbv_decisions")) {
      r.cbv_decisions.push_back({MotionToken{d.at("token").get<int>()},
                                 d.at("probability").get<double>(), d.at("rank").get<int>(),
                                 d.at("resampled").get<bool>()});
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kMalformedFile, std::string("episode: ") + e.what());
  }
}

// ---------------------------------------------------------------- reactive ego

MotionToken reactive_ego_step(const EgoObservation& obs, const EgoPolicy& policy) {
  const AgentState& me = obs.ego;
  double yaw = 0.0;
  double gap = -1.0, leader_v = 0.0;
  if (!obs.path.empty()) {
    yaw = pure_pursuit_yaw_rate(me, obs.path, std::max(policy.min_lookahead, 0.8 * me.v));
    const auto proj = obs.path.project({me.x, me.y});
    for (const AgentState& o : obs.others) {
      const auto po = obs.path.project({o.x, o.y});
      if (po.s <= proj.s || std::abs(po.lateral) > 2.2) continue;
      const double g = std::max(po.s - proj.s - 0.5 * (me.length + o.length), 0.05);
      if (gap < 0.0 || g < gap) {
        gap = g;
        leader_v = o.v * std::cos(wrap_angle(o.theta - me.theta));
      }
    }
  }
  IdmParams idm;
  idm.desired_speed = std::max(obs.desired_speed, 0.5);
  idm.time_headway = policy.time_headway;
  double accel = idm_accel(me.v, gap, leader_v, idm);

  // Constant-velocity look-ahead over the next second against agents in front.
  const double c = std::cos(me.theta), s = std::sin(me.theta);
  const AgentState ego_cv{me.x, me.y, me.v, me.theta, me.length, me.width};
  for (const AgentState& o : obs.others) {
    if ((o.x - me.x) * c + (o.y - me.y) * s <= 0.0) continue;
    AgentState e = ego_cv, p = o;
    bool close = min_distance(box_of(e), box_of(p)) < obs.d_th + policy.emergency_margin;
    for (int k = 0; k < 2 * kSubstepsPerPlan && !close; ++k) {
      e = substep(e, Control{}, kSimDt);
      p = substep(p, Control{}, kSimDt);
      close = min_distance(box_of(e), box_of(p)) < obs.d_th + policy.emergency_margin;
    }
    if (close) {
      accel = -policy.max_brake;
      break;
    }
  }
  return tokenize(accel, yaw);
}

// ---------------------------------------------------------------- rollout

namespace {

enum class Role { kLog, kPrior, kReactiveEgo, kResampledCbv };

int rank_of(std::span<const double> dist, int token) {
  int rank = 0;
  const double p = dist[static_cast<std::size_t>(token)];
  for (int k = 0; k < kVocabularySize; ++k) {
    const double q = dist[static_cast<std::size_t>(k)];
    if (q > p || (q == p && k < token)) ++rank;
  }
  return rank;
}

}  // namespace

EpisodeResult run_episode(const Scenario& sc, const EgoPolicy& ego_policy,
                          const RolloutConfig& cfg, const Models& models) {
  cfg.validate();
  const int n = sc.agent_count();
  const int ego = sc.ego_index, cbv = sc.cbv_index;
  if (n < 2 || ego < 0 || ego >= n || cbv < 0 || cbv >= n || ego == cbv ||
      sc.duration_steps() < 1) {
    throw Error(ErrorKind::kValidation, "run_episode: scenario needs distinct ego and CBV tracks");
  }
  // The horizon is truncated to the logged duration, which log replay and the reactive
  // ego's path and speed reference rely on.
  const int log_steps = (sc.duration_steps() - 1) / kSubstepsPerPlan;
  const int steps = std::min(cfg.planning_steps(), log_steps);

  std::vector<Role> roles(static_cast<std::size_t>(n),
                          cfg.background == BackgroundMode::kPrior ? Role::kPrior : Role::kLog);
  roles[ego] = ego_policy.kind == EgoKind::kReactive ? Role::kReactiveEgo : Role::kLog;
  switch (cfg.cbv_mode) {
    case CbvMode::kPrior: roles[cbv] = Role::kPrior; break;
    case CbvMode::kLogReplay: roles[cbv] = Role::kLog; break;
    case CbvMode::kSafer:
    case CbvMode::kSaferNoLfr: roles[cbv] = Role::kResampledCbv; break;
  }
  const bool needs_prior = std::any_of(roles.begin(), roles.end(), [](Role r) {
    return r == Role::kPrior || r == Role::kResampledCbv;
  });
  if (needs_prior && models.prior == nullptr) {
    throw Error(ErrorKind::kConfiguration, "run_episode: this mode needs a prior model");
  }
  if (cfg.cbv_mode == CbvMode::kSafer && models.feasibility == nullptr) {
    throw Error(ErrorKind::kConfiguration, "run_episode: safer mode needs a feasibility model");
  }
  const ValueFunction v_h =
      cfg.cbv_mode == CbvMode::kSafer
          ? value_function(*models.feasibility)
          : ValueFunction([](std::span<const RelativeFeatures> s) {
              return std::vector<double>(s.size(), 0.0);
            });
  const LossMode loss_mode =
      cfg.cbv_mode == CbvMode::kSafer ? LossMode::kFeasibilityGuided : LossMode::kDistanceOnly;

  std::mt19937_64 rng(cfg.seed);
  std::vector<AgentState> states = sc.states_at(0);
  std::vector<Control> previous(static_cast<std::size_t>(n));
  EpisodeResult result;
  result.ego_index = ego;
  result.cbv_index = cbv;
  result.trajectories.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    result.trajectories[i].reserve(static_cast<std::size_t>(steps * kSubstepsPerPlan + 1));
    result.trajectories[i].push_back(states[i]);
  }
  const auto check_collision = [&](int t) {
    const OrientedBox eb = box_of(states[ego]);
    for (int j = 0; j < n; ++j) {
      if (j != ego && collides(eb, box_of(states[j]))) {
        result.collision = true;
        result.collision_time = t * kSimDt;
        result.collided_with = j;
        return true;
      }
    }
    return false;
  };
  if (check_collision(0)) return result;

  std::optional<PriorSession> session;
  if (needs_prior) session.emplace(*models.prior, map_segments(sc.map), n);
  const Path ego_path = path_from_track(sc.agents[ego]);

  std::vector<AgentInput> inputs(static_cast<std::size_t>(n));
  std::vector<AgentState> others;
  for (int k = 0; k < steps; ++k) {
    const int t0 = k * kSubstepsPerPlan;
    Tensor2 probs;
    if (session) {
      for (int i = 0; i < n; ++i) inputs[i] = {states[i], previous[i]};
      probs = session->push(inputs);
    }
    std::vector<MotionToken> tokens(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      switch (roles[i]) {
        case Role::kLog:
          tokens[i] = recover_token(sc.agents[i][t0], sc.agents[i][t0 + kSubstepsPerPlan], kPlanDt);
          break;
        case Role::kPrior:
          tokens[i] = sample_token(probs.row_span(i), rng, SampleMode::kCategorical);
          break;
        case Role::kReactiveEgo: {
          others.clear();
          for (int j = 0; j < n; ++j) {
            if (j != ego) others.push_back(states[j]);
          }
          EgoObservation obs{states[ego], others, ego_path, sc.agents[ego][t0].v,
                             cfg.feasibility.d_th};
          tokens[i] = reactive_ego_step(obs, ego_policy);
          break;
        }
        case Role::kResampledCbv: {
          const auto dist = probs.row_span(i);
          const double range = min_distance(box_of(states[ego]), box_of(states[cbv]));
          if (range <= cfg.resample.adversary_range) {
            tokens[i] = select_cbv_token(dist, states[ego], states[cbv], v_h, cfg.resample,
                                         loss_mode);
          } else {
            // Out of range: prior sample restricted to the trust region.
            const TrustRegion region = trust_region(dist, cfg.resample.n);
            std::vector<double> weights;
            for (const auto& [token, p] : region.tokens) weights.push_back(p);
            std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
            tokens[i] = region.tokens[pick(rng)].first;
          }
          break;
        }
      }
    }
    result.ego_tokens.push_back(tokens[ego]);
    CbvDecision decision;
    decision.token = tokens[cbv];
    decision.resampled = roles[cbv] == Role::kResampledCbv &&
                         min_distance(box_of(states[ego]), box_of(states[cbv])) <=
                             cfg.resample.adversary_range;
    if (session) {
      const auto dist = probs.row_span(cbv);
      decision.probability = dist[static_cast<std::size_t>(tokens[cbv].index)];
      decision.rank = rank_of(dist, tokens[cbv].index);
    } else {
      decision.rank = -1;
    }
    result.cbv_decisions.push_back(decision);

    for (int i = 0; i < n; ++i) previous[i] = detokenize(tokens[i]);
    for (int sub = 1; sub <= kSubstepsPerPlan; ++sub) {
      for (int i = 0; i < n; ++i) {
        states[i] = substep(states[i], previous[i], kSimDt);
        result.trajectories[i].push_back(states[i]);
      }
      if (check_collision(t0 + sub)) return result;
    }
  }
  return result;
}

// ---------------------------------------------------------------- offline data

std::vector<TransitionRecord> episode_records(const EpisodeResult& ep,
                                              const FeasibilityConfig& cfg) {
  const Track& e = ep.trajectories.at(static_cast<std::size_t>(ep.ego_index));
  const Track& c = ep.trajectories.at(static_cast<std::size_t>(ep.cbv_index));
  const int last = ep.substeps();
  std::vector<int> at;
  for (int t = 0; t <= last; t += kSubstepsPerPlan) at.push_back(t);
  if (at.back() != last) at.push_back(last);

  std::vector<TransitionRecord> out;
  for (std::size_t m = 0; m + 1 < at.size(); ++m) {
    const int a = at[m], b = at[m + 1];
    TransitionRecord r;
    r.s = relative_features(e[a], c[a]);
    r.a = detokenize(recover_token(e[a], e[b], (b - a) * kSimDt));
    r.s_next = relative_features(e[b], c[b]);
    r.h_s = violation_h(e[a], c[a], cfg);
    out.push_back(r);
  }
  if (ep.collision) {
    TransitionRecord r;
    r.s = r.s_next = relative_features(e[last], c[last]);
    r.h_s = violation_h(e[last], c[last], cfg);
    r.terminal = true;
    out.push_back(r);
  } else if (!out.empty()) {
    out.back().terminal = true;
  }
  return out;
}

std::vector<TransitionRecord> collect_episode(std::span<const Scenario> scenarios,
                                              const CollectConfig& config, const Models& models,
                                              int e) {
  if (scenarios.empty()) throw Error(ErrorKind::kEmptyDataset, "collect: no scenarios");
  RolloutConfig rc = config.rollout;
  rc.seed = config.rollout.seed + static_cast<std::uint64_t>(e);
  rc.cbv_mode = e % config.adversarial_period == config.adversarial_period - 1
                    ? CbvMode::kSaferNoLfr
                    : CbvMode::kPrior;
  EgoPolicy ego;
  const int k = config.log_replay_period;
  ego.kind = k > 0 && e % k == k - 1 ? EgoKind::kLogReplay : EgoKind::kReactive;
  const int c = config.cautious_period;
  if (c > 0 && e % c == c - 1) {
    ego.time_headway = config.cautious_headway;
    ego.emergency_margin = config.cautious_margin;
  }
  const Scenario& sc = scenarios[static_cast<std::size_t>(e) % scenarios.size()];
  return episode_records(run_episode(sc, ego, rc, models), rc.feasibility);
}

std::vector<TransitionRecord> collect_offline_dataset(std::span<const Scenario> scenarios,
                                                      const CollectConfig& config,
                                                      const Models& models) {
  if (scenarios.empty()) throw Error(ErrorKind::kEmptyDataset, "collect: no scenarios");
  std::vector<TransitionRecord> out;
  for (int e = 0; e < config.episodes; ++e) {
    const auto records = collect_episode(scenarios, config, models, e);
    out.insert(out.end(), records.begin(), records.end());
  }
  return out;
}

}  // namespace sgen
