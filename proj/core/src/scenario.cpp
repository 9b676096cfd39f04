#include "sgen/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "sgen/checkpoint.hpp"
#include "sgen/error.hpp"

namespace sgen {

const char* to_string(PolylineKind kind) {
  switch (kind) {
    case PolylineKind::kLaneCenter: return "lane_center";
    case PolylineKind::kRoadEdge: return "road_edge";
    case PolylineKind::kCrosswalk: return "crosswalk";
  }
  return "lane_center";
}

PolylineKind polyline_kind_from_string(const std::string& s) {
  if (s == "lane_center") return PolylineKind::kLaneCenter;
  if (s == "road_edge") return PolylineKind::kRoadEdge;
  if (s == "crosswalk") return PolylineKind::kCrosswalk;
  throw Error(ErrorKind::kValidation, "unknown polyline kind '" + s + "'");
}

const char* to_string(ArchetypeKind kind) {
  switch (kind) {
    case ArchetypeKind::kParallelDriving: return "parallel_driving";
    case ArchetypeKind::kUnprotectedIntersection: return "unprotected_intersection";
    case ArchetypeKind::kPullOut: return "pull_out";
    case ArchetypeKind::kTurning: return "turning";
  }
  return "parallel_driving";
}

ArchetypeKind archetype_from_string(const std::string& s) {
  for (ArchetypeKind k : kAllArchetypes) {
    if (s == to_string(k)) return k;
  }
  throw Error(ErrorKind::kValidation, "unknown archetype '" + s + "'");
}

std::vector<AgentState> Scenario::states_at(int step) const {
  std::vector<AgentState> out;
  out.reserve(agents.size());
  for (const Track& tr : agents) out.push_back(tr.at(static_cast<std::size_t>(step)));
  return out;
}

bool structurally_equal(const Scenario& a, const Scenario& b) {
  if (a.ego_index != b.ego_index || a.cbv_index != b.cbv_index || a.dt != b.dt ||
      a.map.size() != b.map.size() || a.agents != b.agents) {
    return false;
  }
  for (std::size_t i = 0; i < a.map.size(); ++i) {
    if (a.map[i].kind != b.map[i].kind || a.map[i].points.size() != b.map[i].points.size()) {
      return false;
    }
    for (std::size_t k = 0; k < a.map[i].points.size(); ++k) {
      if (a.map[i].points[k].x != b.map[i].points[k].x ||
          a.map[i].points[k].y != b.map[i].points[k].y) {
        return false;
      }
    }
  }
  return true;
}

// ---------------------------------------------------------------- consistency

TransitionError transition_error(const AgentState& prev, const AgentState& next,
                                 MotionToken token, double dt) {
  const AgentState pred = step(prev, token, dt);
  return {std::hypot(pred.x - next.x, pred.y - next.y),
          std::abs(wrap_angle(pred.theta - next.theta))};
}

MotionToken recover_token(const AgentState& prev, const AgentState& next, double dt) {
  const double a_est = (next.v - prev.v) / dt;
  const double psi_est = wrap_angle(next.theta - prev.theta) / dt;
  const MotionToken guess = tokenize(a_est, psi_est);
  std::vector<int> accel_bins;
  for (int d = -1; d <= 1; ++d) accel_bins.push_back(guess.accel_bin() + d);
  if (next.v <= 0.0 || next.v >= kMaxSpeed) {
    // Speed clamp hides the true acceleration; allow every bin in the clamp direction.
    for (int k = 0; k < kBinsPerAxis; ++k) accel_bins.push_back(k);
  }
  MotionToken best = guess;
  double best_err = std::numeric_limits<double>::infinity();
  for (int ab : accel_bins) {
    if (ab < 0 || ab >= kBinsPerAxis) continue;
    for (int dy = -1; dy <= 1; ++dy) {
      const int yb = guess.yaw_bin() + dy;
      if (yb < 0 || yb >= kBinsPerAxis) continue;
      const MotionToken cand = MotionToken::from_bins(ab, yb);
      const TransitionError e = transition_error(prev, next, cand, dt);
      const double score = e.position + e.heading + std::abs(step(prev, cand, dt).v - next.v);
      // Ties (speed held at a clamp) go to the bin nearest the finite-difference estimate.
      const int off = std::abs(ab - guess.accel_bin());
      const int best_off = std::abs(best.accel_bin() - guess.accel_bin());
      if (score < best_err ||
          (score == best_err && (off < best_off || (off == best_off && cand.index < best.index)))) {
        best_err = score;
        best = cand;
      }
    }
  }
  return best;
}

std::vector<Violation> check_consistency(const Scenario& s) {
  constexpr double kPosTol = 0.05;
  constexpr double kHeadingTol = 0.02;
  std::vector<Violation> out;
  for (int i = 0; i < s.agent_count(); ++i) {
    const Track& tr = s.agents[static_cast<std::size_t>(i)];
    for (std::size_t k = 0; k + 1 < tr.size(); ++k) {
      const MotionToken tok = recover_token(tr[k], tr[k + 1], s.dt);
      const TransitionError e = transition_error(tr[k], tr[k + 1], tok, s.dt);
      if (e.position > kPosTol || e.heading > kHeadingTol) {
        std::ostringstream msg;
        msg << "agent " << i << " step " << k << ": transition not reachable by any token"
            << " (position error " << e.position << " m, heading error " << e.heading
            << " rad)";
        out.push_back({i, static_cast<int>(k), msg.str()});
      }
    }
  }
  for (int i = 0; i < s.agent_count(); ++i) {
    for (int j = i + 1; j < s.agent_count(); ++j) {
      if (s.agents[i].empty() || s.agents[j].empty()) continue;
      if (collides(box_of(s.agents[i][0]), box_of(s.agents[j][0]))) {
        out.push_back({i, 0,
                       "agents " + std::to_string(i) + " and " + std::to_string(j) +
                           " overlap at t=0"});
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------- JSON

nlohmann::json to_json(const Scenario& s) {
  nlohmann::json map = nlohmann::json::array();
  for (const MapPolyline& pl : s.map) {
    nlohmann::json pts = nlohmann::json::array();
    for (const Vec2& p : pl.points) pts.push_back({p.x, p.y});
    map.push_back({{"kind", to_string(pl.kind)}, {"points", pts}});
  }
  nlohmann::json agents = nlohmann::json::array();
  for (const Track& tr : s.agents) {
    nlohmann::json track = nlohmann::json::array();
    for (const AgentState& st : tr) {
      track.push_back({st.x, st.y, st.v, st.theta, st.length, st.width});
    }
    agents.push_back(std::move(track));
  }
  return {{"version", kScenarioVersion}, {"map", map},           {"agents", agents},
          {"ego_index", s.ego_index},    {"cbv_index", s.cbv_index}, {"dt", s.dt}};
}

namespace {

[[noreturn]] void invalid(const std::string& what) {
  throw Error(ErrorKind::kValidation, "scenario: " + what);
}

void validate(const Scenario& s) {
  const int n = s.agent_count();
  if (n < 2) invalid("at least two agents (ego and CBV) required");
  if (s.ego_index < 0 || s.ego_index >= n) invalid("ego_index out of range");
  if (s.cbv_index < 0 || s.cbv_index >= n) invalid("cbv_index out of range");
  if (s.ego_index == s.cbv_index) invalid("ego_index equals cbv_index");
  if (std::abs(s.dt - kSimDt) > 1e-12) invalid("dt must be 0.1");
  const std::size_t len = s.agents.front().size();
  if (len == 0) invalid("empty track");
  for (const Track& tr : s.agents) {
    if (tr.size() != len) invalid("tracks have different lengths");
    for (const AgentState& st : tr) {
      if (!(st.length > 0.0) || !(st.width > 0.0)) invalid("non-positive agent extent");
      if (!std::isfinite(st.x) || !std::isfinite(st.y) || !std::isfinite(st.v) ||
          !std::isfinite(st.theta)) {
        invalid("non-finite state");
      }
    }
  }
  for (const MapPolyline& pl : s.map) {
    if (pl.points.size() < 2) invalid("polyline with fewer than two points");
    for (std::size_t k = 0; k + 1 < pl.points.size(); ++k) {
      if (pl.points[k].x == pl.points[k + 1].x && pl.points[k].y == pl.points[k + 1].y) {
        invalid("repeated consecutive polyline point");
      }
    }
  }
}

}  // namespace

Scenario scenario_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(ErrorKind::kMalformedFile, "scenario: not a JSON object");
  if (!j.contains("version") || !j.at("version").is_string()) {
    throw Error(ErrorKind::kMalformedFile, "scenario: missing version string");
  }
  if (j.at("version").get<std::string>() != kScenarioVersion) {
    throw Error(ErrorKind::kUnsupportedVersion,
                "scenario: unsupported version " + j.at("version").get<std::string>());
  }
  Scenario s;
  try {
    for (const auto& pl : j.at("map")) {
      MapPolyline m;
      m.kind = polyline_kind_from_string(pl.at("kind").get<std::string>());
      for (const auto& p : pl.at("points")) {
        if (p.size() != 2) throw Error(ErrorKind::kMalformedFile, "scenario: point arity");
        m.points.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
      }
      s.map.push_back(std::move(m));
    }
    for (const auto& tr : j.at("agents")) {
      Track track;
      for (const auto& st : tr) {
        if (st.size() != 6) throw Error(ErrorKind::kMalformedFile, "scenario: state arity");
        track.push_back({st.at(0).get<double>(), st.at(1).get<double>(),
                         st.at(2).get<double>(), st.at(3).get<double>(),
                         st.at(4).get<double>(), st.at(5).get<double>()});
      }
      s.agents.push_back(std::move(track));
    }
    s.ego_index = j.at("ego_index").get<int>();
    s.cbv_index = j.at("cbv_index").get<int>();
    s.dt = j.at("dt").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kMalformedFile, std::string("scenario: ") + e.what());
  }
  validate(s);
  return s;
}

std::string dump_scenario(const Scenario& s) { return to_json(s).dump(); }

void save(const Scenario& s, const std::filesystem::path& path) {
  write_text_file(path, dump_scenario(s));
}

Scenario load(const std::filesystem::path& path) {
  return scenario_from_json(read_json_file(path));
}

// ---------------------------------------------------------------- map geometry

double MapSegment::heading() const { return std::atan2(b.y - a.y, b.x - a.x); }
double MapSegment::length() const { return std::hypot(b.x - a.x, b.y - a.y); }

std::vector<Vec2> resample_polyline(std::span<const Vec2> points, double spacing) {
  std::vector<Vec2> out;
  if (points.empty()) return out;
  out.push_back(points.front());
  for (std::size_t k = 0; k + 1 < points.size(); ++k) {
    const Vec2 a = points[k];
    const Vec2 b = points[k + 1];
    const double len = std::hypot(b.x - a.x, b.y - a.y);
    if (len <= 0.0) continue;
    const int pieces = std::max(1, static_cast<int>(std::ceil(len / spacing - 1e-9)));
    for (int i = 1; i <= pieces; ++i) {
      const double t = static_cast<double>(i) / pieces;
      out.push_back({a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)});
    }
  }
  return out;
}

std::vector<MapSegment> map_segments(std::span<const MapPolyline> map, double spacing) {
  std::vector<MapSegment> out;
  for (std::size_t p = 0; p < map.size(); ++p) {
    const auto pts = resample_polyline(map[p].points, spacing);
    for (std::size_t k = 0; k + 1 < pts.size(); ++k) {
      out.push_back({pts[k], pts[k + 1], map[p].kind, static_cast<int>(p), static_cast<int>(k)});
    }
  }
  return out;
}

Neighborhood neighborhoods(std::span<const AgentState> states, int agent,
                           std::span<const MapSegment> segments, double agent_radius,
                           double map_radius) {
  Neighborhood n;
  const AgentState& q = states[static_cast<std::size_t>(agent)];
  for (int j = 0; j < static_cast<int>(states.size()); ++j) {
    if (j == agent) continue;
    if (std::hypot(states[j].x - q.x, states[j].y - q.y) <= agent_radius) {
      n.agents.push_back(j);
    }
  }
  for (int k = 0; k < static_cast<int>(segments.size()); ++k) {
    const MapSegment& seg = segments[k];
    if (point_segment_distance({q.x, q.y}, seg.a, seg.b) <= map_radius) n.segments.push_back(k);
  }
  return n;
}

Neighborhood neighborhoods(const Scenario& s, int step, int agent) {
  const auto states = s.states_at(step);
  const auto segs = map_segments(s.map);
  return neighborhoods(states, agent, segs);
}

}  // namespace sgen
