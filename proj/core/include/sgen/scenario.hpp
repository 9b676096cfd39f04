#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "sgen/kinematics.hpp"

namespace sgen {

inline constexpr const char* kScenarioVersion = "1";
inline constexpr double kAgentRadius = 50.0;     // m
inline constexpr double kMapRadius = 30.0;       // m
inline constexpr double kMapResampleSpacing = 2.0;  // m

enum class PolylineKind { kLaneCenter, kRoadEdge, kCrosswalk };

const char* to_string(PolylineKind kind);
PolylineKind polyline_kind_from_string(const std::string& s);

struct MapPolyline {
  PolylineKind kind = PolylineKind::kLaneCenter;
  std::vector<Vec2> points;
};

using Track = std::vector<AgentState>;

struct Scenario {
  std::vector<MapPolyline> map;
  std::vector<Track> agents;  // one state per kSimDt step
  int ego_index = 0;
  int cbv_index = 1;
  double dt = kSimDt;

  int duration_steps() const {
    return agents.empty() ? 0 : static_cast<int>(agents.front().size());
  }
  int agent_count() const { return static_cast<int>(agents.size()); }
  /// States of every agent at a step.
  std::vector<AgentState> states_at(int step) const;
};

bool structurally_equal(const Scenario& a, const Scenario& b);

enum class ArchetypeKind { kParallelDriving, kUnprotectedIntersection, kPullOut, kTurning };

const char* to_string(ArchetypeKind kind);
ArchetypeKind archetype_from_string(const std::string& s);
inline constexpr ArchetypeKind kAllArchetypes[] = {
    ArchetypeKind::kParallelDriving, ArchetypeKind::kUnprotectedIntersection,
    ArchetypeKind::kPullOut, ArchetypeKind::kTurning};

struct ScenarioArchetype {
  ArchetypeKind kind = ArchetypeKind::kParallelDriving;
  std::uint64_t seed = 1;
  double min_speed = 8.0;   // m/s, ego and moving CBV initial speed range
  double max_speed = 12.0;
  double duration = 10.0;   // s of logged data
  int min_background = 2;
  int max_background = 6;
  double accel_noise = 0.3;     // m/s^2, scripted driver noise (std dev)
  double yaw_rate_noise = 0.03; // rad/s
};

/// Scripted traffic for one archetype: map plus logged tracks that lie exactly on
/// the token grid (controls are snapped and held for one planning period).
/// Deterministic in the archetype seed.
Scenario synthesize(const ScenarioArchetype& archetype);

struct Violation {
  int agent = -1;
  int step = -1;  // index of the first state of the offending pair; 0 for overlaps
  std::string message;
};

/// Empty iff every consecutive state pair is reproduced by some token under step()
/// within 0.05 m / 0.02 rad, and no two boxes overlap at t = 0.
std::vector<Violation> check_consistency(const Scenario& s);

/// Token that best reproduces `next` from `prev` over dt (searches bins around the
/// finite-difference estimate, including the clamp extremes).
MotionToken recover_token(const AgentState& prev, const AgentState& next, double dt);
/// Position/heading error of reproducing `next` from `prev` with `token`.
struct TransitionError {
  double position = 0.0;
  double heading = 0.0;
};
TransitionError transition_error(const AgentState& prev, const AgentState& next,
                                 MotionToken token, double dt);

nlohmann::json to_json(const Scenario& s);
/// Validates and converts; throws Error with kMalformedFile, kUnsupportedVersion or
/// kValidation.
Scenario scenario_from_json(const nlohmann::json& j);
void save(const Scenario& s, const std::filesystem::path& path);
Scenario load(const std::filesystem::path& path);
std::string dump_scenario(const Scenario& s);

/// Map segment of the resampled map.
struct MapSegment {
  Vec2 a;
  Vec2 b;
  PolylineKind kind = PolylineKind::kLaneCenter;
  int polyline = -1;
  int index = -1;

  Vec2 midpoint() const { return {0.5 * (a.x + b.x), 0.5 * (a.y + b.y)}; }
  double heading() const;
  double length() const;
};

/// Resamples a polyline to (at most) `spacing` metre steps, keeping end points.
std::vector<Vec2> resample_polyline(std::span<const Vec2> points, double spacing);
std::vector<MapSegment> map_segments(std::span<const MapPolyline> map,
                                     double spacing = kMapResampleSpacing);

struct Neighborhood {
  std::vector<int> agents;    // indices, ascending, never the query agent
  std::vector<int> segments;  // indices into the segment list, ascending
};

Neighborhood neighborhoods(std::span<const AgentState> states, int agent,
                           std::span<const MapSegment> segments,
                           double agent_radius = kAgentRadius, double map_radius = kMapRadius);
Neighborhood neighborhoods(const Scenario& s, int step, int agent);

}  // namespace sgen
