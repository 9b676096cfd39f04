#pragma once

#include <span>
#include <vector>

#include "sgen/kinematics.hpp"

namespace sgen {

// Arc-length parameterized polyline used by scripted drivers and the reactive ego.
class Path {
 public:
  Path() = default;
  explicit Path(std::vector<Vec2> points);

  bool empty() const { return points_.size() < 2; }
  double length() const { return cumulative_.empty() ? 0.0 : cumulative_.back(); }
  const std::vector<Vec2>& points() const { return points_; }

  struct Projection {
    double s = 0.0;        // arc length of the closest point
    double lateral = 0.0;  // signed offset, positive to the left of travel
  };
  Projection project(Vec2 p) const;
  /// Point at arc length s; extrapolates linearly beyond both ends.
  Vec2 point_at(double s) const;
  double heading_at(double s) const;

 private:
  std::size_t segment_of(double s) const;

  std::vector<Vec2> points_;
  std::vector<double> cumulative_;
};

/// Builds a path from the positions of a logged track, dropping repeated points.
Path path_from_track(std::span<const AgentState> track);

/// Pure-pursuit yaw rate toward the path point `lookahead` metres ahead of the
/// projection of the vehicle.
double pure_pursuit_yaw_rate(const AgentState& state, const Path& path, double lookahead);

struct IdmParams {
  double desired_speed = 10.0;
  double max_accel = 1.5;
  double comfortable_decel = 2.0;
  double min_gap = 2.0;
  double time_headway = 1.5;
};

/// Intelligent-driver-model acceleration. gap <= 0 means no leader.
double idm_accel(double v, double gap, double leader_v, const IdmParams& p);

}  // namespace sgen
