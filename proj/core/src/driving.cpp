#include "sgen/driving.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace sgen {

Path::Path(std::vector<Vec2> points) {
  for (const Vec2& p : points) {
    if (!points_.empty() && std::hypot(p.x - points_.back().x, p.y - points_.back().y) < 1e-9) {
      continue;
    }
    points_.push_back(p);
  }
  cumulative_.assign(points_.size(), 0.0);
  for (std::size_t k = 1; k < points_.size(); ++k) {
    cumulative_[k] = cumulative_[k - 1] + std::hypot(points_[k].x - points_[k - 1].x,
                                                     points_[k].y - points_[k - 1].y);
  }
}

Path::Projection Path::project(Vec2 p) const {
  Projection best;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k + 1 < points_.size(); ++k) {
    const Vec2 a = points_[k];
    const Vec2 b = points_[k + 1];
    const double ex = b.x - a.x, ey = b.y - a.y;
    const double len2 = ex * ex + ey * ey;
    double t = ((p.x - a.x) * ex + (p.y - a.y) * ey) / len2;
    // Allow extrapolation past the path ends.
    if (k > 0) t = std::max(t, 0.0);
    if (k + 2 < points_.size()) t = std::min(t, 1.0);
    const double cx = a.x + t * ex, cy = a.y + t * ey;
    const double d2 = (p.x - cx) * (p.x - cx) + (p.y - cy) * (p.y - cy);
    if (d2 < best_d2) {
      best_d2 = d2;
      const double len = std::sqrt(len2);
      best.s = cumulative_[k] + t * len;
      best.lateral = (ex * (p.y - a.y) - ey * (p.x - a.x)) / len;
    }
  }
  return best;
}

std::size_t Path::segment_of(double s) const {
  const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), s);
  std::size_t k = it == cumulative_.begin() ? 0 : static_cast<std::size_t>(it - cumulative_.begin()) - 1;
  return std::min(k, points_.size() - 2);
}

Vec2 Path::point_at(double s) const {
  const std::size_t k = segment_of(s);
  const Vec2 a = points_[k];
  const Vec2 b = points_[k + 1];
  const double len = cumulative_[k + 1] - cumulative_[k];
  const double t = (s - cumulative_[k]) / len;
  return {a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)};
}

double Path::heading_at(double s) const {
  const std::size_t k = segment_of(s);
  return std::atan2(points_[k + 1].y - points_[k].y, points_[k + 1].x - points_[k].x);
}

Path path_from_track(std::span<const AgentState> track) {
  std::vector<Vec2> pts;
  for (const AgentState& s : track) pts.push_back({s.x, s.y});
  Path path(std::move(pts));
  if (path.empty() && !track.empty()) {
    // Stationary log: extend along the heading so the path is usable.
    const AgentState& s = track.front();
    path = Path({{s.x, s.y}, {s.x + std::cos(s.theta), s.y + std::sin(s.theta)}});
  }
  return path;
}

double pure_pursuit_yaw_rate(const AgentState& state, const Path& path, double lookahead) {
  const auto proj = path.project({state.x, state.y});
  const Vec2 target = path.point_at(proj.s + lookahead);
  const double dx = target.x - state.x, dy = target.y - state.y;
  const double alpha = wrap_angle(std::atan2(dy, dx) - state.theta);
  const double dist = std::max(std::hypot(dx, dy), 1e-3);
  const double curvature = 2.0 * std::sin(alpha) / dist;
  return curvature * std::max(state.v, 1.0);
}

double idm_accel(double v, double gap, double leader_v, const IdmParams& p) {
  const double v0 = std::max(p.desired_speed, 0.1);
  double a = p.max_accel * (1.0 - std::pow(v / v0, 4));
  if (gap > 0.0 && std::isfinite(gap)) {
    const double dv = v - leader_v;
    const double s_star = p.min_gap + std::max(0.0, v * p.time_headway +
                                                        v * dv / (2.0 * std::sqrt(p.max_accel * p.comfortable_decel)));
    a -= p.max_accel * (s_star / std::max(gap, 0.1)) * (s_star / std::max(gap, 0.1));
  }
  return a;
}

}  // namespace sgen
