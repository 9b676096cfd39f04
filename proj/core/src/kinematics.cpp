#include "sgen/kinematics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "sgen/error.hpp"

namespace sgen {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidToken: return "invalid-token";
    case ErrorKind::kShapeMismatch: return "shape-mismatch";
    case ErrorKind::kMalformedFile: return "malformed-file";
    case ErrorKind::kUnsupportedVersion: return "unsupported-version";
    case ErrorKind::kValidation: return "validation";
    case ErrorKind::kConfiguration: return "configuration";
    case ErrorKind::kMissingArtifact: return "missing-artifact";
    case ErrorKind::kNonFinite: return "non-finite";
    case ErrorKind::kUndefinedMetric: return "undefined-metric";
    case ErrorKind::kEmptyDataset: return "empty-dataset";
  }
  return "unknown";
}

double wrap_angle(double theta) {
  double wrapped = std::remainder(theta, 2.0 * kPi);  // [-pi, pi]
  if (wrapped <= -kPi) wrapped += 2.0 * kPi;
  return wrapped;
}

namespace {

std::array<double, kBinsPerAxis> make_bins(double half_range) {
  std::array<double, kBinsPerAxis> bins{};
  const double width = 2.0 * half_range / kBinsPerAxis;
  for (int k = 0; k < kBinsPerAxis; ++k) {
    bins[k] = -half_range + (k + 0.5) * width;
  }
  // The grid is odd-sized; pin the middle center to an exact zero.
  bins[kBinsPerAxis / 2] = 0.0;
  return bins;
}

int bin_index(double value, double half_range) {
  const double width = 2.0 * half_range / kBinsPerAxis;
  const double clamped = std::clamp(value, -half_range, half_range);
  const int k = static_cast<int>(std::floor((clamped + half_range) / width));
  return std::clamp(k, 0, kBinsPerAxis - 1);
}

}  // namespace

const std::array<double, kBinsPerAxis>& TokenVocabulary::accel_bins() {
  static const auto bins = make_bins(kAccelMax);
  return bins;
}

const std::array<double, kBinsPerAxis>& TokenVocabulary::yaw_bins() {
  static const auto bins = make_bins(kYawRateMax);
  return bins;
}

MotionToken tokenize(double accel, double yaw_rate) {
  if (std::isnan(accel)) accel = 0.0;
  if (std::isnan(yaw_rate)) yaw_rate = 0.0;
  return MotionToken::from_bins(bin_index(accel, kAccelMax),
                                bin_index(yaw_rate, kYawRateMax));
}

Control detokenize(MotionToken token) {
  if (token.index < 0 || token.index >= kVocabularySize) {
    throw Error(ErrorKind::kInvalidToken,
                "token index " + std::to_string(token.index) + " outside [0, " +
                    std::to_string(kVocabularySize - 1) + "]");
  }
  return Control{TokenVocabulary::accel_bins()[token.accel_bin()],
                 TokenVocabulary::yaw_bins()[token.yaw_bin()]};
}

AgentState substep(const AgentState& state, Control control, double dt) {
  AgentState next = state;
  next.v = std::clamp(state.v + control.accel * dt, 0.0, kMaxSpeed);
  next.theta = wrap_angle(state.theta + control.yaw_rate * dt);
  next.x = state.x + next.v * std::cos(next.theta) * dt;
  next.y = state.y + next.v * std::sin(next.theta) * dt;
  return next;
}

AgentState step(const AgentState& state, Control control, double dt_plan) {
  constexpr double kEps = 1e-9;
  const int full = static_cast<int>(std::floor(dt_plan / kSimDt + kEps));
  AgentState s = state;
  for (int i = 0; i < full; ++i) s = substep(s, control, kSimDt);
  const double rest = dt_plan - full * kSimDt;
  if (rest > kEps) s = substep(s, control, rest);
  return s;
}

AgentState step(const AgentState& state, MotionToken token, double dt_plan) {
  return step(state, detokenize(token), dt_plan);
}

std::array<Vec2, 4> OrientedBox::corners() const {
  const double c = std::cos(heading);
  const double s = std::sin(heading);
  const Vec2 ex{c * half_length, s * half_length};
  const Vec2 ey{-s * half_width, c * half_width};
  return {Vec2{center.x + ex.x + ey.x, center.y + ex.y + ey.y},
          Vec2{center.x - ex.x + ey.x, center.y - ex.y + ey.y},
          Vec2{center.x - ex.x - ey.x, center.y - ex.y - ey.y},
          Vec2{center.x + ex.x - ey.x, center.y + ex.y - ey.y}};
}

OrientedBox box_of(const AgentState& state) {
  return OrientedBox{{state.x, state.y}, state.theta, 0.5 * state.length,
                     0.5 * state.width};
}

namespace {

double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }

bool separated_on(Vec2 axis, const std::array<Vec2, 4>& pa,
                  const std::array<Vec2, 4>& pb) {
  double min_a = std::numeric_limits<double>::infinity();
  double max_a = -min_a;
  double min_b = min_a;
  double max_b = -min_a;
  for (const Vec2& p : pa) {
    const double d = dot(axis, p);
    min_a = std::min(min_a, d);
    max_a = std::max(max_a, d);
  }
  for (const Vec2& p : pb) {
    const double d = dot(axis, p);
    min_b = std::min(min_b, d);
    max_b = std::max(max_b, d);
  }
  return max_a < min_b || max_b < min_a;
}

}  // namespace

bool collides(const OrientedBox& a, const OrientedBox& b) {
  const auto pa = a.corners();
  const auto pb = b.corners();
  const Vec2 axes[4] = {{std::cos(a.heading), std::sin(a.heading)},
                        {-std::sin(a.heading), std::cos(a.heading)},
                        {std::cos(b.heading), std::sin(b.heading)},
                        {-std::sin(b.heading), std::cos(b.heading)}};
  for (const Vec2& axis : axes) {
    if (separated_on(axis, pa, pb)) return false;
  }
  return true;
}

double point_segment_distance(Vec2 p, Vec2 a, Vec2 b) {
  const Vec2 ab{b.x - a.x, b.y - a.y};
  const Vec2 ap{p.x - a.x, p.y - a.y};
  const double len2 = dot(ab, ab);
  double t = len2 > 0.0 ? dot(ap, ab) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = ap.x - t * ab.x;
  const double dy = ap.y - t * ab.y;
  return std::hypot(dx, dy);
}

double min_distance(const OrientedBox& a, const OrientedBox& b) {
  if (collides(a, b)) return 0.0;
  const auto pa = a.corners();
  const auto pb = b.corners();
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      best = std::min(best, point_segment_distance(pa[i], pb[j], pb[(j + 1) % 4]));
      best = std::min(best, point_segment_distance(pb[i], pa[j], pa[(j + 1) % 4]));
    }
  }
  return best;
}

}  // namespace sgen
