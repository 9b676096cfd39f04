#pragma once

#include <array>
#include <cstdint>
#include <utility>

namespace sgen {

inline constexpr int kBinsPerAxis = 63;
inline constexpr int kVocabularySize = kBinsPerAxis * kBinsPerAxis;
inline constexpr double kAccelMax = 5.0;     // m/s^2
inline constexpr double kYawRateMax = 1.5;   // rad/s
inline constexpr double kAccelBinWidth = 2.0 * kAccelMax / kBinsPerAxis;
inline constexpr double kYawBinWidth = 2.0 * kYawRateMax / kBinsPerAxis;
inline constexpr double kSimDt = 0.1;        // s
inline constexpr double kPlanDt = 0.5;       // s, 2 Hz planning
inline constexpr int kSubstepsPerPlan = 5;
inline constexpr double kMaxSpeed = 30.0;    // m/s
inline constexpr double kPi = 3.14159265358979323846;

/// Wraps an angle to (-pi, pi].
double wrap_angle(double theta);

/// A discrete (acceleration, yaw rate) control code. index = i_a * 63 + i_psi.
struct MotionToken {
  int index = kVocabularySize / 2;

  int accel_bin() const { return index / kBinsPerAxis; }
  int yaw_bin() const { return index % kBinsPerAxis; }
  static MotionToken from_bins(int accel_bin, int yaw_bin) {
    return MotionToken{accel_bin * kBinsPerAxis + yaw_bin};
  }
  friend bool operator==(MotionToken, MotionToken) = default;
};

struct Control {
  double accel = 0.0;     // m/s^2
  double yaw_rate = 0.0;  // rad/s

  friend bool operator==(Control, Control) = default;
};

/// Bin centers of the uniform 63 x 63 control grid.
class TokenVocabulary {
 public:
  static const std::array<double, kBinsPerAxis>& accel_bins();
  static const std::array<double, kBinsPerAxis>& yaw_bins();
  static constexpr int size() { return kVocabularySize; }
};

/// Nearest-bin-center token; inputs are clamped to the vocabulary range first.
MotionToken tokenize(double accel, double yaw_rate);
inline MotionToken tokenize(Control c) { return tokenize(c.accel, c.yaw_rate); }

/// Bin-center control of a token. Throws Error(kInvalidToken) if out of range.
Control detokenize(MotionToken token);

struct AgentState {
  double x = 0.0;
  double y = 0.0;
  double v = 0.0;
  double theta = 0.0;
  double length = 4.5;
  double width = 2.0;

  friend bool operator==(const AgentState&, const AgentState&) = default;
};

/// Advances a state by dt_plan seconds holding `control` constant, integrating
///   x' = v cos(theta), y' = v sin(theta), theta' = psi, v' = a
/// with semi-implicit Euler at kSimDt (velocity and heading first, then position).
/// A trailing partial sub-step is taken when dt_plan is not a multiple of kSimDt.
AgentState step(const AgentState& state, Control control, double dt_plan);
AgentState step(const AgentState& state, MotionToken token, double dt_plan);

/// One semi-implicit sub-step of length dt.
AgentState substep(const AgentState& state, Control control, double dt);

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

struct OrientedBox {
  Vec2 center;
  double heading = 0.0;
  double half_length = 0.5;
  double half_width = 0.5;

  std::array<Vec2, 4> corners() const;
};

OrientedBox box_of(const AgentState& state);

/// Separating-axis test on the four face normals. Touching boxes collide.
bool collides(const OrientedBox& a, const OrientedBox& b);

/// Euclidean distance between the two rectangles; 0 when they overlap or touch.
double min_distance(const OrientedBox& a, const OrientedBox& b);

double point_segment_distance(Vec2 p, Vec2 a, Vec2 b);

}  // namespace sgen
