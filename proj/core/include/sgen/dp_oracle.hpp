#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "sgen/feasibility.hpp"

namespace sgen {

// Uniform axis with cells + 1 nodes from min to max.
struct GridAxis {
  std::string name;
  double min = 0.0;
  double max = 1.0;
  int cells = 1;

  int nodes() const { return cells + 1; }
  double spacing() const { return (max - min) / cells; }
  double node(int i) const { return min + spacing() * i; }
};

/// Deterministic reduced dynamics over a finite action set.
class ReducedEnv {
 public:
  virtual ~ReducedEnv() = default;
  virtual std::size_t state_dim() const = 0;
  virtual int action_count() const = 0;
  virtual std::vector<double> transition(std::span<const double> state, int action) const = 0;
  virtual double violation(std::span<const double> state) const = 0;
};

struct DpConfig {
  double gamma = 0.99;
  double tolerance = 1e-6;  // max-norm change of one sweep
  int max_sweeps = 10000;
};

// Fixed point of V(s) = (1 - gamma) h(s) + gamma max(h(s), min_a V(f(s, a))) on a grid.
struct GridValueTable {
  std::vector<GridAxis> axes;
  std::vector<double> values;     // row-major over axes, last axis fastest
  std::vector<double> residuals;  // per sweep
  bool converged = false;

  std::size_t flat_index(std::span<const int> node) const;
  double at(std::span<const int> node) const { return values[flat_index(node)]; }
  /// Multilinear interpolation; states outside any axis range read as safe (-1).
  double interpolate(std::span<const double> state) const;
  double residual() const { return residuals.empty() ? 0.0 : residuals.back(); }

  /// Axes and the flat value array, for plotting feasibility maps.
  nlohmann::json to_json() const;
  static GridValueTable from_json(const nlohmann::json& j);
};

/// Jacobi value iteration to `tolerance` or `max_sweeps`; non-convergence is reported in
/// the table (converged = false, residual()) rather than thrown.
GridValueTable dp_oracle(const ReducedEnv& env, std::vector<GridAxis> axes,
                         const DpConfig& config);

/// V*(s) <= 0.
bool feasible(const GridValueTable& table, std::span<const double> state);

/// Ego behind a stationary obstacle on a line. State (gap g in metres between the boxes,
/// ego speed v). Constant acceleration over each planning step with exact kinematics,
/// speed held in [0, max_speed]. Actions are 63 accelerations evenly spaced over
/// [-max_accel, max_accel], both ends included.
class BrakingEnv : public ReducedEnv {
 public:
  explicit BrakingEnv(FeasibilityConfig feasibility = {}, double dt = kPlanDt,
                      double max_accel = kAccelMax, double max_speed = 20.0);

  std::size_t state_dim() const override { return 2; }
  int action_count() const override { return kBinsPerAxis; }
  std::vector<double> transition(std::span<const double> state, int action) const override;
  double violation(std::span<const double> state) const override;

  double action(int index) const;
  double max_speed() const { return max_speed_; }
  const FeasibilityConfig& feasibility() const { return feasibility_; }

  /// g - d_th - v^2 / (2 max_accel): negative exactly when collision is unavoidable.
  double margin(double gap, double speed) const;
  /// Margin change across one grid cell at this speed (gap spacing plus the speed term).
  double cell_margin(double speed, const GridAxis& gap_axis, const GridAxis& speed_axis) const;

  /// Joint state of ego (length 4.5, width 2, at the origin heading +x) and obstacle.
  RelativeFeatures features(double gap, double speed) const;

 private:
  FeasibilityConfig feasibility_;
  double dt_;
  double max_accel_;
  double max_speed_;
};

/// 200 x 200 cells over g in [0, 50] m and v in [0, 20] m/s.
std::vector<GridAxis> braking_axes();

/// `count` transitions from states drawn uniformly over the axes. A `braking_share` of
/// the actions is uniform over the two strongest braking actions, the rest uniform over
/// the action set. Violating states are terminal.
std::vector<TransitionRecord> braking_dataset(const BrakingEnv& env,
                                              std::span<const GridAxis> axes, int count,
                                              std::uint64_t seed, double braking_share = 0.9);

struct SignAgreement {
  int compared = 0;  // nodes off the boundary
  int agreeing = 0;
  double fraction() const { return compared == 0 ? 0.0 : double(agreeing) / compared; }
};

/// Compares the table's sign with the closed-form condition on nodes whose |margin|
/// exceeds one cell.
SignAgreement oracle_vs_analytic(const BrakingEnv& env, const GridValueTable& table);
/// Compares a learned V_h with the table on nodes whose |margin| exceeds one cell.
SignAgreement model_vs_oracle(const BrakingEnv& env, const GridValueTable& table,
                              const FeasibilityModel& model);

}  // namespace sgen
