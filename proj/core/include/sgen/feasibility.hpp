#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "json.hpp"
#include "sgen/kinematics.hpp"
#include "sgen/numerics.hpp"

namespace sgen {

struct FeasibilityConfig {
  double d_th = 0.3;      // m, clearance threshold
  double penalty = 16.0;  // h value of a violating state
  double gamma = 0.99;
  double tau = 0.8;       // expectile level

  /// Throws Error(kValidation) naming every violated field.
  void validate() const;
};

nlohmann::json to_json(const FeasibilityConfig& c);
FeasibilityConfig feasibility_config_from_json(const nlohmann::json& j);

/// -1 when the boxes are more than d_th apart, the penalty otherwise.
double violation_h(const AgentState& ego, const AgentState& cbv, const FeasibilityConfig& cfg);

/// |tau - 1(u > 0)| u^2.
double expectile_loss(double u, double tau);

/// (1 - gamma) h + gamma max(h, v_next), evaluated as h + gamma (max(h, v_next) - h) so
/// that an absorbing state returns h exactly.
double q_target(double h_s, double v_next, double gamma);

inline constexpr std::size_t kRelativeFeatureCount = 10;

// Joint ego/CBV state seen from the ego frame.
struct RelativeFeatures {
  double dx = 0.0;  // m
  double dy = 0.0;  // m
  double sin_dtheta = 0.0;
  double cos_dtheta = 1.0;
  double v_ego = 0.0;
  double v_cbv = 0.0;
  double ego_half_length = 2.25;
  double ego_half_width = 1.0;
  double cbv_half_length = 2.25;
  double cbv_half_width = 1.0;

  std::array<double, kRelativeFeatureCount> to_array() const;
  static RelativeFeatures from_array(std::span<const double> a);
  bool all_finite() const;
  friend bool operator==(const RelativeFeatures&, const RelativeFeatures&) = default;
};

RelativeFeatures relative_features(const AgentState& ego, const AgentState& cbv);

struct TransitionRecord {
  RelativeFeatures s;
  Control a;  // ego control
  RelativeFeatures s_next;
  double h_s = -1.0;
  bool terminal = false;

  friend bool operator==(const TransitionRecord&, const TransitionRecord&) = default;
};

nlohmann::json to_json(const TransitionRecord& r);
TransitionRecord transition_record_from_json(const nlohmann::json& j);
/// One JSON object per line.
void save_records(const std::filesystem::path& path, std::span<const TransitionRecord> records);
std::vector<TransitionRecord> load_records(const std::filesystem::path& path);

struct FeasibilityNetConfig {
  int hidden = 128;
  std::uint64_t seed = 1;
};

/// V_h(s) and Q_h(s, a) as three-layer ReLU perceptrons ("V.*" and "Q.*" parameters).
class FeasibilityModel {
 public:
  FeasibilityModel() = default;
  explicit FeasibilityModel(const FeasibilityNetConfig& config);

  const FeasibilityNetConfig& config() const { return config_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }

  double value(const RelativeFeatures& s) const;
  std::vector<double> values(std::span<const RelativeFeatures> states) const;
  double q_value(const RelativeFeatures& s, Control a) const;

  void save(const std::filesystem::path& path, const nlohmann::json& meta = {}) const;
  static FeasibilityModel load(const std::filesystem::path& path);

 private:
  FeasibilityNetConfig config_;
  ParameterStore params_;
};

/// Normalized network inputs, one row per state (and control for Q).
Tensor2 value_inputs(std::span<const RelativeFeatures> states);
Tensor2 q_inputs(std::span<const RelativeFeatures> states, std::span<const Control> controls);
/// Forward pass of the perceptron with parameters "<prefix>.w1" ... "<prefix>.b3", minus 1.
Var perceptron(Tape& tape, ParameterStore& params, const std::string& prefix, Var inputs);
Tensor2 perceptron_values(const ParameterStore& params, const std::string& prefix,
                          const Tensor2& inputs);

struct TrainFeasibilityConfig {
  FeasibilityConfig feasibility;
  int epochs = 40;
  int batch_size = 256;
  double learning_rate = 1e-3;
  double final_lr_fraction = 0.1;  // linear decay of the learning rate over the epochs
  double grad_clip = 10.0;
  int target_period = 200;  // gradient steps between copies of V_h into its target
  std::uint64_t seed = 1;
};

nlohmann::json to_json(const TrainFeasibilityConfig& c);
TrainFeasibilityConfig train_feasibility_config_from_json(const nlohmann::json& j);

struct FeasibilityTrainReport {
  std::vector<double> mean_value;  // mean V_h over the dataset after each epoch
  std::vector<double> q_loss;      // mean per epoch
  std::vector<double> v_loss;
  int steps = 0;
};

/// Alternates per batch a Q_h regression step toward q_target (using the target copy
/// of V_h on s') and a V_h expectile step toward Q_h. Throws kEmptyDataset or
/// kNonFinite.
FeasibilityTrainReport train_feasibility(FeasibilityModel& model,
                                         std::span<const TransitionRecord> records,
                                         const TrainFeasibilityConfig& config);

/// V_h(s) <= 0.
bool feasible(const FeasibilityModel& model, const RelativeFeatures& s);

}  // namespace sgen
