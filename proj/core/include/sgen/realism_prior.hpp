#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "sgen/kinematics.hpp"
#include "sgen/numerics.hpp"
#include "sgen/scenario.hpp"

namespace sgen {

/// 0.8 - 0.6 exp(-0.3 (l - 1)) for layer l >= 1.
double lambda_init(int layer);

// Relative geometry of a key source seen from the query agent's frame.
struct RelativeDescriptor {
  double dx = 0.0;      // m, query frame
  double dy = 0.0;      // m, query frame
  double dtheta = 0.0;  // rad, wrapped
  int dtau = 0;         // planning steps back in time, 0 for map
};

inline constexpr std::size_t kDescriptorFeatures = 7;

RelativeDescriptor relative_descriptor(const AgentState& query, Vec2 source, double source_heading,
                                       int dtau);
/// Feature encoding of a descriptor fed to the key/value projections.
std::array<double, kDescriptorFeatures> descriptor_features(const RelativeDescriptor& d);

struct PriorConfig {
  int width = 64;
  int heads = 8;
  int head_dim = 8;  // per-head query/key width; values use 2 * head_dim
  int layers = 3;
  int history = 10;  // planning steps of temporal context
  double agent_radius = kAgentRadius;
  double map_radius = kMapRadius;
  int map_keys = 24;  // nearest segments inside map_radius attended per query; 0 = all
  std::uint64_t seed = 1;
};

nlohmann::json to_json(const PriorConfig& c);
PriorConfig prior_config_from_json(const nlohmann::json& j);

/// Weights of one differential-attention sub-layer.
struct MdaWeights {
  const Parameter* wq1 = nullptr;
  const Parameter* wq2 = nullptr;
  const Parameter* wk1e = nullptr;  // embedding part of k(e, d)
  const Parameter* wk2e = nullptr;
  const Parameter* wk1d = nullptr;  // descriptor part of k(e, d)
  const Parameter* wk2d = nullptr;
  const Parameter* wve = nullptr;
  const Parameter* wvd = nullptr;
  const Parameter* wo = nullptr;
  const Parameter* lq1 = nullptr;
  const Parameter* lk1 = nullptr;
  const Parameter* lq2 = nullptr;
  const Parameter* lk2 = nullptr;
  double lambda_init = 0.2;
  int heads = 8;
  int head_dim = 8;
};

/// Registers the parameters of one sub-layer under `prefix` and returns views of them.
MdaWeights add_mda_weights(ParameterStore& store, const std::string& prefix, int width,
                           int heads, int head_dim, int layer, std::mt19937_64& rng);
MdaWeights find_mda_weights(const ParameterStore& store, const std::string& prefix, int heads,
                            int head_dim, int layer);

struct MdaOptions {
  bool zero_lambda = false;  // force lambda = 0
  bool head_norm = true;     // per-head RMS norm scaled by (1 - lambda_init)
};

/// Key set of every query: pairs grouped by query, each naming a source row and
/// carrying its descriptor features.
struct MdaPairs {
  std::vector<int> source;          // row of the source matrix per pair
  std::vector<double> descriptors;  // pairs x kDescriptorFeatures
  std::vector<int> segment_start;   // queries + 1 offsets into pairs

  std::size_t size() const { return source.size(); }
  void begin_query() {
    if (segment_start.empty()) segment_start.push_back(0);
  }
  void add(int src, const std::array<double, kDescriptorFeatures>& feats) {
    source.push_back(src);
    descriptors.insert(descriptors.end(), feats.begin(), feats.end());
  }
  void end_query() { segment_start.push_back(static_cast<int>(source.size())); }
};

struct MdaOutput {
  Var update;  // added to the residual stream; zero rows for queries without keys
  Var heads;   // per-head differential attention before normalization
  Var lambda;  // 1 x 1
};

/// Binds parameters onto a tape: trainable (gradients flow into the store) or frozen.
class ParamBinder {
 public:
  ParamBinder(Tape& tape, ParameterStore& trainable) : tape_(tape), trainable_(&trainable) {}
  ParamBinder(Tape& tape, const ParameterStore& frozen) : tape_(tape), frozen_(&frozen) {}
  Var operator()(const Parameter& p) const;
  Var operator()(const std::string& name) const;
  Tape& tape() const { return tape_; }

 private:
  Tape& tape_;
  ParameterStore* trainable_ = nullptr;
  const ParameterStore* frozen_ = nullptr;
};

/// Multi-head differential attention:
///   per head (softmax(Q1 K1^T / sqrt d) - lambda softmax(Q2 K2^T / sqrt d)) V,
/// with lambda = exp(lq1 . lk1) - exp(lq2 . lk2) + lambda_init, then per-head RMS norm
/// times (1 - lambda_init), head concatenation and output projection.
MdaOutput mda(const ParamBinder& bind, const MdaWeights& w, Var queries, Var sources,
              const MdaPairs& pairs, const MdaOptions& options = {});

// Embedding features of one agent at one planning step.
struct AgentInput {
  AgentState state;
  Control previous;  // control executed into this state; zero at the first step
};

/// Joint history at planning resolution plus the resampled map.
struct PriorScene {
  std::vector<MapSegment> segments;
  int agent_count = 0;
  std::vector<std::vector<AgentInput>> steps;  // [planning step][agent]
};

/// Planning-rate scene of a logged scenario, with the recovered next-token targets
/// (targets[t][i] is the token from step t to t + 1, -1 when not invertible).
struct PriorExample {
  PriorScene scene;
  std::vector<std::vector<int>> targets;
  int skipped = 0;  // transitions outside the token-grid tolerance
};
PriorExample make_prior_example(const Scenario& s);

class PriorModel {
 public:
  PriorModel() = default;
  explicit PriorModel(const PriorConfig& config);
  PriorModel(const PriorConfig& config, ParameterStore params);

  const PriorConfig& config() const { return config_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }
  MdaOptions& options() { return options_; }
  const MdaOptions& options() const { return options_; }

  /// Zeroes the output head (the distribution becomes exactly uniform).
  void zero_head();

  void save(const std::filesystem::path& path, const nlohmann::json& meta = {}) const;
  static PriorModel load(const std::filesystem::path& path);

 private:
  PriorConfig config_;
  ParameterStore params_;
  MdaOptions options_;
};

/// Per-layer normalized inputs of already processed rows, so that new planning steps
/// attend to history without recomputing it.
struct PriorCache {
  int steps = 0;
  std::vector<Tensor2> temporal_keys;  // per layer, rows = steps * agents
  std::vector<Tensor2> agent_keys;
};

/// Logits for the rows of planning steps [first, scene.steps.size()), ordered
/// step-major. Without a cache first = 0; with one, first = cache->steps and the
/// normalized inputs of the new rows are appended to it.
Var prior_logits(const ParamBinder& bind, const PriorModel& model, const PriorScene& scene,
                 PriorCache* cache = nullptr);

/// Token distribution of `agent` at the last step of `scene`.
std::vector<double> decode_step(const PriorModel& model, const PriorScene& scene, int agent);

/// Incremental rollout decoder: push one joint step, get every agent's distribution.
class PriorSession {
 public:
  PriorSession(const PriorModel& model, std::vector<MapSegment> segments, int agent_count);
  /// Appends one planning step and returns agent_count x 3969 probabilities.
  Tensor2 push(std::span<const AgentInput> step);
  const PriorScene& scene() const { return scene_; }

 private:
  const PriorModel* model_;
  PriorScene scene_;
  PriorCache cache_;
};

enum class SampleMode { kArgmax, kCategorical };

/// Argmax takes the lowest index among ties; categorical draws with temperature 1.
MotionToken sample_token(std::span<const double> dist, std::mt19937_64& rng, SampleMode mode);

struct TrainPriorConfig {
  int epochs = 20;
  int batch_scenarios = 4;
  double learning_rate = 2e-3;
  double grad_clip = 5.0;
  std::uint64_t seed = 1;
};

nlohmann::json to_json(const TrainPriorConfig& c);
TrainPriorConfig train_prior_config_from_json(const nlohmann::json& j);

struct PriorEpochStats {
  int epoch = 0;
  double train_nll = 0.0;
  double validation_nll = 0.0;  // NaN without a validation set
};

struct PriorTrainReport {
  std::vector<PriorEpochStats> epochs;
  int skipped_transitions = 0;
};

struct PriorEvaluation {
  double nll = 0.0;
  double top1_accuracy = 0.0;
  double top20_coverage = 0.0;
  int targets = 0;
};

/// Mean next-token cross-entropy of one example (teacher forcing over all rows).
Var prior_loss(const ParamBinder& bind, const PriorModel& model, const PriorExample& example);

PriorEvaluation evaluate_prior(const PriorModel& model, std::span<const PriorExample> examples);

/// Adam on the mean cross-entropy, scenarios shuffled per epoch with the config seed.
PriorTrainReport train_prior(PriorModel& model, std::span<const PriorExample> train,
                             std::span<const PriorExample> validation,
                             const TrainPriorConfig& config);

}  // namespace sgen
