#include "sgen/feasibility.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "sgen/checkpoint.hpp"
#include "sgen/error.hpp"

namespace sgen {

void FeasibilityConfig::validate() const {
  std::vector<std::string> bad;
  if (!(d_th > 0.0)) bad.push_back("d_th must be > 0");
  if (!(penalty > 0.0)) bad.push_back("penalty must be > 0");
  if (!(gamma > 0.0 && gamma < 1.0)) bad.push_back("gamma must lie in (0, 1)");
  if (!(tau >= 0.5 && tau < 1.0)) bad.push_back("tau must lie in [0.5, 1)");
  if (!bad.empty()) {
    std::string msg = "feasibility config:";
    for (const auto& b : bad) msg += " " + b + ";";
    throw Error(ErrorKind::kValidation, msg);
  }
}

nlohmann::json to_json(const FeasibilityConfig& c) {
  return {{"d_th", c.d_th}, {"penalty", c.penalty}, {"gamma", c.gamma}, {"tau", c.tau}};
}

FeasibilityConfig feasibility_config_from_json(const nlohmann::json& j) {
  FeasibilityConfig c;
  c.d_th = j.value("d_th", c.d_th);
  c.penalty = j.value("penalty", c.penalty);
  c.gamma = j.value("gamma", c.gamma);
  c.tau = j.value("tau", c.tau);
  c.validate();
  return c;
}

double violation_h(const AgentState& ego, const AgentState& cbv, const FeasibilityConfig& cfg) {
  return min_distance(box_of(ego), box_of(cbv)) > cfg.d_th ? -1.0 : cfg.penalty;
}

double expectile_loss(double u, double tau) {
  const double weight = std::abs(tau - (u > 0.0 ? 1.0 : 0.0));
  return weight * u * u;
}

double q_target(double h_s, double v_next, double gamma) {
  return h_s + gamma * (std::max(h_s, v_next) - h_s);
}

// ---------------------------------------------------------------- features

std::array<double, kRelativeFeatureCount> RelativeFeatures::to_array() const {
  return {dx,    dy,    sin_dtheta,      cos_dtheta,     v_ego,
          v_cbv, ego_half_length, ego_half_width, cbv_half_length, cbv_half_width};
}

RelativeFeatures RelativeFeatures::from_array(std::span<const double> a) {
  if (a.size() != kRelativeFeatureCount) {
    throw Error(ErrorKind::kMalformedFile, "relative features need 10 values");
  }
  return {a[0], a[1], a[2], a[3], a[4], a[5], a[6], a[7], a[8], a[9]};
}

bool RelativeFeatures::all_finite() const {
  const auto a = to_array();
  return std::all_of(a.begin(), a.end(), [](double x) { return std::isfinite(x); });
}

RelativeFeatures relative_features(const AgentState& ego, const AgentState& cbv) {
  const double c = std::cos(ego.theta);
  const double s = std::sin(ego.theta);
  const double wx = cbv.x - ego.x;
  const double wy = cbv.y - ego.y;
  const double dtheta = wrap_angle(cbv.theta - ego.theta);
  RelativeFeatures f;
  f.dx = c * wx + s * wy;
  f.dy = -s * wx + c * wy;
  f.sin_dtheta = std::sin(dtheta);
  f.cos_dtheta = std::cos(dtheta);
  f.v_ego = ego.v;
  f.v_cbv = cbv.v;
  f.ego_half_length = 0.5 * ego.length;
  f.ego_half_width = 0.5 * ego.width;
  f.cbv_half_length = 0.5 * cbv.length;
  f.cbv_half_width = 0.5 * cbv.width;
  return f;
}

// ---------------------------------------------------------------- records

nlohmann::json to_json(const TransitionRecord& r) {
  return {{"s", r.s.to_array()},
          {"a", {r.a.accel, r.a.yaw_rate}},
          {"s_next", r.s_next.to_array()},
          {"h_s", r.h_s},
          {"terminal", r.terminal}};
}

TransitionRecord transition_record_from_json(const nlohmann::json& j) {
  try {
    TransitionRecord r;
    r.s = RelativeFeatures::from_array(j.at("s").get<std::vector<double>>());
    const auto a = j.at("a").get<std::vector<double>>();
    if (a.size() != 2) throw Error(ErrorKind::kMalformedFile, "record control needs 2 values");
    r.a = {a[0], a[1]};
    r.s_next = RelativeFeatures::from_array(j.at("s_next").get<std::vector<double>>());
    r.h_s = j.at("h_s").get<double>();
    r.terminal = j.at("terminal").get<bool>();
    if (!r.s.all_finite() || !r.s_next.all_finite() || !std::isfinite(r.a.accel) ||
        !std::isfinite(r.a.yaw_rate)) {
      throw Error(ErrorKind::kValidation, "record has non-finite values");
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kMalformedFile, std::string("transition record: ") + e.what());
  }
}

void save_records(const std::filesystem::path& path, std::span<const TransitionRecord> records) {
  std::ostringstream out;
  for (const TransitionRecord& r : records) out << to_json(r).dump() << '\n';
  write_text_file(path, out.str());
}

std::vector<TransitionRecord> load_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kMissingArtifact, "cannot open dataset " + path.string());
  std::vector<TransitionRecord> records;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::kMalformedFile, path.string() + ": " + e.what());
    }
    records.push_back(transition_record_from_json(j));
  }
  return records;
}

// ---------------------------------------------------------------- networks

namespace {

// Rough scales of each input so the networks see O(1) values.
constexpr std::array<double, kRelativeFeatureCount> kFeatureScale = {20.0, 20.0, 1.0, 1.0, 10.0,
                                                                     10.0, 2.5,  1.0, 2.5, 1.0};
// Raw features plus box clearance and squared speeds (stopping-distance terms).
constexpr std::size_t kValueInputs = kRelativeFeatureCount + 3;
constexpr std::size_t kQInputs = kValueInputs + 2;

double clearance(const RelativeFeatures& f) {
  const OrientedBox ego{{0.0, 0.0}, 0.0, f.ego_half_length, f.ego_half_width};
  const OrientedBox cbv{{f.dx, f.dy}, std::atan2(f.sin_dtheta, f.cos_dtheta), f.cbv_half_length,
                        f.cbv_half_width};
  return min_distance(ego, cbv);
}

void write_state_inputs(const RelativeFeatures& f, std::span<double> row) {
  const auto a = f.to_array();
  for (std::size_t c = 0; c < kRelativeFeatureCount; ++c) row[c] = a[c] / kFeatureScale[c];
  row[kRelativeFeatureCount] = clearance(f) / 20.0;
  row[kRelativeFeatureCount + 1] = f.v_ego * f.v_ego / 100.0;
  row[kRelativeFeatureCount + 2] = f.v_cbv * f.v_cbv / 100.0;
}

void add_perceptron(ParameterStore& params, const std::string& prefix, std::size_t inputs,
                    std::size_t hidden, std::mt19937_64& rng) {
  params.add_xavier(prefix + ".w1", inputs, hidden, rng);
  params.add_zeros(prefix + ".b1", 1, hidden);
  params.add_xavier(prefix + ".w2", hidden, hidden, rng);
  params.add_zeros(prefix + ".b2", 1, hidden);
  params.add_xavier(prefix + ".w3", hidden, 1, rng);
  params.add_zeros(prefix + ".b3", 1, 1);
}

Var perceptron_on(const std::string& prefix, Var inputs,
                  const std::function<Var(const std::string&)>& p) {
  Var h = relu(add_bias(matmul(inputs, p(prefix + ".w1")), p(prefix + ".b1")));
  h = relu(add_bias(matmul(h, p(prefix + ".w2")), p(prefix + ".b2")));
  // Offset so that an untrained network reads as the safe fixed point -1.
  return add_scalar(add_bias(matmul(h, p(prefix + ".w3")), p(prefix + ".b3")), -1.0);
}

}  // namespace

Tensor2 value_inputs(std::span<const RelativeFeatures> states) {
  Tensor2 x(states.size(), kValueInputs);
  for (std::size_t r = 0; r < states.size(); ++r) write_state_inputs(states[r], x.row_span(r));
  return x;
}

Tensor2 q_inputs(std::span<const RelativeFeatures> states, std::span<const Control> controls) {
  if (states.size() != controls.size()) {
    throw Error(ErrorKind::kShapeMismatch, "q_inputs: states and controls differ in length");
  }
  Tensor2 x(states.size(), kQInputs);
  for (std::size_t r = 0; r < states.size(); ++r) {
    const auto row = x.row_span(r);
    write_state_inputs(states[r], row);
    row[kValueInputs] = controls[r].accel / kAccelMax;
    row[kValueInputs + 1] = controls[r].yaw_rate / kYawRateMax;
  }
  return x;
}

Var perceptron(Tape& tape, ParameterStore& params, const std::string& prefix, Var inputs) {
  return perceptron_on(prefix, inputs,
                       [&](const std::string& name) { return tape.param(params.at(name)); });
}

Tensor2 perceptron_values(const ParameterStore& params, const std::string& prefix,
                          const Tensor2& inputs) {
  Tape tape;
  const Var out = perceptron_on(prefix, tape.constant(inputs), [&](const std::string& n) {
    return tape.constant(params.at(n).value);
  });
  return out.value();
}

FeasibilityModel::FeasibilityModel(const FeasibilityNetConfig& config) : config_(config) {
  if (config.hidden <= 0) throw Error(ErrorKind::kConfiguration, "hidden width must be > 0");
  std::mt19937_64 rng(config.seed);
  const auto hidden = static_cast<std::size_t>(config.hidden);
  add_perceptron(params_, "V", kValueInputs, hidden, rng);
  add_perceptron(params_, "Q", kQInputs, hidden, rng);
}

double FeasibilityModel::value(const RelativeFeatures& s) const {
  return values(std::span<const RelativeFeatures>(&s, 1)).front();
}

std::vector<double> FeasibilityModel::values(std::span<const RelativeFeatures> states) const {
  if (states.empty()) return {};
  return perceptron_values(params_, "V", value_inputs(states)).data();
}

double FeasibilityModel::q_value(const RelativeFeatures& s, Control a) const {
  return perceptron_values(params_, "Q", q_inputs({&s, 1}, {&a, 1}))(0, 0);
}

void FeasibilityModel::save(const std::filesystem::path& path, const nlohmann::json& meta) const {
  nlohmann::json m = meta.is_object() ? meta : nlohmann::json::object();
  m["kind"] = "feasibility";
  m["hidden"] = config_.hidden;
  m["seed"] = config_.seed;
  save_checkpoint(path, params_, m);
}

FeasibilityModel FeasibilityModel::load(const std::filesystem::path& path) {
  const nlohmann::json j = read_json_file(path);
  if (!j.contains("meta") || j["meta"].value("kind", "") != "feasibility") {
    throw Error(ErrorKind::kMalformedFile, path.string() + " is not a feasibility checkpoint");
  }
  FeasibilityModel m({.hidden = j["meta"].at("hidden").get<int>(),
                      .seed = j["meta"].at("seed").get<std::uint64_t>()});
  params_from_json(j, m.params_);
  return m;
}

bool feasible(const FeasibilityModel& model, const RelativeFeatures& s) {
  return model.value(s) <= 0.0;
}

// ---------------------------------------------------------------- training

nlohmann::json to_json(const TrainFeasibilityConfig& c) {
  return {{"feasibility", to_json(c.feasibility)},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"final_lr_fraction", c.final_lr_fraction},
          {"grad_clip", c.grad_clip},
          {"target_period", c.target_period},
          {"seed", c.seed}};
}

TrainFeasibilityConfig train_feasibility_config_from_json(const nlohmann::json& j) {
  TrainFeasibilityConfig c;
  if (j.contains("feasibility")) c.feasibility = feasibility_config_from_json(j["feasibility"]);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.final_lr_fraction = j.value("final_lr_fraction", c.final_lr_fraction);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.target_period = j.value("target_period", c.target_period);
  c.seed = j.value("seed", c.seed);
  return c;
}

FeasibilityTrainReport train_feasibility(FeasibilityModel& model,
                                         std::span<const TransitionRecord> records,
                                         const TrainFeasibilityConfig& config) {
  if (records.empty()) throw Error(ErrorKind::kEmptyDataset, "train_feasibility: no records");
  config.feasibility.validate();
  if (config.epochs <= 0 || config.batch_size <= 0 || config.target_period <= 0) {
    throw Error(ErrorKind::kConfiguration,
                "train_feasibility: epochs, batch_size and target_period must be positive");
  }
  const double gamma = config.feasibility.gamma;
  const double tau = config.feasibility.tau;

  std::vector<RelativeFeatures> states;
  std::vector<RelativeFeatures> next_states;
  std::vector<Control> controls;
  for (const TransitionRecord& r : records) {
    states.push_back(r.s);
    next_states.push_back(r.s_next);
    controls.push_back(r.a);
  }
  const Tensor2 all_states = value_inputs(states);

  ParameterStore& params = model.params();
  ParameterStore target = params;
  const AdamConfig adam{.learning_rate = config.learning_rate, .grad_clip = config.grad_clip};
  OptimizerState opt = make_optimizer_state(params, adam);

  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), 0);
  FeasibilityTrainReport report;
  auto check = [&](double v, const char* what, int epoch) {
    if (!std::isfinite(v)) {
      throw Error(ErrorKind::kNonFinite, std::string("train_feasibility: non-finite ") + what +
                                             " loss at epoch " + std::to_string(epoch) +
                                             ", step " + std::to_string(report.steps));
    }
  };

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const double progress =
        config.epochs > 1 ? double(epoch - 1) / double(config.epochs - 1) : 0.0;
    opt.config.learning_rate =
        config.learning_rate * (1.0 - (1.0 - config.final_lr_fraction) * progress);
    std::shuffle(order.begin(), order.end(), rng);
    double q_total = 0.0;
    double v_total = 0.0;
    int batches = 0;
    for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
      const std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(config.batch_size));
      std::vector<RelativeFeatures> bs, bn;
      std::vector<Control> ba;
      for (std::size_t k = b; k < e; ++k) {
        bs.push_back(states[order[k]]);
        bn.push_back(next_states[order[k]]);
        ba.push_back(controls[order[k]]);
      }
      const Tensor2 xs = value_inputs(bs);
      const Tensor2 xq = q_inputs(bs, ba);
      const Tensor2 v_next = perceptron_values(target, "V", value_inputs(bn));
      Tensor2 q_hat(bs.size(), 1);
      for (std::size_t k = b; k < e; ++k) {
        const TransitionRecord& r = records[order[k]];
        const double vn = r.terminal ? r.h_s : v_next(k - b, 0);
        q_hat(k - b, 0) = q_target(r.h_s, vn, gamma);
      }

      params.zero_grad();
      Tensor2 q_now;
      {
        Tape tape;
        const Var q = perceptron(tape, params, "Q", tape.constant(xq));
        q_now = q.value();
        const Var loss = mse(q, q_hat);
        check(loss.value()(0, 0), "Q", epoch);
        q_total += loss.value()(0, 0);
        tape.backward(loss);
      }
      {
        Tape tape;
        const Var v = perceptron(tape, params, "V", tape.constant(xs));
        const Var loss = expectile_mean(sub(tape.constant(q_now), v), tau);
        check(loss.value()(0, 0), "V", epoch);
        v_total += loss.value()(0, 0);
        tape.backward(loss);
      }
      adam_step(params, opt);
      ++batches;
      if (++report.steps % config.target_period == 0) target.copy_values_from(params);
    }
    const Tensor2 v_all = perceptron_values(params, "V", all_states);
    const double mean_v =
        std::accumulate(v_all.data().begin(), v_all.data().end(), 0.0) /
        static_cast<double>(v_all.size());
    report.mean_value.push_back(mean_v);
    report.q_loss.push_back(q_total / batches);
    report.v_loss.push_back(v_total / batches);
  }
  return report;
}

}  // namespace sgen
