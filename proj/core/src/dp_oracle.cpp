#include "sgen/dp_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "sgen/error.hpp"

namespace sgen {

namespace {

struct Stencil {
  std::vector<std::size_t> index;  // 2^dim corners, or empty when off the grid
  std::vector<double> weight;
};

// Corner indices and weights of the multilinear interpolant at `state`.
Stencil stencil(const std::vector<GridAxis>& axes, std::span<const double> state) {
  const std::size_t dim = axes.size();
  std::vector<int> lo(dim);
  std::vector<double> frac(dim);
  constexpr double kSlack = 1e-9;
  for (std::size_t d = 0; d < dim; ++d) {
    const GridAxis& a = axes[d];
    const double tol = kSlack * a.spacing();
    if (state[d] < a.min - tol || state[d] > a.max + tol) return {};
    const double t = std::clamp((state[d] - a.min) / a.spacing(), 0.0, double(a.cells));
    const int i = std::min(static_cast<int>(std::floor(t)), a.cells - 1);
    lo[d] = i;
    frac[d] = t - i;
  }
  Stencil s;
  const std::size_t corners = std::size_t{1} << dim;
  for (std::size_t c = 0; c < corners; ++c) {
    std::size_t flat = 0;
    double w = 1.0;
    for (std::size_t d = 0; d < dim; ++d) {
      const bool up = (c >> (dim - 1 - d)) & 1;
      flat = flat * axes[d].nodes() + (lo[d] + (up ? 1 : 0));
      w *= up ? frac[d] : 1.0 - frac[d];
    }
    if (w == 0.0) continue;
    s.index.push_back(flat);
    s.weight.push_back(w);
  }
  return s;
}

std::vector<double> node_state(const std::vector<GridAxis>& axes, std::size_t flat) {
  std::vector<double> s(axes.size());
  for (std::size_t d = axes.size(); d-- > 0;) {
    const int n = axes[d].nodes();
    s[d] = axes[d].node(static_cast<int>(flat % n));
    flat /= n;
  }
  return s;
}

std::size_t node_count(const std::vector<GridAxis>& axes) {
  std::size_t n = 1;
  for (const GridAxis& a : axes) n *= static_cast<std::size_t>(a.nodes());
  return n;
}

}  // namespace

std::size_t GridValueTable::flat_index(std::span<const int> node) const {
  if (node.size() != axes.size()) throw Error(ErrorKind::kShapeMismatch, "grid index rank");
  std::size_t flat = 0;
  for (std::size_t d = 0; d < axes.size(); ++d) {
    if (node[d] < 0 || node[d] >= axes[d].nodes()) {
      throw Error(ErrorKind::kShapeMismatch, "grid index out of range");
    }
    flat = flat * axes[d].nodes() + node[d];
  }
  return flat;
}

double GridValueTable::interpolate(std::span<const double> state) const {
  if (state.size() != axes.size()) throw Error(ErrorKind::kShapeMismatch, "grid state rank");
  const Stencil s = stencil(axes, state);
  if (s.index.empty()) return -1.0;
  double v = 0.0;
  for (std::size_t k = 0; k < s.index.size(); ++k) v += s.weight[k] * values[s.index[k]];
  return v;
}

nlohmann::json GridValueTable::to_json() const {
  nlohmann::json ax = nlohmann::json::array();
  for (const GridAxis& a : axes) {
    ax.push_back({{"name", a.name}, {"min", a.min}, {"max", a.max}, {"cells", a.cells}});
  }
  return {{"axes", ax},
          {"values", values},
          {"sweeps", residuals.size()},
          {"residual", residual()},
          {"converged", converged}};
}

GridValueTable GridValueTable::from_json(const nlohmann::json& j) {
  try {
    GridValueTable t;
    for (const auto& a : j.at("axes")) {
      t.axes.push_back({a.at("name").get<std::string>(), a.at("min").get<double>(),
                        a.at("max").get<double>(), a.at("cells").get<int>()});
    }
    t.values = j.at("values").get<std::vector<double>>();
    t.converged = j.at("converged").get<bool>();
    t.residuals = {j.at("residual").get<double>()};
    if (t.values.size() != node_count(t.axes)) {
      throw Error(ErrorKind::kValidation, "grid table value count does not match its axes");
    }
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kMalformedFile, std::string("grid table: ") + e.what());
  }
}

GridValueTable dp_oracle(const ReducedEnv& env, std::vector<GridAxis> axes,
                         const DpConfig& config) {
  if (axes.size() != env.state_dim()) {
    throw Error(ErrorKind::kConfiguration, "dp_oracle: axis count differs from state dimension");
  }
  for (const GridAxis& a : axes) {
    if (a.cells <= 0 || !(a.max > a.min)) {
      throw Error(ErrorKind::kConfiguration, "dp_oracle: bad axis " + a.name);
    }
  }
  const std::size_t n = node_count(axes);
  const int actions = env.action_count();

  // Successor stencils are fixed, so compute them once.
  std::vector<double> h(n);
  std::vector<std::size_t> offset(n * actions + 1, 0);
  std::vector<std::size_t> corner;
  std::vector<double> weight;
  for (std::size_t i = 0; i < n; ++i) {
    const std::vector<double> s = node_state(axes, i);
    h[i] = env.violation(s);
    for (int a = 0; a < actions; ++a) {
      const Stencil st = stencil(axes, env.transition(s, a));
      corner.insert(corner.end(), st.index.begin(), st.index.end());
      weight.insert(weight.end(), st.weight.begin(), st.weight.end());
      offset[i * actions + a + 1] = corner.size();
    }
  }

  GridValueTable table;
  table.axes = std::move(axes);
  table.values = h;
  std::vector<double> next(n);
  for (int sweep = 0; sweep < config.max_sweeps; ++sweep) {
    double residual = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (int a = 0; a < actions; ++a) {
        const std::size_t b = offset[i * actions + a];
        const std::size_t e = offset[i * actions + a + 1];
        // An empty stencil is a successor off the grid, read as safe.
        double v = b == e ? -1.0 : 0.0;
        for (std::size_t k = b; k < e; ++k) v += weight[k] * table.values[corner[k]];
        best = std::min(best, v);
      }
      next[i] = q_target(h[i], best, config.gamma);
      residual = std::max(residual, std::abs(next[i] - table.values[i]));
    }
    table.values.swap(next);
    table.residuals.push_back(residual);
    if (residual < config.tolerance) {
      table.converged = true;
      break;
    }
  }
  return table;
}

bool feasible(const GridValueTable& table, std::span<const double> state) {
  return table.interpolate(state) <= 0.0;
}

// ---------------------------------------------------------------- braking environment

BrakingEnv::BrakingEnv(FeasibilityConfig feasibility, double dt, double max_accel,
                       double max_speed)
    : feasibility_(feasibility), dt_(dt), max_accel_(max_accel), max_speed_(max_speed) {
  feasibility_.validate();
  if (!(dt > 0.0 && max_accel > 0.0 && max_speed > 0.0)) {
    throw Error(ErrorKind::kConfiguration, "braking env: dt, max_accel, max_speed must be > 0");
  }
}

double BrakingEnv::action(int index) const {
  return -max_accel_ + 2.0 * max_accel_ * index / (kBinsPerAxis - 1);
}

std::vector<double> BrakingEnv::transition(std::span<const double> state, int index) const {
  const double g = state[0];
  const double v = state[1];
  const double a = action(index);
  double travelled = 0.0;
  double v_next = v + a * dt_;
  if (v_next < 0.0) {
    travelled = v * v / (-2.0 * a);
    v_next = 0.0;
  } else if (v_next > max_speed_) {
    const double t = (max_speed_ - v) / a;
    travelled = v * t + 0.5 * a * t * t + max_speed_ * (dt_ - t);
    v_next = max_speed_;
  } else {
    travelled = v * dt_ + 0.5 * a * dt_ * dt_;
  }
  return {std::max(0.0, g - travelled), v_next};
}

double BrakingEnv::violation(std::span<const double> state) const {
  return state[0] > feasibility_.d_th ? -1.0 : feasibility_.penalty;
}

double BrakingEnv::margin(double gap, double speed) const {
  return gap - feasibility_.d_th - speed * speed / (2.0 * max_accel_);
}

double BrakingEnv::cell_margin(double speed, const GridAxis& gap_axis,
                               const GridAxis& speed_axis) const {
  const double dv = speed_axis.spacing();
  return gap_axis.spacing() + ((speed + dv) * (speed + dv) - speed * speed) / (2.0 * max_accel_);
}

RelativeFeatures BrakingEnv::features(double gap, double speed) const {
  const AgentState ego{0.0, 0.0, speed, 0.0};
  AgentState obstacle{0.0, 0.0, 0.0, 0.0};
  obstacle.x = 0.5 * ego.length + gap + 0.5 * obstacle.length;
  return relative_features(ego, obstacle);
}

std::vector<GridAxis> braking_axes() {
  return {{"gap", 0.0, 50.0, 200}, {"speed", 0.0, 20.0, 200}};
}

std::vector<TransitionRecord> braking_dataset(const BrakingEnv& env,
                                              std::span<const GridAxis> axes, int count,
                                              std::uint64_t seed, double braking_share) {
  if (axes.size() != 2) throw Error(ErrorKind::kConfiguration, "braking dataset needs 2 axes");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> gap(axes[0].min, axes[0].max);
  std::uniform_real_distribution<double> speed(axes[1].min, axes[1].max);
  std::uniform_int_distribution<int> any(0, env.action_count() - 1);
  std::uniform_int_distribution<int> braking(0, 1);
  std::bernoulli_distribution coin(braking_share);
  std::vector<TransitionRecord> records;
  records.reserve(static_cast<std::size_t>(count));
  for (int k = 0; k < count; ++k) {
    const std::vector<double> s{gap(rng), speed(rng)};
    const int a = coin(rng) ? braking(rng) : any(rng);
    const std::vector<double> n = env.transition(s, a);
    TransitionRecord r;
    r.s = env.features(s[0], s[1]);
    r.a = {env.action(a), 0.0};
    r.s_next = env.features(n[0], n[1]);
    r.h_s = env.violation(s);
    r.terminal = r.h_s > 0.0;
    records.push_back(r);
  }
  return records;
}

namespace {

template <typename Predicate>
SignAgreement compare_off_boundary(const BrakingEnv& env, const GridValueTable& table,
                                   Predicate&& predicted_feasible) {
  const GridAxis& ga = table.axes.at(0);
  const GridAxis& va = table.axes.at(1);
  SignAgreement r;
  for (int i = 0; i < ga.nodes(); ++i) {
    for (int j = 0; j < va.nodes(); ++j) {
      const double g = ga.node(i);
      const double v = va.node(j);
      const double m = env.margin(g, v);
      if (std::abs(m) <= env.cell_margin(v, ga, va)) continue;
      ++r.compared;
      r.agreeing += predicted_feasible(i, j, g, v) == (table.values[i * va.nodes() + j] <= 0.0);
    }
  }
  return r;
}

}  // namespace

SignAgreement oracle_vs_analytic(const BrakingEnv& env, const GridValueTable& table) {
  return compare_off_boundary(env, table, [&](int, int, double g, double v) {
    return env.margin(g, v) >= 0.0;
  });
}

SignAgreement model_vs_oracle(const BrakingEnv& env, const GridValueTable& table,
                              const FeasibilityModel& model) {
  std::vector<RelativeFeatures> states;
  const GridAxis& ga = table.axes.at(0);
  const GridAxis& va = table.axes.at(1);
  for (int i = 0; i < ga.nodes(); ++i) {
    for (int j = 0; j < va.nodes(); ++j) states.push_back(env.features(ga.node(i), va.node(j)));
  }
  const std::vector<double> v = model.values(states);
  return compare_off_boundary(env, table, [&](int i, int j, double, double) {
    return v[static_cast<std::size_t>(i) * va.nodes() + j] <= 0.0;
  });
}

}  // namespace sgen
