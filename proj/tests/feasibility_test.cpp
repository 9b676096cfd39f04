#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "sgen/dp_oracle.hpp"
#include "sgen/error.hpp"
#include "sgen/feasibility.hpp"

namespace sgen {
namespace {

AgentState car(double x, double y, double theta = 0.0, double length = 4.0) {
  AgentState s{x, y, 0.0, theta};
  s.length = length;
  s.width = 2.0;
  return s;
}

TEST(ViolationH, Branches) {
  const FeasibilityConfig cfg;
  // Fronts 1 m apart along x.
  EXPECT_EQ(violation_h(car(0, 0), car(5, 0), cfg), -1.0);
  EXPECT_EQ(violation_h(car(0, 0), car(3, 0), cfg), 16.0);
  FeasibilityConfig half;
  half.d_th = 0.5;
  // 2.5 - 2.0 is exactly 0.5: the boundary belongs to the violating branch.
  EXPECT_EQ(violation_h(car(0, 0), car(4.5, 0), half), 16.0);
  EXPECT_EQ(violation_h(car(0, 0), car(4.5 + 1e-9, 0), half), -1.0);
}

TEST(ViolationH, TwoValuedOnRandomPairs) {
  const FeasibilityConfig cfg;
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-10, 10);
  for (int i = 0; i < 2000; ++i) {
    const double h = violation_h(car(u(rng), u(rng), u(rng)), car(u(rng), u(rng), u(rng)), cfg);
    EXPECT_TRUE(h == -1.0 || h == 16.0);
  }
}

TEST(Expectile, Examples) {
  EXPECT_NEAR(expectile_loss(1.0, 0.8), 0.2, 1e-15);
  EXPECT_NEAR(expectile_loss(-1.0, 0.8), 0.8, 1e-15);
  for (double u = -5.0; u <= 5.0; u += 0.125) {
    EXPECT_EQ(expectile_loss(u, 0.5), u * u / 2.0);
  }
  EXPECT_EQ(expectile_loss(0.0, 0.8), 0.0);
  EXPECT_LT(expectile_loss(1e-9, 0.8), 1e-18);
  EXPECT_LT(expectile_loss(-1e-9, 0.8), 1e-18);
}

TEST(Expectile, MeanOpMatchesScalar) {
  Tape tape;
  const Tensor2 u(1, 4, {-2.0, -0.5, 0.5, 3.0});
  const Var m = expectile_mean(tape.constant(u), 0.8);
  double expected = 0.0;
  for (double x : u.data()) expected += expectile_loss(x, 0.8);
  EXPECT_NEAR(m.value()(0, 0), expected / 4.0, 1e-15);
}

TEST(QTarget, Examples) {
  EXPECT_EQ(q_target(-1.0, -1.0, 0.99), -1.0);
  EXPECT_EQ(q_target(16.0, 3.0, 0.99), 16.0);
  EXPECT_EQ(q_target(16.0, 16.0, 0.99), 16.0);
  EXPECT_NEAR(q_target(-1.0, 0.5, 0.99), 0.01 * -1.0 + 0.99 * 0.5, 1e-12);
  EXPECT_NEAR(q_target(-1.0, 0.5, 0.99), 0.485, 1e-12);
}

TEST(QTarget, LowerBoundWithEqualityIffNextNotAbove) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-2, 20);
  for (int i = 0; i < 5000; ++i) {
    const double h = u(rng) < 9 ? -1.0 : 16.0;
    const double v = u(rng);
    const double q = q_target(h, v, 0.99);
    const double floor = (1 - 0.99) * h + 0.99 * h;
    EXPECT_GE(q, floor - 1e-12);
    if (v <= h) {
      EXPECT_NEAR(q, floor, 1e-12);
    } else {
      EXPECT_GT(q, floor + 1e-12);
    }
  }
}

TEST(Config, ValidationListsEveryField) {
  FeasibilityConfig c;
  c.gamma = 1.0;
  c.tau = 0.3;
  try {
    c.validate();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kValidation);
    EXPECT_NE(std::string(e.what()).find("gamma"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("tau"), std::string::npos);
  }
}

TEST(RelativeFeatures, EgoFrameRotation) {
  AgentState ego = car(10, 10, kPi / 2);
  ego.v = 3;
  AgentState cbv = car(10, 20, kPi);  // 10 m ahead, heading to the ego's left
  cbv.v = 5;
  const RelativeFeatures f = relative_features(ego, cbv);
  EXPECT_NEAR(f.dx, 10.0, 1e-12);
  EXPECT_NEAR(f.dy, 0.0, 1e-12);
  EXPECT_NEAR(f.sin_dtheta, 1.0, 1e-12);
  EXPECT_NEAR(f.cos_dtheta, 0.0, 1e-12);
  EXPECT_EQ(f.v_ego, 3.0);
  EXPECT_EQ(f.v_cbv, 5.0);
  EXPECT_EQ(f.cbv_half_length, 2.0);
}

TEST(Records, JsonLinesRoundTrip) {
  const BrakingEnv env;
  const auto axes = braking_axes();
  const auto records = braking_dataset(env, axes, 50, 4);
  const auto path = std::filesystem::temp_directory_path() / "sgen_records.jsonl";
  save_records(path, records);
  EXPECT_EQ(load_records(path), records);
  std::filesystem::remove(path);
  try {
    load_records("/nonexistent/sgen.jsonl");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kMissingArtifact);
  }
  EXPECT_THROW(transition_record_from_json({{"s", {1, 2}}}), Error);
}

TEST(BrakingEnv, ExactKinematics) {
  const BrakingEnv env;
  EXPECT_EQ(env.action(0), -5.0);
  EXPECT_EQ(env.action(62), 5.0);
  EXPECT_EQ(env.action(31), 0.0);
  // 10 m/s at -5 m/s^2 over 0.5 s covers 10 * 0.5 - 0.5 * 5 * 0.25 = 4.375 m.
  auto n = env.transition(std::vector<double>{20.0, 10.0}, 0);
  EXPECT_NEAR(n[0], 20.0 - 4.375, 1e-12);
  EXPECT_NEAR(n[1], 7.5, 1e-12);
  // 2 m/s stops after 0.4 m.
  n = env.transition(std::vector<double>{20.0, 2.0}, 0);
  EXPECT_NEAR(n[0], 19.6, 1e-12);
  EXPECT_EQ(n[1], 0.0);
  // Speed cap.
  n = env.transition(std::vector<double>{40.0, 19.0}, 62);
  EXPECT_EQ(n[1], 20.0);
  EXPECT_NEAR(n[0], 40.0 - (19.0 * 0.2 + 0.5 * 5 * 0.04 + 20.0 * 0.3), 1e-12);
}

TEST(BrakingEnv, MaxBrakingPreservesMargin) {
  const BrakingEnv env;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> g(5, 50), v(0, 20);
  for (int i = 0; i < 1000; ++i) {
    const std::vector<double> s{g(rng), v(rng)};
    const auto n = env.transition(s, 0);
    if (n[0] == 0.0) continue;
    EXPECT_NEAR(env.margin(n[0], n[1]), env.margin(s[0], s[1]), 1e-9);
  }
}

TEST(BrakingEnv, FeaturesEncodeGap) {
  const BrakingEnv env;
  const RelativeFeatures f = env.features(7.0, 3.0);
  const AgentState ego{0, 0, 3.0, 0};
  AgentState obs{f.dx, f.dy, 0.0, 0.0};
  EXPECT_NEAR(min_distance(box_of(ego), box_of(obs)), 7.0, 1e-12);
}

class BrakingOracle : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    env_ = new BrakingEnv();
    table_ = new GridValueTable(dp_oracle(*env_, braking_axes(), {}));
  }
  static void TearDownTestSuite() {
    delete table_;
    delete env_;
  }
  static double at(double g, double v) { return table_->interpolate(std::vector<double>{g, v}); }

  static BrakingEnv* env_;
  static GridValueTable* table_;
};

BrakingEnv* BrakingOracle::env_ = nullptr;
GridValueTable* BrakingOracle::table_ = nullptr;

TEST_F(BrakingOracle, ConvergesWithMonotoneResidual) {
  EXPECT_TRUE(table_->converged);
  EXPECT_LT(table_->residual(), 1e-6);
  for (std::size_t k = 1; k < table_->residuals.size(); ++k) {
    EXPECT_LE(table_->residuals[k], table_->residuals[k - 1]);
  }
}

TEST_F(BrakingOracle, ViolatingCellsHoldPenaltyExactly) {
  const GridAxis& ga = table_->axes[0];
  const GridAxis& va = table_->axes[1];
  int checked = 0;
  for (int i = 0; i < ga.nodes(); ++i) {
    if (ga.node(i) > 0.3) break;
    for (int j = 0; j < va.nodes(); ++j) {
      EXPECT_EQ(table_->at(std::vector<int>{i, j}), 16.0);
      ++checked;
    }
  }
  EXPECT_GT(checked, 0);
}

TEST_F(BrakingOracle, FixedPointEquationAtRandomNodes) {
  // Recompute the backup of sampled nodes directly from the environment.
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<int> idx(0, 200);
  const GridAxis& ga = table_->axes[0];
  const GridAxis& va = table_->axes[1];
  for (int k = 0; k < 300; ++k) {
    const std::vector<int> node{idx(rng), idx(rng)};
    const std::vector<double> s{ga.node(node[0]), va.node(node[1])};
    double best = 1e300;
    for (int a = 0; a < env_->action_count(); ++a) {
      best = std::min(best, table_->interpolate(env_->transition(s, a)));
    }
    const double h = env_->violation(s);
    const double backup = (1 - 0.99) * h + 0.99 * std::max(h, best);
    EXPECT_NEAR(table_->at(node), backup, 1e-6);
  }
}

TEST_F(BrakingOracle, ClosedFormExamples) {
  EXPECT_GT(at(5.0, 10.0), 0.0);    // braking needs 10 m
  EXPECT_LE(at(15.0, 10.0), 0.0);
  EXPECT_FALSE(feasible(*table_, std::vector<double>{0.2, 5.0}));
  EXPECT_TRUE(feasible(*table_, std::vector<double>{100.0, 1.0}));  // beyond the grid
}

TEST_F(BrakingOracle, MatchesAnalyticBoundaryOffBoundary) {
  const SignAgreement a = oracle_vs_analytic(*env_, *table_);
  EXPECT_GT(a.compared, 30000);
  EXPECT_EQ(a.agreeing, a.compared);
}

TEST_F(BrakingOracle, FeasibilityMonotoneInGap) {
  const GridAxis& ga = table_->axes[0];
  const GridAxis& va = table_->axes[1];
  for (int j = 0; j < va.nodes(); ++j) {
    bool seen_feasible = false;
    for (int i = 0; i < ga.nodes(); ++i) {
      const bool f = table_->at(std::vector<int>{i, j}) <= 0.0;
      if (seen_feasible) EXPECT_TRUE(f) << "speed node " << j << " gap node " << i;
      seen_feasible = seen_feasible || f;
    }
  }
}

TEST_F(BrakingOracle, JsonExportRoundTrip) {
  const GridValueTable back = GridValueTable::from_json(table_->to_json());
  EXPECT_EQ(back.values, table_->values);
  EXPECT_EQ(back.axes.size(), 2u);
  EXPECT_EQ(back.axes[1].cells, 200);
}

TEST(DpOracle, ReportsNonConvergence) {
  const BrakingEnv env;
  const GridValueTable t = dp_oracle(env, {{"gap", 0, 20, 40}, {"speed", 0, 20, 40}},
                                     {.max_sweeps = 2});
  EXPECT_FALSE(t.converged);
  EXPECT_EQ(t.residuals.size(), 2u);
  EXPECT_GT(t.residual(), 1e-6);
}

TEST(DpOracle, RejectsMismatchedAxes) {
  const BrakingEnv env;
  EXPECT_THROW(dp_oracle(env, {{"gap", 0, 20, 40}}, {}), Error);
}

// Records with a fixed violation value everywhere.
std::vector<TransitionRecord> constant_records(double h, int n) {
  const BrakingEnv env;
  auto records = braking_dataset(env, braking_axes(), n, 11);
  for (auto& r : records) {
    r.h_s = h;
    r.terminal = h > 0;
  }
  return records;
}

TEST(TrainFeasibility, AllSafeConvergesToMinusOne) {
  FeasibilityModel m(FeasibilityNetConfig{.hidden = 32, .seed = 2});
  const auto records = constant_records(-1.0, 1000);
  TrainFeasibilityConfig cfg;
  cfg.epochs = 30;
  cfg.batch_size = 64;
  cfg.target_period = 50;
  const FeasibilityTrainReport r = train_feasibility(m, records, cfg);
  ASSERT_EQ(r.mean_value.size(), 30u);
  EXPECT_NEAR(r.mean_value.back(), -1.0, 0.2);
}

TEST(TrainFeasibility, AllViolatingAbsorbs) {
  FeasibilityModel m(FeasibilityNetConfig{.hidden = 32, .seed = 2});
  const auto records = constant_records(16.0, 1000);
  TrainFeasibilityConfig cfg;
  cfg.epochs = 30;
  cfg.batch_size = 64;
  cfg.learning_rate = 3e-3;
  const FeasibilityTrainReport r = train_feasibility(m, records, cfg);
  EXPECT_NEAR(r.mean_value.back(), 16.0, 0.5);
  EXPECT_FALSE(feasible(m, records.front().s));
}

TEST(TrainFeasibility, DeterministicAndPersistent) {
  const auto records = constant_records(-1.0, 300);
  TrainFeasibilityConfig cfg;
  cfg.epochs = 2;
  FeasibilityModel a(FeasibilityNetConfig{.hidden = 16, .seed = 3});
  FeasibilityModel b(FeasibilityNetConfig{.hidden = 16, .seed = 3});
  const auto ra = train_feasibility(a, records, cfg);
  const auto rb = train_feasibility(b, records, cfg);
  EXPECT_EQ(ra.mean_value, rb.mean_value);
  const auto path = std::filesystem::temp_directory_path() / "sgen_feas.json";
  a.save(path);
  const FeasibilityModel back = FeasibilityModel::load(path);
  std::filesystem::remove(path);
  for (const auto& r : records) EXPECT_EQ(back.value(r.s), a.value(r.s));
}

TEST(TrainFeasibility, Errors) {
  FeasibilityModel m(FeasibilityNetConfig{.hidden = 8});
  try {
    train_feasibility(m, {}, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kEmptyDataset);
  }
  auto records = constant_records(-1.0, 10);
  records[3].h_s = std::nan("");
  try {
    train_feasibility(m, records, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kNonFinite);
  }
}

TEST(FeasibilityModel, GradientCheck) {
  FeasibilityModel m(FeasibilityNetConfig{.hidden = 6, .seed = 4});
  const auto records = constant_records(-1.0, 5);
  std::vector<RelativeFeatures> s;
  std::vector<Control> a;
  for (const auto& r : records) {
    s.push_back(r.s);
    a.push_back(r.a);
  }
  const Tensor2 xv = value_inputs(s);
  const Tensor2 xq = q_inputs(s, a);
  const Tensor2 target(5, 1, {1.0, -1.0, 3.0, 0.5, 16.0});
  auto loss = [&](Tape& t) {
    const Var q = perceptron(t, m.params(), "Q", t.constant(xq));
    const Var v = perceptron(t, m.params(), "V", t.constant(xv));
    return add(mse(q, target), expectile_mean(sub(q, v), 0.8));
  };
  const GradCheckReport r = grad_check(loss, m.params());
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst_parameter << "[" << r.worst_index << "]";
}

}  // namespace
}  // namespace sgen
