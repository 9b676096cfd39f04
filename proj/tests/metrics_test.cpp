#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "sgen/error.hpp"
#include "sgen/metrics.hpp"

namespace sgen {
namespace {

const double kLn2 = std::log(2.0);

std::vector<EpisodeResult> outcomes(const std::vector<bool>& collided) {
  std::vector<EpisodeResult> out(collided.size());
  for (std::size_t i = 0; i < collided.size(); ++i) out[i].collision = collided[i];
  return out;
}

TEST(Histogram, BinningAndConservation) {
  Histogram h = Histogram::acceleration();
  h.add(-5.0);
  h.add(-100.0);
  h.add(5.0);
  h.add(0.0);
  EXPECT_EQ(h.counts.front(), 2u);
  EXPECT_EQ(h.counts.back(), 1u);
  EXPECT_EQ(h.counts[32], 1u);
  EXPECT_EQ(h.total(), 4u);
  EXPECT_NEAR(h.bin_center(0), -5.0 + 10.0 / 128.0, 1e-15);
  Histogram e = Histogram::velocity();
  EXPECT_TRUE(e.empty());
  try {
    e.normalized();
    FAIL();
  } catch (const Error& err) {
    EXPECT_EQ(err.kind(), ErrorKind::kUndefinedMetric);
  }
}

TEST(Jsd, Examples) {
  const std::vector<double> p{1, 2, 3, 0}, q{0, 0, 0, 5};
  EXPECT_EQ(jsd(p, p), 0.0);
  EXPECT_NEAR(jsd(p, q), kLn2, 1e-12);
  // Two-bin direct summation with m = (0.75, 0.25).
  const double expected = 0.5 * (1.0 * std::log(1.0 / 0.75)) +
                          0.5 * (0.5 * std::log(0.5 / 0.75) + 0.5 * std::log(0.5 / 0.25));
  EXPECT_NEAR(jsd(std::vector<double>{1, 0}, std::vector<double>{0.5, 0.5}), expected, 1e-15);
  EXPECT_NEAR(expected, 0.2157, 1e-4);
  // Scale invariance of the weights.
  EXPECT_NEAR(jsd(std::vector<double>{2, 0}, std::vector<double>{7, 7}), expected, 1e-15);
}

TEST(Jsd, Errors) {
  try {
    jsd(std::vector<double>{0, 0}, std::vector<double>{1, 0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kUndefinedMetric);
  }
  EXPECT_THROW(jsd(std::vector<double>{1}, std::vector<double>{1, 0}), Error);
  EXPECT_THROW(jsd(Histogram::velocity(), Histogram::acceleration()), Error);
}

TEST(Jsd, SymmetricAndBoundedOnRandomHistograms) {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> count(0, 5);
  std::bernoulli_distribution sparse(0.4);
  for (int trial = 0; trial < 2000; ++trial) {
    Histogram a = Histogram::velocity(), b = Histogram::velocity();
    for (int k = 0; k < kHistogramBins; ++k) {
      a.counts[k] = sparse(rng) ? 0 : count(rng);
      b.counts[k] = sparse(rng) ? 0 : count(rng);
    }
    a.counts[trial % kHistogramBins] += 1;
    b.counts[(trial * 7) % kHistogramBins] += 1;
    const double ab = jsd(a, b), ba = jsd(b, a);
    EXPECT_LT(std::abs(ab - ba), 1e-12);
    EXPECT_GE(ab, 0.0);
    EXPECT_LE(ab, kLn2);
    EXPECT_EQ(jsd(a, a), 0.0);
  }
}

TEST(Rates, ExactCounting) {
  EXPECT_EQ(collision_rate(outcomes(std::vector<bool>(10, false))).value(), 0.0);
  EXPECT_EQ(collision_rate(outcomes(std::vector<bool>(10, true))).value(), 1.0);
  const Rate cr = collision_rate(outcomes({true, true, false, true}));
  EXPECT_EQ(cr, (Rate{3, 4}));
  EXPECT_EQ(cr.value(), 0.75);
  EXPECT_EQ(solution_rate(outcomes(std::vector<bool>(5, false))).value(), 1.0);
  std::vector<bool> thirteen_safe(20, true);
  for (int i = 0; i < 13; ++i) thirteen_safe[i * 3 % 20] = false;
  const Rate sr = solution_rate(outcomes(thirteen_safe));
  EXPECT_EQ(sr, (Rate{13, 20}));
  EXPECT_EQ(sr.value(), 13.0 / 20.0);
  EXPECT_THROW(Rate{}.value(), Error);
}

TEST(Rates, ConditionalSolutionRate) {
  const auto s1 = outcomes({true, false, true, true});
  const auto s2 = outcomes({false, true, true, false});
  EXPECT_EQ(conditional_solution_rate(s1, s2), (Rate{2, 3}));
  EXPECT_EQ(solution_rate(s2), (Rate{2, 4}));
  EXPECT_THROW(conditional_solution_rate(s1, outcomes({true})), Error);
}

TEST(Rates, BoxedInEgoHasNoSolution) {
  // The CBV overlaps the ego at the start, so no reactive policy can escape.
  Scenario s;
  s.map.push_back({PolylineKind::kLaneCenter, {{-50, 0}, {100, 0}}});
  Track ego{{0, 0, 5, 0}}, cbv{{1, 0, 5, 0}};
  for (int t = 1; t < 21; ++t) {
    ego.push_back(substep(ego.back(), Control{}, kSimDt));
    cbv.push_back(substep(cbv.back(), Control{}, kSimDt));
  }
  s.agents = {ego, cbv};
  RolloutConfig c;
  c.cbv_mode = CbvMode::kLogReplay;
  c.background = BackgroundMode::kLogReplay;
  std::vector<EpisodeResult> stage2;
  for (int i = 0; i < 3; ++i) stage2.push_back(run_episode(s, {.kind = EgoKind::kReactive}, c, {}));
  EXPECT_EQ(solution_rate(stage2).value(), 0.0);
}

TEST(KinematicHistograms, SelfComparisonAndConservation) {
  std::vector<Scenario> scenarios;
  std::vector<EpisodeResult> episodes;
  RolloutConfig c;
  c.cbv_mode = CbvMode::kLogReplay;
  c.background = BackgroundMode::kLogReplay;
  std::size_t substeps = 0, decisions = 0, log_states = 0, log_steps = 0;
  for (ArchetypeKind kind : kAllArchetypes) {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      scenarios.push_back(synthesize({.kind = kind, .seed = seed}));
      episodes.push_back(run_episode(scenarios.back(), {}, c, {}));
      substeps += episodes.back().trajectories[1].size();
      decisions += episodes.back().cbv_decisions.size();
      log_states += scenarios.back().agents[1].size();
      log_steps += (scenarios.back().agents[1].size() - 1) / kSubstepsPerPlan;
    }
  }
  const KinematicHistograms h = cbv_kinematic_histograms(episodes, scenarios);
  EXPECT_EQ(h.generated_velocity.total(), substeps);
  EXPECT_EQ(h.generated_accel.total(), decisions);
  EXPECT_EQ(h.logged_velocity.total(), log_states);
  EXPECT_EQ(h.logged_accel.total(), log_steps);
  EXPECT_LT(jsd(h.generated_velocity, h.logged_velocity), 0.01);
  EXPECT_LT(jsd(h.generated_accel, h.logged_accel), 0.01);
  EXPECT_THROW(cbv_kinematic_histograms(episodes, std::span(scenarios).first(1)), Error);
}

TEST(KinematicHistograms, BrakingCbvAgainstCruisingLog) {
  Scenario s;
  Track cruise{{0, 0, 10, 0}};
  for (int t = 1; t < 101; ++t) cruise.push_back(substep(cruise.back(), Control{}, kSimDt));
  s.agents = {cruise, cruise};
  EpisodeResult e;
  e.trajectories = {cruise, cruise};
  for (int k = 0; k < 20; ++k) e.cbv_decisions.push_back({tokenize(-5.0, 0.0), 0.0, 0, true});
  const KinematicHistograms h = cbv_kinematic_histograms({&e, 1}, {&s, 1});
  EXPECT_GT(jsd(h.generated_accel, h.logged_accel), 0.3);
}

TEST(MetricsReport, JsonAndTable) {
  MetricsReport r;
  r.mode = "safer";
  r.collisions = {3, 4};
  r.solutions = {1, 4};
  r.conditional_solutions = Rate{1, 3};
  r.vj = 0.1;
  r.aj = 0.2;
  r.config = {{"seed", 1}};
  const MetricsReport back = metrics_report_from_json(to_json(r));
  EXPECT_EQ(to_json(back).dump(), to_json(r).dump());
  EXPECT_EQ(back.cr(), 0.75);
  const std::string table = format_table({&r, 1});
  EXPECT_NE(table.find("safer"), std::string::npos);
  EXPECT_NE(table.find("0.750"), std::string::npos);
  EXPECT_THROW(metrics_report_from_json(nlohmann::json::object()), Error);
}

TEST(MetricsReport, HistogramCsv) {
  Histogram g = Histogram::velocity(), l = Histogram::velocity();
  g.add(1.0);
  l.add(29.9);
  const auto path = std::filesystem::temp_directory_path() / "sgen_hist.csv";
  write_histogram_csv(path, g, l);
  std::ifstream f(path);
  std::string line;
  int rows = 0;
  std::getline(f, line);
  EXPECT_EQ(line, "bin_center,generated,logged");
  while (std::getline(f, line)) ++rows;
  EXPECT_EQ(rows, kHistogramBins);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace sgen
