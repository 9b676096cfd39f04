#include <gtest/gtest.h>

#include <cmath>
#include <algorithm>
#include <filesystem>
#include <random>

#include "sgen/error.hpp"
#include "sgen/scenario.hpp"

namespace sgen {
namespace {

ErrorKind load_error(const nlohmann::json& j) {
  try {
    scenario_from_json(j);
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected a load error";
  return ErrorKind::kValidation;
}

Scenario two_agent_scenario() {
  Scenario s;
  s.map.push_back({PolylineKind::kLaneCenter, {{-50, 0}, {50, 0}}});
  Track a, b;
  AgentState sa{0, 0, 10, 0};
  AgentState sb{0, 10, 10, 0};
  for (int i = 0; i < 11; ++i) {
    a.push_back(sa);
    b.push_back(sb);
    sa = step(sa, Control{}, kSimDt);
    sb = step(sb, Control{}, kSimDt);
  }
  s.agents = {a, b};
  return s;
}

TEST(Synthesize, ParallelDrivingSeed1) {
  const Scenario s = synthesize({.kind = ArchetypeKind::kParallelDriving, .seed = 1});
  EXPECT_TRUE(check_consistency(s).empty());
  int lanes = 0;
  for (const auto& p : s.map) lanes += p.kind == PolylineKind::kLaneCenter;
  EXPECT_GE(lanes, 2);
  const AgentState& ego = s.agents[s.ego_index][0];
  const AgentState& cbv = s.agents[s.cbv_index][0];
  for (const AgentState* a : {&ego, &cbv}) {
    EXPECT_GE(a->v, 8.0 - 1e-9);
    EXPECT_LE(a->v, 12.0 + 1e-9);
  }
  EXPECT_NEAR(std::abs(wrap_angle(ego.theta - cbv.theta)), 0.0, 1e-9);
  EXPECT_LT(std::abs(cbv.x - ego.x), 10.0);
  EXPECT_GE(s.agent_count(), 4);
  EXPECT_LE(s.agent_count(), 8);
}

TEST(Synthesize, PullOutStartsParked) {
  const Scenario s = synthesize({.kind = ArchetypeKind::kPullOut, .seed = 7});
  EXPECT_TRUE(check_consistency(s).empty());
  EXPECT_EQ(s.agents[s.cbv_index][0].v, 0.0);
  // Adjacent to the ego lane: within two lane widths laterally.
  EXPECT_LT(std::abs(s.agents[s.cbv_index][0].y - s.agents[s.ego_index][0].y), 7.0);
}

TEST(Synthesize, DeterministicAndConsistentForAllArchetypes) {
  for (ArchetypeKind kind : kAllArchetypes) {
    for (std::uint64_t seed = 1; seed <= 8; ++seed) {
      const ScenarioArchetype arch{.kind = kind, .seed = seed};
      const Scenario a = synthesize(arch);
      const Scenario b = synthesize(arch);
      EXPECT_EQ(dump_scenario(a), dump_scenario(b));
      const auto v = check_consistency(a);
      EXPECT_TRUE(v.empty()) << to_string(kind) << " seed " << seed << ": "
                             << (v.empty() ? "" : v.front().message);
      EXPECT_EQ(a.duration_steps(), 101);
      for (const Track& t : a.agents) {
        for (const AgentState& st : t) {
          EXPECT_GE(st.v, 0.0);
          EXPECT_LE(st.v, kMaxSpeed);
          EXPECT_GT(st.theta, -kPi);
          EXPECT_LE(st.theta, kPi);
        }
      }
    }
  }
}

TEST(Synthesize, DifferentSeedsDiffer) {
  const Scenario a = synthesize({.kind = ArchetypeKind::kTurning, .seed = 1});
  const Scenario b = synthesize({.kind = ArchetypeKind::kTurning, .seed = 2});
  EXPECT_NE(dump_scenario(a), dump_scenario(b));
}

TEST(Consistency, TeleportIsOneViolation) {
  Scenario s = two_agent_scenario();
  for (std::size_t i = 6; i < s.agents[1].size(); ++i) s.agents[1][i].x += 10.0;
  const auto v = check_consistency(s);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].agent, 1);
  EXPECT_EQ(v[0].step, 5);
}

TEST(Consistency, InitialOverlapIsOneViolation) {
  Scenario s = two_agent_scenario();
  for (AgentState& st : s.agents[1]) st.y -= 9.0;  // 1 m lateral offset, 2 m wide boxes
  const auto v = check_consistency(s);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].step, 0);
}

TEST(RecoverToken, InvertsStepOnGrid) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> tok(0, kVocabularySize - 1);
  std::uniform_real_distribution<double> speed(0.0, 25.0);
  for (int i = 0; i < 500; ++i) {
    const AgentState s{1.0, -2.0, speed(rng), 0.4};
    const MotionToken t{tok(rng)};
    const AgentState n = step(s, t, kPlanDt);
    const MotionToken r = recover_token(s, n, kPlanDt);
    const TransitionError e = transition_error(s, n, r, kPlanDt);
    EXPECT_LT(e.position, 1e-9);
    EXPECT_LT(e.heading, 1e-9);
  }
}

TEST(RecoverToken, StoppedAgentGetsZeroAccel) {
  const AgentState s{0.0, 0.0, 0.0, 0.3};
  const MotionToken r = recover_token(s, step(s, tokenize(-3.0, 0.0), kPlanDt), kPlanDt);
  EXPECT_EQ(r, tokenize(0.0, 0.0));
}

TEST(ScenarioFile, RoundTripIsStructurallyEqual) {
  const auto path = std::filesystem::temp_directory_path() / "sgen_scenario_rt.json";
  for (ArchetypeKind kind : kAllArchetypes) {
    const Scenario s = synthesize({.kind = kind, .seed = 11});
    save(s, path);
    const Scenario back = load(path);
    EXPECT_TRUE(structurally_equal(s, back));
    EXPECT_EQ(dump_scenario(s), dump_scenario(back));
  }
  std::filesystem::remove(path);
}

TEST(ScenarioFile, DistinctLoadErrors) {
  const nlohmann::json good = to_json(two_agent_scenario());
  EXPECT_NO_THROW(scenario_from_json(good));

  nlohmann::json same = good;
  same["cbv_index"] = same["ego_index"];
  EXPECT_EQ(load_error(same), ErrorKind::kValidation);

  nlohmann::json version = good;
  version["version"] = "99";
  EXPECT_EQ(load_error(version), ErrorKind::kUnsupportedVersion);

  nlohmann::json range = good;
  range["cbv_index"] = 7;
  EXPECT_EQ(load_error(range), ErrorKind::kValidation);

  nlohmann::json bad_state = good;
  bad_state["agents"][0][0] = nlohmann::json::array({1, 2, 3});
  EXPECT_EQ(load_error(bad_state), ErrorKind::kMalformedFile);

  EXPECT_EQ(load_error(nlohmann::json::array()), ErrorKind::kMalformedFile);

  try {
    load("/nonexistent/sgen/scenario.json");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kMissingArtifact);
  }
}

TEST(Neighborhoods, LoneAgentHasNone) {
  const std::vector<AgentState> states{AgentState{}};
  const Neighborhood n = neighborhoods(states, 0, {});
  EXPECT_TRUE(n.agents.empty());
  EXPECT_TRUE(n.segments.empty());
}

TEST(Neighborhoods, RadiusAndSymmetry) {
  const std::vector<AgentState> states{{0, 0}, {10, 0}, {60, 0}, {30, 40}};
  const Neighborhood n0 = neighborhoods(states, 0, {});
  EXPECT_EQ(n0.agents, (std::vector<int>{1, 3}));  // (30, 40) is exactly 50 m
  const Neighborhood n1 = neighborhoods(states, 1, {});
  EXPECT_EQ(n1.agents, (std::vector<int>{0, 2, 3}));
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-80, 80);
  std::vector<AgentState> many(30);
  for (auto& s : many) s = {u(rng), u(rng)};
  for (int i = 0; i < 30; ++i) {
    for (int j : neighborhoods(many, i, {}).agents) {
      const auto back = neighborhoods(many, j, {}).agents;
      EXPECT_TRUE(std::find(back.begin(), back.end(), i) != back.end());
    }
  }
}

TEST(Neighborhoods, MapSegmentsWithinRadius) {
  const std::vector<MapPolyline> map{{PolylineKind::kRoadEdge, {{-100, 5}, {100, 5}}}};
  const auto segs = map_segments(map);
  EXPECT_EQ(segs.size(), 100u);
  for (const auto& s : segs) EXPECT_LE(s.length(), kMapResampleSpacing + 1e-9);
  const std::vector<AgentState> states{{0, 0}};
  const Neighborhood n = neighborhoods(states, 0, segs);
  for (std::size_t i = 0; i < segs.size(); ++i) {
    const bool near = point_segment_distance({0, 0}, segs[i].a, segs[i].b) <= kMapRadius;
    const bool listed = std::find(n.segments.begin(), n.segments.end(), static_cast<int>(i)) !=
                        n.segments.end();
    EXPECT_EQ(near, listed);
  }
}

}  // namespace
}  // namespace sgen
