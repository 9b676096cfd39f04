// Microbenchmarks of the hot paths: integration, box distance, prior decoding,
// candidate selection, feasibility inference and a full episode.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "sgen/feasibility.hpp"
#include "sgen/kinematics.hpp"
#include "sgen/realism_prior.hpp"
#include "sgen/resampler.hpp"
#include "sgen/scenario.hpp"
#include "sgen/simulator.hpp"

namespace {

using namespace sgen;

PriorConfig bench_prior() { return {.width = 32, .heads = 8, .head_dim = 8, .layers = 3}; }

void BM_Step(benchmark::State& state) {
  AgentState s{0, 0, 10, 0.3};
  const MotionToken t = tokenize(0.5, 0.1);
  for (auto _ : state) {
    s = step(s, t, kPlanDt);
    if (s.x > 1e6) s = AgentState{0, 0, 10, 0.3};
    benchmark::DoNotOptimize(s);
  }
}
BENCHMARK(BM_Step);

void BM_MinDistance(benchmark::State& state) {
  const OrientedBox a = box_of({0, 0, 5, 0.2});
  const OrientedBox b = box_of({6, 3, 5, 1.1});
  for (auto _ : state) benchmark::DoNotOptimize(min_distance(a, b));
}
BENCHMARK(BM_MinDistance);

void BM_PriorSessionStep(benchmark::State& state) {
  const PriorModel model(bench_prior());
  const Scenario s = synthesize({.kind = ArchetypeKind::kUnprotectedIntersection, .seed = 3});
  const PriorExample ex = make_prior_example(s);
  for (auto _ : state) {
    PriorSession session(model, ex.scene.segments, ex.scene.agent_count);
    for (const auto& step : ex.scene.steps) benchmark::DoNotOptimize(session.push(step));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(ex.scene.steps.size()) *
                          ex.scene.agent_count);
}
BENCHMARK(BM_PriorSessionStep)->Unit(benchmark::kMillisecond);

void BM_SelectCbvToken(benchmark::State& state) {
  const FeasibilityModel feas(FeasibilityNetConfig{});
  const ValueFunction v_h = value_function(feas);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> logit(0.0, 3.0);
  std::vector<double> dist(kVocabularySize);
  double z = 0.0;
  for (double& x : dist) z += (x = std::exp(logit(rng)));
  for (double& x : dist) x /= z;
  ResampleConfig cfg;
  cfg.n = static_cast<int>(state.range(0));
  const AgentState ego{0, 0, 10, 0}, cbv{15, 3.5, 8, 3.0};
  for (auto _ : state) benchmark::DoNotOptimize(select_cbv_token(dist, ego, cbv, v_h, cfg));
}
BENCHMARK(BM_SelectCbvToken)->Arg(5)->Arg(20)->Arg(100)->Unit(benchmark::kMicrosecond);

void BM_FeasibilityValues(benchmark::State& state) {
  const FeasibilityModel feas(FeasibilityNetConfig{});
  std::vector<RelativeFeatures> states(static_cast<std::size_t>(state.range(0)));
  for (std::size_t i = 0; i < states.size(); ++i) states[i].dx = 1.0 + static_cast<double>(i);
  for (auto _ : state) benchmark::DoNotOptimize(feas.values(states));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_FeasibilityValues)->Arg(20)->Arg(256)->Unit(benchmark::kMicrosecond);

void BM_Episode(benchmark::State& state) {
  const PriorModel prior(bench_prior());
  const FeasibilityModel feas(FeasibilityNetConfig{});
  const Scenario s = synthesize({.kind = ArchetypeKind::kParallelDriving, .seed = 2});
  RolloutConfig rc;
  rc.cbv_mode = CbvMode::kSafer;
  const Models models{&prior, &feas};
  for (auto _ : state) {
    benchmark::DoNotOptimize(run_episode(s, EgoPolicy{.kind = EgoKind::kReactive}, rc, models));
  }
}
BENCHMARK(BM_Episode)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
