#include <gtest/gtest.h>

#include <atomic>
#include <fstream>
#include <sstream>

#include "sgen/checkpoint.hpp"
#include "sgen/error.hpp"
#include "sgen/pipeline.hpp"

namespace sgen {
namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

PipelineConfig tiny(const fs::path& workdir) {
  const nlohmann::json j = {
      {"workdir", workdir.string()},
      {"seed", 5},
      {"synth", {{"train_scenarios", 4}, {"eval_scenarios", 3}, {"duration", 4.0}}},
      {"prior", {{"width", 8}, {"heads", 2}, {"head_dim", 2}, {"history", 3}, {"map_keys", 4}}},
      {"train_prior", {{"epochs", 1}}},
      {"collect", {{"episodes", 6}}},
      {"feasibility_net", {{"hidden", 8}}},
      {"train_feasibility", {{"epochs", 2}, {"batch_size", 16}}},
      {"rollout", {{"horizon", 2.0}}},
      {"evaluate", {{"dump_episodes", true}}}};
  return pipeline_config_from_json(j);
}

TEST(PipelineConfig, DefaultsCarryTableOneValues) {
  const PipelineConfig c = pipeline_config_from_json(nlohmann::json::object());
  EXPECT_EQ(c.prior.layers, 3);
  EXPECT_EQ(c.prior.heads, 8);
  EXPECT_EQ(c.rollout.feasibility.gamma, 0.99);
  EXPECT_EQ(c.rollout.feasibility.tau, 0.8);
  EXPECT_EQ(c.rollout.feasibility.d_th, 0.3);
  EXPECT_EQ(c.rollout.feasibility.penalty, 16.0);
  EXPECT_EQ(c.rollout.resample.n, 20);
  EXPECT_EQ(c.rollout.resample.delta, 50.0);
  EXPECT_EQ(c.train_feasibility.feasibility.tau, 0.8);
}

TEST(PipelineConfig, RoundTripAndHash) {
  const PipelineConfig c = tiny("/tmp/a");
  const PipelineConfig back = pipeline_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back).dump(), to_json(c).dump());
  EXPECT_EQ(config_hash(back), config_hash(c));
  // Workdir and jobs do not change the hash; the seed does.
  PipelineConfig other = c;
  other.workdir = "/tmp/b";
  other.jobs = 4;
  EXPECT_EQ(config_hash(other), config_hash(c));
  other.seed = 6;
  EXPECT_NE(config_hash(other), config_hash(c));
  EXPECT_EQ(config_hash(c).size(), 16u);
}

TEST(PipelineConfig, ListsEveryViolation) {
  const nlohmann::json j = {{"jobs", 0},
                            {"bogus", 1},
                            {"synth", {{"train_scenarios", 0}}},
                            {"rollout", {{"resample", {{"delta", 10.0}}}}},
                            {"train_prior", {{"epochs", 0}}}};
  try {
    pipeline_config_from_json(j);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kValidation);
    const std::string msg = e.what();
    for (const char* field : {"jobs", "bogus", "synth.train_scenarios", "delta",
                              "train_prior.epochs"}) {
      EXPECT_NE(msg.find(field), std::string::npos) << field << " missing from: " << msg;
    }
  }
}

TEST(ParallelFor, CoversEveryIndexAndRethrowsFirstFailure) {
  std::vector<std::atomic<int>> hits(100);
  parallel_for(100, 4, [&](int i) { ++hits[i]; });
  for (auto& h : hits) EXPECT_EQ(h.load(), 1);
  try {
    parallel_for(50, 3, [](int i) {
      if (i == 7 || i == 30) throw std::runtime_error(std::to_string(i));
    });
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_STREQ(e.what(), "7");
  }
}

TEST(Pipeline, MissingArtifactNamesProducer) {
  const fs::path w = fs::temp_directory_path() / "sgen_pipeline_missing";
  fs::remove_all(w);
  const PipelineConfig c = tiny(w);
  try {
    cmd_train_prior(c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kMissingArtifact);
    EXPECT_NE(std::string(e.what()).find("sgen synth"), std::string::npos);
  }
  cmd_synth(c);
  try {
    cmd_collect(c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("sgen train-prior"), std::string::npos);
  }
  fs::remove_all(w);
}

TEST(Pipeline, EndToEndIsReproducible) {
  const fs::path w = fs::temp_directory_path() / "sgen_pipeline_e2e";
  fs::remove_all(w);
  const PipelineConfig c = tiny(w);
  cmd_synth(c);
  cmd_train_prior(c);
  cmd_collect(c);
  cmd_train_feasibility(c);
  cmd_evaluate(c);
  const std::string summary = cmd_report(c);
  EXPECT_NE(summary.find("safer_no_lfr"), std::string::npos) << summary;
  const std::string first = slurp(w / "reports" / "metrics.json");
  const auto metrics = read_json_file(w / "reports" / "metrics.json");
  EXPECT_EQ(metrics.at("config_hash").get<std::string>(), config_hash(c));
  ASSERT_EQ(metrics.at("reports").size(), 3u);
  for (const auto& r : metrics.at("reports")) {
    EXPECT_EQ(r.at("cr").at("total").get<int>(), 3);
    EXPECT_GE(r.at("vj").get<double>(), 0.0);
    EXPECT_LE(r.at("aj").get<double>(), std::log(2.0));
  }
  // Episode dumps load as scenarios.
  const Scenario dumped = load(w / "reports" / "episodes" / "safer" / "stage1_0000.json");
  EXPECT_EQ(dumped.agent_count(), load_split(Workdir{w}, "eval").front().agent_count());

  PipelineConfig again = c;
  again.jobs = 3;
  cmd_evaluate(again);
  EXPECT_EQ(slurp(w / "reports" / "metrics.json"), first);
  EXPECT_EQ(cmd_report(again), summary);
  for (const char* m : {"synth", "train-prior", "collect", "train-feasibility", "evaluate"}) {
    EXPECT_TRUE(fs::exists(w / "manifests" / (std::string(m) + ".json"))) << m;
  }
  fs::remove_all(w);
}

}  // namespace
}  // namespace sgen
