#include "sgen/pipeline.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "sgen/checkpoint.hpp"
#include "sgen/error.hpp"

namespace sgen {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- config

void PipelineConfig::propagate() {
  prior.seed = seed;
  train_prior.seed = seed;
  feasibility_net.seed = seed;
  train_feasibility.seed = seed;
  train_feasibility.feasibility = rollout.feasibility;
  rollout.seed = seed;
  collect.rollout = rollout;
  // Collection draws from a stream disjoint from evaluation.
  collect.rollout.seed = seed ^ 0x9E3779B97F4A7C15ull;
}

void PipelineConfig::validate() const {
  std::vector<std::string> bad;
  const auto check = [&](bool ok, const char* field) {
    if (!ok) bad.emplace_back(field);
  };
  check(jobs >= 1, "jobs must be >= 1");
  check(synth.train_scenarios >= 1, "synth.train_scenarios must be >= 1");
  check(synth.eval_scenarios >= 1, "synth.eval_scenarios must be >= 1");
  check(!synth.archetypes.empty(), "synth.archetypes must not be empty");
  check(synth.duration >= kPlanDt &&
            std::abs(synth.duration / kPlanDt - std::round(synth.duration / kPlanDt)) < 1e-9,
        "synth.duration must be a positive multiple of 0.5");
  check(prior.width >= 1, "prior.width must be >= 1");
  check(prior.heads >= 1, "prior.heads must be >= 1");
  check(prior.head_dim >= 1, "prior.head_dim must be >= 1");
  check(prior.layers >= 1, "prior.layers must be >= 1");
  check(prior.history >= 1, "prior.history must be >= 1");
  check(prior.agent_radius > 0.0, "prior.agent_radius must be > 0");
  check(prior.map_radius > 0.0, "prior.map_radius must be > 0");
  check(prior.map_keys >= 0, "prior.map_keys must be >= 0");
  check(train_prior.epochs >= 1, "train_prior.epochs must be >= 1");
  check(train_prior.batch_scenarios >= 1, "train_prior.batch_scenarios must be >= 1");
  check(train_prior.learning_rate > 0.0, "train_prior.learning_rate must be > 0");
  check(train_prior.grad_clip > 0.0, "train_prior.grad_clip must be > 0");
  check(collect.episodes >= 1, "collect.episodes must be >= 1");
  check(collect.adversarial_period >= 1, "collect.adversarial_period must be >= 1");
  check(collect.log_replay_period >= 0, "collect.log_replay_period must be >= 0");
  check(collect.cautious_period >= 0, "collect.cautious_period must be >= 0");
  check(feasibility_net.hidden >= 1, "feasibility_net.hidden must be >= 1");
  check(train_feasibility.epochs >= 1, "train_feasibility.epochs must be >= 1");
  check(train_feasibility.batch_size >= 1, "train_feasibility.batch_size must be >= 1");
  check(train_feasibility.learning_rate > 0.0, "train_feasibility.learning_rate must be > 0");
  check(train_feasibility.final_lr_fraction > 0.0 && train_feasibility.final_lr_fraction <= 1.0,
        "train_feasibility.final_lr_fraction must be in (0, 1]");
  check(train_feasibility.grad_clip > 0.0, "train_feasibility.grad_clip must be > 0");
  check(train_feasibility.target_period >= 1, "train_feasibility.target_period must be >= 1");
  check(!evaluate.modes.empty(), "evaluate.modes must not be empty");
  check(oracle.dp.gamma > 0.0 && oracle.dp.gamma < 1.0, "oracle.dp.gamma must be in (0, 1)");
  check(oracle.dp.tolerance > 0.0, "oracle.dp.tolerance must be > 0");
  check(oracle.dp.max_sweeps >= 1, "oracle.dp.max_sweeps must be >= 1");
  try {
    rollout.validate();
  } catch (const Error& e) {
    bad.emplace_back(e.what());
  }
  if (!bad.empty()) {
    std::string msg = "invalid config:";
    for (const auto& b : bad) msg += "\n  " + b;
    throw Error(ErrorKind::kValidation, msg);
  }
}

namespace {

nlohmann::json synth_json(const SynthConfig& s) {
  nlohmann::json kinds = nlohmann::json::array();
  for (ArchetypeKind k : s.archetypes) kinds.push_back(to_string(k));
  return {{"train_scenarios", s.train_scenarios},
          {"eval_scenarios", s.eval_scenarios},
          {"archetypes", kinds},
          {"duration", s.duration}};
}

nlohmann::json evaluate_json(const EvaluateConfig& e) {
  nlohmann::json modes = nlohmann::json::array();
  for (CbvMode m : e.modes) modes.push_back(to_string(m));
  return {{"modes", modes}, {"sr_conditional", e.sr_conditional}, {"dump_episodes", e.dump_episodes}};
}

nlohmann::json oracle_json(const OracleConfig& o) {
  return {{"dp",
           {{"gamma", o.dp.gamma}, {"tolerance", o.dp.tolerance}, {"max_sweeps", o.dp.max_sweeps}}}};
}

nlohmann::json without_seed(nlohmann::json j) {
  j.erase("seed");
  return j;
}

// Keys present in `given` but not in `defaults`, recursing into objects.
void unknown_keys(const nlohmann::json& given, const nlohmann::json& defaults,
                  const std::string& prefix, std::vector<std::string>& out) {
  if (!given.is_object()) return;
  for (const auto& [k, v] : given.items()) {
    const std::string name = prefix.empty() ? k : prefix + "." + k;
    if (!defaults.contains(k)) {
      out.push_back(name + ": unknown key");
    } else if (v.is_object() && defaults.at(k).is_object()) {
      unknown_keys(v, defaults.at(k), name, out);
    }
  }
}

}  // namespace

nlohmann::json to_json(const PipelineConfig& c) {
  nlohmann::json collect = to_json(c.collect);
  collect.erase("rollout");
  nlohmann::json train_feas = to_json(c.train_feasibility);
  train_feas.erase("feasibility");
  train_feas.erase("seed");
  return {{"workdir", c.workdir.string()},
          {"seed", c.seed},
          {"jobs", c.jobs},
          {"synth", synth_json(c.synth)},
          {"prior", without_seed(to_json(c.prior))},
          {"train_prior", without_seed(to_json(c.train_prior))},
          {"collect", collect},
          {"feasibility_net", {{"hidden", c.feasibility_net.hidden}}},
          {"train_feasibility", train_feas},
          {"rollout", without_seed(to_json(c.rollout))},
          {"evaluate", evaluate_json(c.evaluate)},
          {"oracle", oracle_json(c.oracle)}};
}

PipelineConfig pipeline_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(ErrorKind::kValidation, "invalid config: not a JSON object");
  PipelineConfig c;
  std::vector<std::string> bad;
  unknown_keys(j, to_json(PipelineConfig{}), "", bad);
  const auto section = [&](const char* name, const auto& parse) {
    if (!j.contains(name)) return;
    try {
      parse(j.at(name));
    } catch (const Error& e) {
      bad.push_back(std::string(name) + ": " + e.what());
    } catch (const nlohmann::json::exception& e) {
      bad.push_back(std::string(name) + ": " + e.what());
    }
  };
  section("workdir", [&](const nlohmann::json& v) { c.workdir = v.get<std::string>(); });
  section("seed", [&](const nlohmann::json& v) { c.seed = v.get<std::uint64_t>(); });
  section("jobs", [&](const nlohmann::json& v) { c.jobs = v.get<int>(); });
  section("synth", [&](const nlohmann::json& v) {
    c.synth.train_scenarios = v.value("train_scenarios", c.synth.train_scenarios);
    c.synth.eval_scenarios = v.value("eval_scenarios", c.synth.eval_scenarios);
    c.synth.duration = v.value("duration", c.synth.duration);
    if (v.contains("archetypes")) {
      c.synth.archetypes.clear();
      for (const auto& k : v.at("archetypes")) {
        c.synth.archetypes.push_back(archetype_from_string(k.get<std::string>()));
      }
    }
  });
  section("prior", [&](const nlohmann::json& v) { c.prior = prior_config_from_json(v); });
  section("train_prior",
          [&](const nlohmann::json& v) { c.train_prior = train_prior_config_from_json(v); });
  section("collect", [&](const nlohmann::json& v) {
    c.collect.episodes = v.value("episodes", c.collect.episodes);
    c.collect.adversarial_period = v.value("adversarial_period", c.collect.adversarial_period);
    c.collect.log_replay_period = v.value("log_replay_period", c.collect.log_replay_period);
    c.collect.cautious_period = v.value("cautious_period", c.collect.cautious_period);
  });
  section("feasibility_net", [&](const nlohmann::json& v) {
    c.feasibility_net.hidden = v.value("hidden", c.feasibility_net.hidden);
  });
  section("train_feasibility", [&](const nlohmann::json& v) {
    c.train_feasibility = train_feasibility_config_from_json(v);
  });
  section("rollout", [&](const nlohmann::json& v) { c.rollout = rollout_config_from_json(v); });
  section("evaluate", [&](const nlohmann::json& v) {
    c.evaluate.sr_conditional = v.value("sr_conditional", c.evaluate.sr_conditional);
    c.evaluate.dump_episodes = v.value("dump_episodes", c.evaluate.dump_episodes);
    if (v.contains("modes")) {
      c.evaluate.modes.clear();
      for (const auto& m : v.at("modes")) {
        c.evaluate.modes.push_back(cbv_mode_from_string(m.get<std::string>()));
      }
    }
  });
  section("oracle", [&](const nlohmann::json& v) {
    if (!v.contains("dp")) return;
    const auto& d = v.at("dp");
    c.oracle.dp.gamma = d.value("gamma", c.oracle.dp.gamma);
    c.oracle.dp.tolerance = d.value("tolerance", c.oracle.dp.tolerance);
    c.oracle.dp.max_sweeps = d.value("max_sweeps", c.oracle.dp.max_sweeps);
  });
  c.propagate();
  try {
    c.validate();
  } catch (const Error& e) {
    bad.emplace_back(e.what());
  }
  if (!bad.empty()) {
    std::string msg = "config has " + std::to_string(bad.size()) + " problem(s):";
    for (const auto& b : bad) msg += "\n  " + b;
    throw Error(ErrorKind::kValidation, msg);
  }
  return c;
}

PipelineConfig load_pipeline_config(const fs::path& path) {
  if (!fs::exists(path)) {
    throw Error(ErrorKind::kValidation, "config file not found: " + path.string());
  }
  nlohmann::json j;
  try {
    j = read_json_file(path);
  } catch (const Error& e) {
    throw Error(ErrorKind::kValidation, std::string("config: ") + e.what());
  }
  return pipeline_config_from_json(j);
}

std::string config_hash(const PipelineConfig& c) {
  nlohmann::json j = to_json(c);
  j.erase("workdir");
  j.erase("jobs");
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

nlohmann::json provenance(const PipelineConfig& c) {
  return {{"config_hash", config_hash(c)}, {"seed", c.seed}, {"code_version", kCodeVersion}};
}

void parallel_for(int n, int jobs, const std::function<void(int)>& fn) {
  const int workers = std::max(1, std::min(jobs, n));
  if (workers == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::mutex mu;
  int failed_at = n;
  std::exception_ptr failure;
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (int i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (i < failed_at) {
            failed_at = i;
            failure = std::current_exception();
          }
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

// ---------------------------------------------------------------- artifacts

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::string numbered(const std::string& stem, int i, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%04d%s", stem.c_str(), i, ext);
  return buf;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  fs::create_directories(path.parent_path());
  write_text_file(path, j.dump(2) + "\n");
}

void write_manifest(const PipelineConfig& c, const std::string& command,
                    const nlohmann::json& outputs) {
  nlohmann::json m = provenance(c);
  m["command"] = command;
  m["outputs"] = outputs;
  write_json(c.workdir / "manifests" / (command + ".json"), m);
}

void require(const fs::path& path, const char* what, const char* command) {
  if (!fs::exists(path)) {
    throw Error(ErrorKind::kMissingArtifact, std::string(what) + " not found at " +
                                                 path.string() + "; run `sgen " + command +
                                                 "` first");
  }
}

}  // namespace

std::vector<Scenario> synthesize_split(const PipelineConfig& c, const std::string& split) {
  const bool train = split == "train";
  const int count = train ? c.synth.train_scenarios : c.synth.eval_scenarios;
  std::vector<Scenario> out(static_cast<std::size_t>(count));
  parallel_for(count, c.jobs, [&](int i) {
    ScenarioArchetype a;
    a.kind = c.synth.archetypes[static_cast<std::size_t>(i) % c.synth.archetypes.size()];
    a.seed = splitmix(c.seed * 2 + (train ? 0 : 1) + splitmix(static_cast<std::uint64_t>(i)));
    a.duration = c.synth.duration;
    out[static_cast<std::size_t>(i)] = synthesize(a);
  });
  return out;
}

std::vector<Scenario> load_split(const Workdir& w, const std::string& split) {
  const fs::path dir = w.scenarios(split);
  require(dir / "index.json", "scenario set", "synth");
  const nlohmann::json index = read_json_file(dir / "index.json");
  std::vector<Scenario> out;
  for (const auto& name : index.at("files")) out.push_back(load(dir / name.get<std::string>()));
  if (out.empty()) throw Error(ErrorKind::kEmptyDataset, "scenario set " + split + " is empty");
  return out;
}

// ---------------------------------------------------------------- evaluation

ModeEvaluation evaluate_mode(std::span<const Scenario> scenarios, const RolloutConfig& rollout,
                             const Models& models, int jobs, bool sr_conditional,
                             const nlohmann::json& config_echo) {
  const int n = static_cast<int>(scenarios.size());
  ModeEvaluation ev;
  ev.stage1.resize(scenarios.size());
  ev.stage2.resize(scenarios.size());
  parallel_for(2 * n, jobs, [&](int k) {
    const int i = k / 2;
    RolloutConfig rc = rollout;
    rc.seed = rollout.seed + static_cast<std::uint64_t>(i);
    const bool reactive = k % 2 == 1;
    EgoPolicy ego;
    ego.kind = reactive ? EgoKind::kReactive : EgoKind::kLogReplay;
    (reactive ? ev.stage2 : ev.stage1)[i] = run_episode(scenarios[i], ego, rc, models);
  });
  ev.report = make_report(to_string(rollout.cbv_mode), ev.stage1, ev.stage2, scenarios,
                          sr_conditional, config_echo);
  ev.histograms = cbv_kinematic_histograms(ev.stage1, scenarios);
  return ev;
}

// ---------------------------------------------------------------- commands

void cmd_synth(const PipelineConfig& c) {
  const Workdir w{c.workdir};
  nlohmann::json outputs = nlohmann::json::object();
  for (const std::string split : {"train", "eval"}) {
    const auto scenarios = synthesize_split(c, split);
    const fs::path dir = w.scenarios(split);
    fs::create_directories(dir);
    nlohmann::json files = nlohmann::json::array();
    for (std::size_t i = 0; i < scenarios.size(); ++i) {
      const std::string name = numbered("scenario", static_cast<int>(i), ".json");
      save(scenarios[i], dir / name);
      files.push_back(name);
    }
    nlohmann::json index = provenance(c);
    index["files"] = files;
    write_json(dir / "index.json", index);
    outputs[split] = (dir / "index.json").string();
  }
  write_manifest(c, "synth", outputs);
}

void cmd_train_prior(const PipelineConfig& c) {
  const Workdir w{c.workdir};
  const auto train = load_split(w, "train");
  const auto eval = load_split(w, "eval");
  std::vector<PriorExample> train_ex, eval_ex;
  for (const auto& s : train) train_ex.push_back(make_prior_example(s));
  for (const auto& s : eval) eval_ex.push_back(make_prior_example(s));
  PriorModel model(c.prior);
  // The held-out set is scored once after training; per-epoch scoring would dominate runtime.
  const PriorTrainReport report = train_prior(model, train_ex, {}, c.train_prior);
  nlohmann::json meta = provenance(c);
  meta["config"] = to_json(c.prior);
  model.save(w.prior_checkpoint(), meta);

  nlohmann::json curve = nlohmann::json::array();
  for (const auto& e : report.epochs) {
    curve.push_back({{"epoch", e.epoch}, {"train_nll", e.train_nll}});
  }
  const PriorEvaluation ev = evaluate_prior(model, eval_ex);
  nlohmann::json out = provenance(c);
  out["epochs"] = curve;
  out["skipped_transitions"] = report.skipped_transitions;
  out["eval"] = {{"nll", ev.nll},
                 {"top1_accuracy", ev.top1_accuracy},
                 {"top20_coverage", ev.top20_coverage},
                 {"targets", ev.targets}};
  const fs::path report_path = w.root / "checkpoints" / "prior_train.json";
  write_json(report_path, out);
  write_manifest(c, "train-prior",
                 {{"checkpoint", w.prior_checkpoint().string()}, {"report", report_path.string()}});
}

void cmd_collect(const PipelineConfig& c) {
  const Workdir w{c.workdir};
  const auto scenarios = load_split(w, "train");
  require(w.prior_checkpoint(), "prior checkpoint", "train-prior");
  const PriorModel prior = PriorModel::load(w.prior_checkpoint());
  const Models models{&prior, nullptr};
  // One episode per worker task, concatenated in episode order.
  std::vector<std::vector<TransitionRecord>> per_episode(static_cast<std::size_t>(c.collect.episodes));
  parallel_for(c.collect.episodes, c.jobs, [&](int e) {
    per_episode[static_cast<std::size_t>(e)] = collect_episode(scenarios, c.collect, models, e);
  });
  std::vector<TransitionRecord> records;
  for (auto& r : per_episode) records.insert(records.end(), r.begin(), r.end());
  fs::create_directories(w.dataset().parent_path());
  save_records(w.dataset(), records);
  std::size_t violating = 0, terminal = 0;
  for (const auto& r : records) {
    violating += r.h_s > 0.0 ? 1 : 0;
    terminal += r.terminal ? 1 : 0;
  }
  nlohmann::json stats = provenance(c);
  stats["records"] = records.size();
  stats["violating"] = violating;
  stats["terminal"] = terminal;
  stats["episodes"] = c.collect.episodes;
  const fs::path stats_path = w.root / "datasets" / "offline_stats.json";
  write_json(stats_path, stats);
  write_manifest(c, "collect", {{"dataset", w.dataset().string()}, {"stats", stats_path.string()}});
}

void cmd_train_feasibility(const PipelineConfig& c) {
  const Workdir w{c.workdir};
  require(w.dataset(), "offline dataset", "collect");
  const auto records = load_records(w.dataset());
  FeasibilityModel model(c.feasibility_net);
  const FeasibilityTrainReport report = train_feasibility(model, records, c.train_feasibility);
  nlohmann::json meta = provenance(c);
  model.save(w.feasibility_checkpoint(), meta);
  nlohmann::json out = provenance(c);
  out["mean_value"] = report.mean_value;
  out["q_loss"] = report.q_loss;
  out["v_loss"] = report.v_loss;
  out["steps"] = report.steps;
  const fs::path report_path = w.root / "checkpoints" / "feasibility_train.json";
  write_json(report_path, out);
  std::ostringstream csv;
  csv << "epoch,mean_value,q_loss,v_loss\n";
  for (std::size_t e = 0; e < report.mean_value.size(); ++e) {
    csv << e + 1 << ',' << report.mean_value[e] << ',' << report.q_loss[e] << ','
        << report.v_loss[e] << '\n';
  }
  const fs::path csv_path = w.root / "checkpoints" / "feasibility_mean_value.csv";
  write_text_file(csv_path, csv.str());
  write_manifest(c, "train-feasibility", {{"checkpoint", w.feasibility_checkpoint().string()},
                                          {"report", report_path.string()},
                                          {"curve", csv_path.string()}});
}

void cmd_oracle(const PipelineConfig& c) {
  const Workdir w{c.workdir};
  const BrakingEnv env(c.rollout.feasibility);
  const auto axes = braking_axes();
  const GridValueTable table = dp_oracle(env, axes, c.oracle.dp);
  const SignAgreement analytic = oracle_vs_analytic(env, table);
  fs::create_directories(w.oracle_dir());
  nlohmann::json grid = provenance(c);
  grid["table"] = table.to_json();
  write_json(w.oracle_dir() / "braking_grid.json", grid);

  // Feasibility map: one row per node with the oracle value and the closed-form sign.
  const bool have_model = fs::exists(w.feasibility_checkpoint());
  std::optional<FeasibilityModel> model;
  if (have_model) model = FeasibilityModel::load(w.feasibility_checkpoint());
  std::ostringstream csv;
  csv << "gap,speed,oracle_value,analytic_feasible" << (model ? ",learned_value" : "") << '\n';
  for (int i = 0; i < axes[0].nodes(); ++i) {
    for (int j = 0; j < axes[1].nodes(); ++j) {
      const double g = axes[0].node(i), v = axes[1].node(j);
      const std::array<int, 2> node{i, j};
      csv << g << ',' << v << ',' << table.at(node) << ',' << (env.margin(g, v) >= 0.0 ? 1 : 0);
      if (model) csv << ',' << model->value(env.features(g, v));
      csv << '\n';
    }
  }
  write_text_file(w.oracle_dir() / "feasibility_map.csv", csv.str());

  nlohmann::json report = provenance(c);
  report["converged"] = table.converged;
  report["sweeps"] = table.residuals.size();
  report["residual"] = table.residual();
  report["analytic_agreement"] = {{"compared", analytic.compared},
                                  {"agreeing", analytic.agreeing},
                                  {"fraction", analytic.fraction()}};
  if (model) {
    const SignAgreement learned = model_vs_oracle(env, table, *model);
    report["learned_agreement"] = {{"compared", learned.compared},
                                   {"agreeing", learned.agreeing},
                                   {"fraction", learned.fraction()}};
  }
  write_json(w.oracle_dir() / "oracle_report.json", report);
  write_manifest(c, "oracle", {{"grid", (w.oracle_dir() / "braking_grid.json").string()},
                               {"map", (w.oracle_dir() / "feasibility_map.csv").string()},
                               {"report", (w.oracle_dir() / "oracle_report.json").string()}});
}

namespace {

nlohmann::json config_echo(const PipelineConfig& c) {
  nlohmann::json j = to_json(c);
  j.erase("workdir");
  j.erase("jobs");
  return j;
}

nlohmann::json episode_dump(const Scenario& source, const EpisodeResult& e,
                            const nlohmann::json& header) {
  Scenario s;
  s.map = source.map;
  s.agents = e.trajectories;
  s.ego_index = e.ego_index;
  s.cbv_index = e.cbv_index;
  nlohmann::json j = to_json(s);
  nlohmann::json results = to_json(e);
  results.erase("trajectories");
  j["results"] = results;
  j["provenance"] = header;
  return j;
}

}  // namespace

void cmd_evaluate(const PipelineConfig& c) {
  const Workdir w{c.workdir};
  const auto scenarios = load_split(w, "eval");
  const bool needs_prior = true;
  const bool needs_feas = std::find(c.evaluate.modes.begin(), c.evaluate.modes.end(),
                                    CbvMode::kSafer) != c.evaluate.modes.end();
  std::optional<PriorModel> prior;
  std::optional<FeasibilityModel> feas;
  if (needs_prior) {
    require(w.prior_checkpoint(), "prior checkpoint", "train-prior");
    prior = PriorModel::load(w.prior_checkpoint());
  }
  if (needs_feas) {
    require(w.feasibility_checkpoint(), "feasibility checkpoint", "train-feasibility");
    feas = FeasibilityModel::load(w.feasibility_checkpoint());
  }
  const Models models{prior ? &*prior : nullptr, feas ? &*feas : nullptr};
  const nlohmann::json header = provenance(c);
  nlohmann::json reports = nlohmann::json::array();
  std::vector<MetricsReport> table;
  fs::create_directories(w.reports());
  for (CbvMode mode : c.evaluate.modes) {
    RolloutConfig rc = c.rollout;
    rc.cbv_mode = mode;
    const ModeEvaluation ev =
        evaluate_mode(scenarios, rc, models, c.jobs, c.evaluate.sr_conditional, config_echo(c));
    reports.push_back(to_json(ev.report));
    table.push_back(ev.report);
    const std::string name = to_string(mode);
    write_histogram_csv(w.reports() / ("velocity_" + name + ".csv"),
                        ev.histograms.generated_velocity, ev.histograms.logged_velocity);
    write_histogram_csv(w.reports() / ("acceleration_" + name + ".csv"),
                        ev.histograms.generated_accel, ev.histograms.logged_accel);
    if (c.evaluate.dump_episodes) {
      const fs::path dir = w.reports() / "episodes" / name;
      fs::create_directories(dir);
      for (std::size_t i = 0; i < scenarios.size(); ++i) {
        const int id = static_cast<int>(i);
        write_text_file(dir / numbered("stage1", id, ".json"),
                        episode_dump(scenarios[i], ev.stage1[i], header).dump() + "\n");
        write_text_file(dir / numbered("stage2", id, ".json"),
                        episode_dump(scenarios[i], ev.stage2[i], header).dump() + "\n");
      }
    }
  }
  nlohmann::json out = header;
  out["reports"] = reports;
  write_json(w.reports() / "metrics.json", out);
  write_text_file(w.reports() / "metrics.txt", format_table(table));
  write_manifest(c, "evaluate", {{"metrics", (w.reports() / "metrics.json").string()},
                                 {"table", (w.reports() / "metrics.txt").string()}});
}

std::string cmd_report(const PipelineConfig& c) {
  const Workdir w{c.workdir};
  std::ostringstream out;
  char line[256];
  out << "config " << config_hash(c) << "  seed " << c.seed << "  version " << kCodeVersion << "\n\n";
  bool any = false;
  const fs::path prior_report = w.root / "checkpoints" / "prior_train.json";
  if (fs::exists(prior_report)) {
    any = true;
    const auto j = read_json_file(prior_report);
    const auto& ev = j.at("eval");
    std::snprintf(line, sizeof line,
                  "prior: eval NLL %.4f, top-1 %.3f, top-20 coverage %.3f over %d targets\n",
                  ev.at("nll").get<double>(), ev.at("top1_accuracy").get<double>(),
                  ev.at("top20_coverage").get<double>(), ev.at("targets").get<int>());
    out << line;
  }
  const fs::path stats = w.root / "datasets" / "offline_stats.json";
  if (fs::exists(stats)) {
    any = true;
    const auto j = read_json_file(stats);
    out << "offline dataset: " << j.at("records").get<std::size_t>() << " records, "
        << j.at("violating").get<std::size_t>() << " violating, "
        << j.at("episodes").get<int>() << " episodes\n";
  }
  const fs::path feas_report = w.root / "checkpoints" / "feasibility_train.json";
  if (fs::exists(feas_report)) {
    any = true;
    const auto mv = read_json_file(feas_report).at("mean_value").get<std::vector<double>>();
    if (!mv.empty()) {
      const double drift = mv.size() > 1 ? std::abs(mv.back() - mv[mv.size() - 2]) : 0.0;
      std::snprintf(line, sizeof line,
                    "feasibility: final mean V_h %.4f, last-epoch drift %.4f over %zu epochs\n",
                    mv.back(), drift, mv.size());
      out << line;
    }
  }
  const fs::path oracle_report = w.oracle_dir() / "oracle_report.json";
  if (fs::exists(oracle_report)) {
    any = true;
    const auto j = read_json_file(oracle_report);
    std::snprintf(line, sizeof line, "oracle: residual %.3g, analytic sign agreement %.4f",
                  j.at("residual").get<double>(),
                  j.at("analytic_agreement").at("fraction").get<double>());
    out << line;
    if (j.contains("learned_agreement")) {
      std::snprintf(line, sizeof line, ", learned %.4f",
                    j.at("learned_agreement").at("fraction").get<double>());
      out << line;
    }
    out << '\n';
  }
  const fs::path metrics = w.reports() / "metrics.json";
  if (fs::exists(metrics)) {
    any = true;
    std::vector<MetricsReport> reports;
    const nlohmann::json j = read_json_file(metrics);
    for (const auto& r : j.at("reports")) {
      reports.push_back(metrics_report_from_json(r));
    }
    out << '\n' << format_table(reports);
  }
  if (!any) {
    throw Error(ErrorKind::kMissingArtifact,
                "no reports in " + w.root.string() + "; run `sgen evaluate` first");
  }
  const std::string text = out.str();
  fs::create_directories(w.reports());
  write_text_file(w.reports() / "summary.txt", text);
  return text;
}

}  // namespace sgen
