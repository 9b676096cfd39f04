// Acceptance suite: one PASS/FAIL line per criterion, with the measured values.
// Exit code 0 only when every selected criterion passes.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sgen/checkpoint.hpp"
#include "sgen/dp_oracle.hpp"
#include "sgen/feasibility.hpp"
#include "sgen/kinematics.hpp"
#include "sgen/metrics.hpp"
#include "sgen/pipeline.hpp"
#include "sgen/realism_prior.hpp"
#include "sgen/resampler.hpp"
#include "sgen/scenario.hpp"

namespace fs = std::filesystem;
using namespace sgen;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------- 1 vocabulary

Outcome vocabulary() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> a(-5.0, 5.0), psi(-1.5, 1.5);
  double worst_a = 0.0, worst_psi = 0.0;
  for (int k = 0; k < 1000; ++k) {
    const double x = a(rng), y = psi(rng);
    const Control c = detokenize(tokenize(x, y));
    worst_a = std::max(worst_a, std::abs(c.accel - x));
    worst_psi = std::max(worst_psi, std::abs(c.yaw_rate - y));
  }
  std::set<int> seen;
  for (int i = 0; i < kVocabularySize; ++i) seen.insert(tokenize(detokenize(MotionToken{i})).index);
  const double t = seconds_since(t0);
  const bool ok = kVocabularySize == 3969 && seen.size() == 3969u && worst_a <= 5.0 / 63 &&
                  worst_psi <= 1.5 / 63 && t < 1.0;
  return {ok, fmt("|V| %d, max roundtrip error %.5f m/s^2 (<= %.5f), %.5f rad/s (<= %.5f), %.3f s",
                  kVocabularySize, worst_a, 5.0 / 63, worst_psi, 1.5 / 63, t)};
}

// ---------------------------------------------------------------- 2 MDA degeneracy

Tensor2 random_tensor(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor2 t(r, c);
  for (double& v : t.data()) v = n(rng);
  return t;
}

// Plain-loop single-softmax attention with the first query/key projections, followed by
// the output projection.
std::vector<double> standard_attention(const MdaWeights& w, const Tensor2& x, const Tensor2& s,
                                       const MdaPairs& pairs) {
  const int d = w.head_dim, dv = 2 * w.head_dim, h_count = w.heads;
  const std::size_t width = x.cols();
  auto project = [](const double* row, std::size_t n, const Tensor2& m, std::size_t col) {
    double acc = 0.0;
    for (std::size_t k = 0; k < n; ++k) acc += row[k] * m(k, col);
    return acc;
  };
  const std::size_t nq = x.rows();
  std::vector<double> heads(nq * h_count * dv, 0.0);
  for (std::size_t i = 0; i < nq; ++i) {
    const int p0 = pairs.segment_start[i], p1 = pairs.segment_start[i + 1];
    for (int h = 0; h < h_count; ++h) {
      std::vector<double> score;
      for (int p = p0; p < p1; ++p) {
        const double* src = &s.data()[pairs.source[p] * width];
        const double* desc = &pairs.descriptors[p * kDescriptorFeatures];
        double dot = 0.0;
        for (int c = 0; c < d; ++c) {
          const std::size_t col = h * d + c;
          const double q = project(&x.data()[i * width], width, w.wq1->value, col);
          const double k = project(src, width, w.wk1e->value, col) +
                           project(desc, kDescriptorFeatures, w.wk1d->value, col);
          dot += q * k;
        }
        score.push_back(dot / std::sqrt(static_cast<double>(d)));
      }
      if (score.empty()) continue;
      const double mx = *std::max_element(score.begin(), score.end());
      double z = 0.0;
      for (double& e : score) z += (e = std::exp(e - mx));
      for (int p = p0; p < p1; ++p) {
        const double* src = &s.data()[pairs.source[p] * width];
        const double* desc = &pairs.descriptors[p * kDescriptorFeatures];
        for (int c = 0; c < dv; ++c) {
          const std::size_t col = h * dv + c;
          const double v = project(src, width, w.wve->value, col) +
                           project(desc, kDescriptorFeatures, w.wvd->value, col);
          heads[i * h_count * dv + col] += score[p - p0] / z * v;
        }
      }
    }
  }
  const std::size_t out_cols = w.wo->value.cols();
  std::vector<double> out(nq * out_cols, 0.0);
  for (std::size_t i = 0; i < nq; ++i) {
    for (std::size_t c = 0; c < out_cols; ++c) {
      out[i * out_cols + c] =
          project(&heads[i * h_count * dv], h_count * dv, w.wo->value, c);
    }
  }
  return out;
}

Outcome mda_degeneracy() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    std::mt19937_64 rng(seed);
    ParameterStore store;
    const int layer = 1 + static_cast<int>(seed % 3);
    const MdaWeights w = add_mda_weights(store, "m", 16, 4, 3, layer, rng);
    const Tensor2 x = random_tensor(5, 16, rng);
    const Tensor2 s = random_tensor(7, 16, rng);
    MdaPairs pairs;
    pairs.begin_query();
    std::uniform_int_distribution<int> count(1, 6), src(0, 6);
    std::normal_distribution<double> feat(0.0, 1.0);
    for (int q = 0; q < 5; ++q) {
      const int k = count(rng);
      for (int p = 0; p < k; ++p) {
        std::array<double, kDescriptorFeatures> f{};
        for (double& v : f) v = feat(rng);
        pairs.add(src(rng), f);
      }
      pairs.end_query();
    }
    Tape tape;
    const ParamBinder bind(tape, store);
    const MdaOutput o = mda(bind, w, tape.constant(x), tape.constant(s), pairs,
                            {.zero_lambda = true, .head_norm = false});
    const std::vector<double> ref = standard_attention(w, x, s, pairs);
    for (std::size_t i = 0; i < ref.size(); ++i) {
      worst = std::max(worst, std::abs(o.update.value().data()[i] - ref[i]));
    }
  }
  const double t = seconds_since(t0);
  return {worst < 1e-10 && t < 10.0,
          fmt("max abs diff %.3g over 100 instances (< 1e-10), %.2f s", worst, t)};
}

// ---------------------------------------------------------------- 3 lambda schedule

Outcome lambda_schedule() {
  bool monotone = true;
  for (int l = 1; l < 30; ++l) monotone = monotone && lambda_init(l) < lambda_init(l + 1);
  const double l3 = lambda_init(3), ref = 0.8 - 0.6 * std::exp(-0.6);
  const bool ok = lambda_init(1) == 0.2 && monotone && std::abs(l3 - ref) <= 1e-12;
  return {ok, fmt("lambda_init(1) = %.17g, monotone over l = 1..30: %s, |lambda_init(3) - ref| = %.2g",
                  lambda_init(1), monotone ? "yes" : "no", std::abs(l3 - ref))};
}

// ---------------------------------------------------------------- 4 gradient fidelity

Outcome gradient_fidelity() {
  const auto t0 = std::chrono::steady_clock::now();
  PriorModel model(
      {.width = 8, .heads = 2, .head_dim = 2, .layers = 3, .history = 3, .map_keys = 4, .seed = 3});
  Scenario s = synthesize({.kind = ArchetypeKind::kUnprotectedIntersection, .seed = 5});
  s.agents.resize(3);
  for (Track& t : s.agents) t.resize(16);
  const PriorExample ex = make_prior_example(s);
  auto loss = [&](Tape& t) { return prior_loss(ParamBinder(t, model.params()), model, ex); };
  GradCheckOptions opt;
  opt.full_check_limit = 2000;
  opt.min_samples = 400;
  const GradCheckReport r = grad_check(loss, model.params(), opt);
  const double t = seconds_since(t0);
  return {r.max_rel_error < 1e-4 && t < 300.0,
          fmt("%zu tensors, %zu coordinates checked, max rel error %.3g (< 1e-4) at %s, %.1f s",
              model.params().size(), r.coordinates_checked, r.max_rel_error,
              r.worst_parameter.c_str(), t)};
}

// ---------------------------------------------------------------- 5 expectile identities

Outcome expectile_identities() {
  double worst = 0.0;
  for (int k = -200; k <= 200; ++k) {
    const double u = k * 0.05;
    worst = std::max(worst, std::abs(expectile_loss(u, 0.5) - u * u / 2));
  }
  const double a = std::abs(expectile_loss(1.0, 0.8) - 0.2);
  const double b = std::abs(expectile_loss(-1.0, 0.8) - 0.8);
  return {worst <= 1e-15 && a <= 1e-15 && b <= 1e-15,
          fmt("max |loss(u,0.5) - u^2/2| = %.2g, |loss(1,0.8) - 0.2| = %.2g, "
              "|loss(-1,0.8) - 0.8| = %.2g",
              worst, a, b)};
}

// ---------------------------------------------------------------- 6 DP oracle

Outcome dp_vs_analytic(const GridValueTable& table, const BrakingEnv& env, double t) {
  const SignAgreement a = oracle_vs_analytic(env, table);
  const bool ok = a.compared > 0 && a.agreeing == a.compared && table.converged &&
                  table.residual() < 1e-6 && t < 120.0;
  return {ok, fmt("agreement %d/%d off-boundary cells, residual %.2g after %zu sweeps, %.1f s",
                  a.agreeing, a.compared, table.residual(), table.residuals.size(), t)};
}

// ---------------------------------------------------------------- 7 learned LFR

Outcome learned_lfr(const GridValueTable& table, const BrakingEnv& env, const fs::path& out) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto records = braking_dataset(env, braking_axes(), 20000, 3);
  FeasibilityModel model(FeasibilityNetConfig{});
  TrainFeasibilityConfig cfg;
  cfg.epochs = 80;
  const FeasibilityTrainReport r = train_feasibility(model, records, cfg);
  const double t = seconds_since(t0);
  const SignAgreement a = model_vs_oracle(env, table, model);
  const std::size_t n = r.mean_value.size();
  const double drift = n > 1 ? std::abs(r.mean_value[n - 1] - r.mean_value[n - 2]) : 0.0;
  std::ostringstream csv;
  csv << "epoch,mean_value,q_loss,v_loss\n";
  for (std::size_t e = 0; e < n; ++e) {
    csv << e + 1 << ',' << r.mean_value[e] << ',' << r.q_loss[e] << ',' << r.v_loss[e] << '\n';
  }
  fs::create_directories(out);
  write_text_file(out / "braking_mean_value.csv", csv.str());
  return {a.fraction() >= 0.9 && drift < 0.05 && t < 600.0,
          fmt("%zu records, sign agreement %.4f (>= 0.90) on %d cells, last-epoch drift %.4f "
              "(< 0.05), training %.1f s, curve in %s",
              records.size(), a.fraction(), a.compared, drift, t,
              (out / "braking_mean_value.csv").string().c_str())};
}

// ---------------------------------------------------------------- 8 resampler hierarchy

Outcome resampler_hierarchy() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> pos(-25, 25), speed(0, 15), head(-kPi, kPi), coef(-1, 1);
  std::normal_distribution<double> logit(0.0, 3.0);
  const ResampleConfig cfg;
  int sets = 0, feasible_picks = 0, minimal_picks = 0, in_region = 0;
  std::vector<double> dist(kVocabularySize);
  std::vector<int> order(kVocabularySize);
  while (sets < 10000) {
    double z = 0.0;
    for (double& x : dist) z += (x = std::exp(logit(rng)));
    for (double& x : dist) x /= z;
    const AgentState ego{0, 0, speed(rng), head(rng)};
    const AgentState cbv{pos(rng), pos(rng), speed(rng), head(rng)};
    const double a = coef(rng), b = coef(rng), c = coef(rng) * 4;
    auto value = [=](const RelativeFeatures& f) { return a * f.dx + b * f.dy + c; };
    const ValueFunction v_h = [&](std::span<const RelativeFeatures> s) {
      std::vector<double> out;
      for (const auto& f : s) out.push_back(value(f));
      return out;
    };
    // Reference: top-n by probability (lowest index on ties), then the hierarchy.
    for (int i = 0; i < kVocabularySize; ++i) order[i] = i;
    std::partial_sort(order.begin(), order.begin() + cfg.n, order.end(), [&](int x, int y) {
      return dist[x] > dist[y] || (dist[x] == dist[y] && x < y);
    });
    AgentState ego_next = ego;
    ego_next.x += ego.v * std::cos(ego.theta) * kPlanDt;
    ego_next.y += ego.v * std::sin(ego.theta) * kPlanDt;
    double best = std::numeric_limits<double>::infinity();
    bool any = false, ambiguous = false;
    for (int k = 0; k < cfg.n; ++k) {
      const AgentState next = step(cbv, MotionToken{order[k]}, kPlanDt);
      const double v = value(relative_features(ego_next, next));
      ambiguous = ambiguous || std::abs(v) < 1e-9;
      if (v <= 0.0) {
        any = true;
        best = std::min(best, std::min(min_distance(box_of(ego_next), box_of(next)),
                                       cfg.adversary_range));
      }
    }
    if (!any || ambiguous) continue;
    ++sets;
    const MotionToken t = select_cbv_token(dist, ego, cbv, v_h, cfg);
    const AgentState next = step(cbv, t, kPlanDt);
    if (value(relative_features(ego_next, next)) <= 0.0) ++feasible_picks;
    const double d = std::min(min_distance(box_of(ego_next), box_of(next)), cfg.adversary_range);
    if (std::abs(d - best) <= 1e-9) ++minimal_picks;
    if (std::find(order.begin(), order.begin() + cfg.n, t.index) != order.begin() + cfg.n) {
      ++in_region;
    }
  }
  const double t = seconds_since(t0);
  return {feasible_picks == sets && minimal_picks == sets && in_region == sets && t < 30.0,
          fmt("%d sets: feasible %d, minimum feasible distance %d, in trust region %d, %.1f s",
              sets, feasible_picks, minimal_picks, in_region, t)};
}

// ---------------------------------------------------------------- 9-11 desk-scale ablations

struct DeskRun {
  bool ok = false;
  std::string error;
  double seconds = 0.0;
  MetricsReport safer, no_lfr, safer_n5, safer_n100;
  int decisions = 0;
  int outside_top20 = 0;
};

DeskRun desk_run(const fs::path& config_path, const fs::path& workdir, int jobs) {
  DeskRun run;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    PipelineConfig c = load_pipeline_config(config_path);
    c.workdir = workdir;
    c.jobs = jobs;
    c.propagate();
    c.validate();
    fs::remove_all(workdir);
    cmd_synth(c);
    cmd_train_prior(c);
    cmd_collect(c);
    cmd_train_feasibility(c);
    const Workdir w{workdir};
    const PriorModel prior = PriorModel::load(w.prior_checkpoint());
    const FeasibilityModel feas = FeasibilityModel::load(w.feasibility_checkpoint());
    const Models models{&prior, &feas};
    const auto scenarios = load_split(w, "eval");
    auto evaluate = [&](CbvMode mode, int n) {
      RolloutConfig rc = c.rollout;
      rc.cbv_mode = mode;
      rc.resample.n = n;
      return evaluate_mode(scenarios, rc, models, c.jobs, false);
    };
    const ModeEvaluation safer = evaluate(CbvMode::kSafer, 20);
    run.safer = safer.report;
    run.no_lfr = evaluate(CbvMode::kSaferNoLfr, 20).report;
    run.seconds = seconds_since(t0);
    for (const auto* stage : {&safer.stage1, &safer.stage2}) {
      for (const EpisodeResult& e : *stage) {
        for (const CbvDecision& d : e.cbv_decisions) {
          ++run.decisions;
          if (d.rank >= 20) ++run.outside_top20;
        }
      }
    }
    run.safer_n5 = evaluate(CbvMode::kSafer, 5).report;
    run.safer_n100 = evaluate(CbvMode::kSafer, 100).report;
    run.ok = true;
  } catch (const std::exception& e) {
    run.error = e.what();
  }
  return run;
}

Outcome lfr_ablation(const DeskRun& r) {
  if (!r.ok) return {false, "desk run failed: " + r.error};
  const double gap = r.safer.sr() - r.no_lfr.sr();
  return {gap >= 0.10 - 1e-12 && r.no_lfr.cr() >= r.safer.cr() && r.seconds < 1800.0,
          fmt("SR safer %.2f vs no-LFR %.2f (gap %.2f >= 0.10), CR no-LFR %.2f >= safer %.2f, "
              "%d scenarios, %.0f s including training",
              r.safer.sr(), r.no_lfr.sr(), gap, r.no_lfr.cr(), r.safer.cr(),
              static_cast<int>(r.safer.collisions.total), r.seconds)};
}

Outcome trust_region_trend(const DeskRun& r) {
  if (!r.ok) return {false, "desk run failed: " + r.error};
  return {r.safer.cr() > r.safer_n5.cr() && r.safer_n100.aj > r.safer.aj,
          fmt("CR n=20 %.2f > n=5 %.2f, AJ n=100 %.4f > n=20 %.4f", r.safer.cr(),
              r.safer_n5.cr(), r.safer_n100.aj, r.safer.aj)};
}

Outcome realism_containment(const DeskRun& r) {
  if (!r.ok) return {false, "desk run failed: " + r.error};
  return {r.decisions > 0 && r.outside_top20 == 0 && r.safer.vj < 0.3 && r.safer.aj < 0.3,
          fmt("%d/%d safer CBV tokens in the prior top-20, VJ %.4f (< 0.3), AJ %.4f (< 0.3)",
              r.decisions - r.outside_top20, r.decisions, r.safer.vj, r.safer.aj)};
}

// ---------------------------------------------------------------- 12 metrics identities

EpisodeResult episode(bool collision) {
  EpisodeResult e;
  e.collision = collision;
  return e;
}

Outcome metrics_identities() {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double self = 0.0, asym = 0.0, over = 0.0;
  for (int k = 0; k < 1000; ++k) {
    std::vector<double> p(kHistogramBins), q(kHistogramBins);
    for (int i = 0; i < kHistogramBins; ++i) {
      p[i] = u(rng) < 0.3 ? 0.0 : u(rng);
      q[i] = u(rng) < 0.3 ? 0.0 : u(rng);
    }
    p[0] += 1e-3;
    q[1] += 1e-3;
    self = std::max(self, std::abs(jsd(p, p)));
    asym = std::max(asym, std::abs(jsd(p, q) - jsd(q, p)));
    over = std::max(over, jsd(p, q) - std::log(2.0));
  }
  std::vector<double> a(kHistogramBins, 0.0), b(kHistogramBins, 0.0);
  for (int i = 0; i < kHistogramBins / 2; ++i) a[i] = 1.0 + i;
  for (int i = kHistogramBins / 2; i < kHistogramBins; ++i) b[i] = 2.0;
  const double disjoint = std::abs(jsd(a, b) - std::log(2.0));

  std::vector<EpisodeResult> s1, s2;
  for (bool c : {true, true, false, true}) s1.push_back(episode(c));
  for (int i = 0; i < 20; ++i) s2.push_back(episode(i % 3 == 0));  // 7 collide, 13 solve
  const bool counts = collision_rate(s1) == Rate{3, 4} && solution_rate(s2) == Rate{13, 20} &&
                      collision_rate(std::vector<EpisodeResult>(10, episode(false))) == Rate{0, 10} &&
                      solution_rate(std::vector<EpisodeResult>(5, episode(true))) == Rate{0, 5};
  const bool ok = self == 0.0 && disjoint <= 1e-12 && asym <= 1e-12 && over <= 1e-12 && counts;
  return {ok, fmt("jsd(p,p) max %.2g, |disjoint - ln 2| %.2g, asymmetry max %.2g, "
                  "CR 3/4 and SR 13/20 exact: %s",
                  self, disjoint, asym, counts ? "yes" : "no")};
}

// ---------------------------------------------------------------- 13 end-to-end smoke

std::map<std::string, std::string> read_tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::ifstream f(e.path(), std::ios::binary);
    std::stringstream s;
    s << f.rdbuf();
    out[fs::relative(e.path(), root).string()] = s.str();
  }
  return out;
}

Outcome smoke(const fs::path& sgen, const fs::path& config, const fs::path& workdir) {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::map<std::string, std::string>> reports;
  for (int run = 0; run < 2; ++run) {
    fs::remove_all(workdir);
    for (const char* cmd : {"synth", "train-prior", "collect", "train-feasibility", "evaluate",
                            "report"}) {
      const std::string line = "\"" + sgen.string() + "\" " + cmd + " --config \"" +
                               config.string() + "\" --workdir \"" + workdir.string() +
                               "\" > \"" + (workdir.parent_path() / "smoke.log").string() +
                               "\" 2>&1";
      if (std::system(line.c_str()) != 0) {
        return {false, fmt("sgen %s failed on run %d, see %s", cmd, run + 1,
                           (workdir.parent_path() / "smoke.log").string().c_str())};
      }
    }
    reports.push_back(read_tree(workdir / "reports"));
  }
  const double t = seconds_since(t0);
  std::size_t differing = 0;
  for (const auto& [name, bytes] : reports[0]) {
    const auto it = reports[1].find(name);
    if (it == reports[1].end() || it->second != bytes) ++differing;
  }
  const bool has_metrics = reports[0].count("metrics.json") == 1;
  const bool ok = has_metrics && differing == 0 && reports[0].size() == reports[1].size() &&
                  t < 1800.0;
  return {ok, fmt("two same-seed runs, %zu report files, %zu differ, %.1f s for both runs",
                  reports[0].size(), differing, t)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance suite"};
  fs::path configs = "configs";
  fs::path workdir = "acceptance_work";
  fs::path sgen_path = "sgen";
  std::vector<int> only;
  int jobs = 1;
  app.add_option("--configs", configs, "Directory holding desk.json and smoke.json");
  app.add_option("--workdir", workdir, "Scratch directory for pipeline runs");
  app.add_option("--sgen", sgen_path, "Path of the sgen executable");
  app.add_option("--only", only, "Run only these criteria");
  app.add_option("--jobs", jobs, "Worker threads for the desk-scale evaluation");
  CLI11_PARSE(app, argc, argv);
  workdir = fs::absolute(workdir);
  fs::create_directories(workdir);

  auto selected = [&](int id) {
    return only.empty() || std::find(only.begin(), only.end(), id) != only.end();
  };
  int failures = 0;
  auto report = [&](int id, const char* title, const std::function<Outcome()>& check) {
    if (!selected(id)) return;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::printf("[%s] %2d %-24s %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", id, title,
                o.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
  };

  report(1, "vocabulary exactness", vocabulary);
  report(2, "MDA degeneracy", mda_degeneracy);
  report(3, "lambda schedule", lambda_schedule);
  report(4, "gradient fidelity", gradient_fidelity);
  report(5, "expectile identities", expectile_identities);

  if (selected(6) || selected(7)) {
    const BrakingEnv env;
    const auto t0 = std::chrono::steady_clock::now();
    const GridValueTable table = dp_oracle(env, braking_axes(), {});
    const double dp_seconds = seconds_since(t0);
    report(6, "DP oracle vs analytic", [&] { return dp_vs_analytic(table, env, dp_seconds); });
    report(7, "learned LFR fidelity", [&] { return learned_lfr(table, env, workdir / "lfr"); });
  }

  report(8, "resampler hierarchy", resampler_hierarchy);

  if (selected(9) || selected(10) || selected(11)) {
    const DeskRun desk = desk_run(configs / "desk.json", workdir / "desk", jobs);
    report(9, "LFR ablation", [&] { return lfr_ablation(desk); });
    report(10, "trust-region trend", [&] { return trust_region_trend(desk); });
    report(11, "realism containment", [&] { return realism_containment(desk); });
  }

  report(12, "metrics identities", metrics_identities);
  report(13, "end-to-end smoke",
         [&] { return smoke(sgen_path, configs / "smoke.json", workdir / "smoke"); });

  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
