#include "sgen/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "sgen/error.hpp"

namespace sgen {

void Histogram::add(double x) {
  const double u = (x - lo) / (hi - lo) * static_cast<double>(counts.size());
  const int k = std::clamp(static_cast<int>(std::floor(u)), 0, static_cast<int>(counts.size()) - 1);
  ++counts[static_cast<std::size_t>(k)];
}

std::uint64_t Histogram::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
}

std::vector<double> Histogram::normalized() const {
  const std::uint64_t n = total();
  if (n == 0) throw Error(ErrorKind::kUndefinedMetric, "histogram is empty");
  std::vector<double> out(counts.size());
  for (std::size_t k = 0; k < counts.size(); ++k) {
    out[k] = static_cast<double>(counts[k]) / static_cast<double>(n);
  }
  return out;
}

double Histogram::bin_center(int k) const {
  return lo + (k + 0.5) * (hi - lo) / static_cast<double>(counts.size());
}

double jsd(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw Error(ErrorKind::kShapeMismatch, "jsd: size mismatch");
  const double sp = std::accumulate(p.begin(), p.end(), 0.0);
  const double sq = std::accumulate(q.begin(), q.end(), 0.0);
  if (!(sp > 0.0) || !(sq > 0.0)) {
    throw Error(ErrorKind::kUndefinedMetric, "jsd: empty distribution");
  }
  const auto term = [](double a, double m) { return a > 0.0 ? a * std::log(a / m) : 0.0; };
  double sum = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (p[k] < 0.0 || q[k] < 0.0) throw Error(ErrorKind::kValidation, "jsd: negative weight");
    const double a = p[k] / sp, b = q[k] / sq;
    const double m = 0.5 * (a + b);
    sum += 0.5 * (term(a, m) + term(b, m));
  }
  return std::clamp(sum, 0.0, std::log(2.0));
}

double jsd(const Histogram& p, const Histogram& q) {
  if (p.lo != q.lo || p.hi != q.hi || p.counts.size() != q.counts.size()) {
    throw Error(ErrorKind::kShapeMismatch, "jsd: histogram ranges differ");
  }
  if (p.empty() || q.empty()) throw Error(ErrorKind::kUndefinedMetric, "jsd: empty histogram");
  return jsd(std::span<const double>(p.normalized()), std::span<const double>(q.normalized()));
}

double Rate::value() const {
  if (total == 0) throw Error(ErrorKind::kUndefinedMetric, "rate over zero episodes");
  return static_cast<double>(hits) / static_cast<double>(total);
}

Rate collision_rate(std::span<const EpisodeResult> stage1) {
  Rate r{0, stage1.size()};
  for (const auto& e : stage1) r.hits += e.collision ? 1 : 0;
  return r;
}

Rate solution_rate(std::span<const EpisodeResult> stage2) {
  Rate r{0, stage2.size()};
  for (const auto& e : stage2) r.hits += e.collision ? 0 : 1;
  return r;
}

Rate conditional_solution_rate(std::span<const EpisodeResult> stage1,
                               std::span<const EpisodeResult> stage2) {
  if (stage1.size() != stage2.size()) {
    throw Error(ErrorKind::kShapeMismatch, "conditional SR: stage sizes differ");
  }
  Rate r;
  for (std::size_t i = 0; i < stage1.size(); ++i) {
    if (!stage1[i].collision) continue;
    ++r.total;
    r.hits += stage2[i].collision ? 0 : 1;
  }
  return r;
}

KinematicHistograms cbv_kinematic_histograms(std::span<const EpisodeResult> episodes,
                                             std::span<const Scenario> scenarios) {
  if (episodes.size() != scenarios.size()) {
    throw Error(ErrorKind::kShapeMismatch, "kinematic histograms: one scenario per episode");
  }
  KinematicHistograms h;
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    const EpisodeResult& e = episodes[i];
    for (const AgentState& s : e.trajectories.at(static_cast<std::size_t>(e.cbv_index))) {
      h.generated_velocity.add(s.v);
    }
    for (const CbvDecision& d : e.cbv_decisions) h.generated_accel.add(detokenize(d.token).accel);
    const Track& log = scenarios[i].agents.at(static_cast<std::size_t>(scenarios[i].cbv_index));
    for (const AgentState& s : log) h.logged_velocity.add(s.v);
    for (std::size_t t = 0; t + kSubstepsPerPlan < log.size(); t += kSubstepsPerPlan) {
      h.logged_accel.add((log[t + kSubstepsPerPlan].v - log[t].v) / kPlanDt);
    }
  }
  return h;
}

MetricsReport make_report(const std::string& mode, std::span<const EpisodeResult> stage1,
                          std::span<const EpisodeResult> stage2,
                          std::span<const Scenario> scenarios, bool conditional,
                          const nlohmann::json& config) {
  MetricsReport r;
  r.mode = mode;
  r.collisions = collision_rate(stage1);
  r.solutions = solution_rate(stage2);
  if (conditional) r.conditional_solutions = conditional_solution_rate(stage1, stage2);
  const KinematicHistograms h = cbv_kinematic_histograms(stage1, scenarios);
  r.vj = jsd(h.generated_velocity, h.logged_velocity);
  r.aj = jsd(h.generated_accel, h.logged_accel);
  r.config = config;
  return r;
}

namespace {

nlohmann::json rate_json(const Rate& r) {
  return {{"hits", r.hits}, {"total", r.total}, {"value", r.total ? r.value() : 0.0}};
}

Rate rate_from_json(const nlohmann::json& j) {
  return {j.at("hits").get<std::uint64_t>(), j.at("total").get<std::uint64_t>()};
}

}  // namespace

nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json j = {{"mode", r.mode},
                      {"cr", rate_json(r.collisions)},
                      {"sr", rate_json(r.solutions)},
                      {"vj", r.vj},
                      {"aj", r.aj},
                      {"stage1_episodes", r.collisions.total},
                      {"stage2_episodes", r.solutions.total},
                      {"config", r.config}};
  if (r.conditional_solutions) j["sr_conditional"] = rate_json(*r.conditional_solutions);
  return j;
}

MetricsReport metrics_report_from_json(const nlohmann::json& j) {
  try {
    MetricsReport r;
    r.mode = j.at("mode").get<std::string>();
    r.collisions = rate_from_json(j.at("cr"));
    r.solutions = rate_from_json(j.at("sr"));
    if (j.contains("sr_conditional")) r.conditional_solutions = rate_from_json(j.at("sr_conditional"));
    r.vj = j.at("vj").get<double>();
    r.aj = j.at("aj").get<double>();
    r.config = j.value("config", nlohmann::json());
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kMalformedFile, std::string("metrics report: ") + e.what());
  }
}

std::string format_table(std::span<const MetricsReport> reports) {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof line, "%-14s %8s %8s %8s %8s %10s\n", "mode", "CR", "SR", "VJ", "AJ",
                "episodes");
  out += line;
  for (const MetricsReport& r : reports) {
    std::snprintf(line, sizeof line, "%-14s %8.3f %8.3f %8.4f %8.4f %10llu\n", r.mode.c_str(),
                  r.collisions.total ? r.cr() : 0.0, r.solutions.total ? r.sr() : 0.0, r.vj, r.aj,
                  static_cast<unsigned long long>(r.collisions.total));
    out += line;
    if (r.conditional_solutions && r.conditional_solutions->total > 0) {
      std::snprintf(line, sizeof line, "%-14s %8s %8.3f  (SR over %llu stage-1 collisions)\n", "",
                    "", r.conditional_solutions->value(),
                    static_cast<unsigned long long>(r.conditional_solutions->total));
      out += line;
    }
  }
  return out;
}

void write_histogram_csv(const std::filesystem::path& path, const Histogram& generated,
                         const Histogram& logged) {
  if (generated.lo != logged.lo || generated.hi != logged.hi) {
    throw Error(ErrorKind::kShapeMismatch, "histogram csv: ranges differ");
  }
  std::ofstream f(path);
  if (!f) throw Error(ErrorKind::kMissingArtifact, "cannot write " + path.string());
  f << "bin_center,generated,logged\n";
  for (int k = 0; k < static_cast<int>(generated.counts.size()); ++k) {
    f << generated.bin_center(k) << ',' << generated.counts[k] << ',' << logged.counts[k] << '\n';
  }
}

}  // namespace sgen
