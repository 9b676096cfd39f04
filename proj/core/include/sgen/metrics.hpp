#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "sgen/scenario.hpp"
#include "sgen/simulator.hpp"

namespace sgen {

inline constexpr int kHistogramBins = 64;

/// Fixed-range histogram with 64 uniform bins; values outside the range land in the
/// edge bins.
struct Histogram {
  double lo = 0.0;
  double hi = 1.0;
  std::vector<std::uint64_t> counts = std::vector<std::uint64_t>(kHistogramBins, 0);

  static Histogram velocity() { return {0.0, kMaxSpeed}; }
  static Histogram acceleration() { return {-kAccelMax, kAccelMax}; }

  void add(double x);
  std::uint64_t total() const;
  bool empty() const { return total() == 0; }
  /// Throws Error(kUndefinedMetric) when empty.
  std::vector<double> normalized() const;
  double bin_center(int k) const;
};

/// Jensen-Shannon divergence in nats of two non-negative weight vectors, each normalized
/// first. Throws Error(kUndefinedMetric) if either sums to zero, kShapeMismatch on sizes.
double jsd(std::span<const double> p, std::span<const double> q);
/// Histograms must share their range.
double jsd(const Histogram& p, const Histogram& q);

/// Exact count ratio.
struct Rate {
  std::uint64_t hits = 0;
  std::uint64_t total = 0;

  /// Throws Error(kUndefinedMetric) when total is zero.
  double value() const;
  friend bool operator==(Rate, Rate) = default;
};

/// Stage-1 episodes that collided.
Rate collision_rate(std::span<const EpisodeResult> stage1);
/// Stage-2 episodes without collision, over every generated scenario.
Rate solution_rate(std::span<const EpisodeResult> stage2);
/// Stage-2 solutions among scenarios whose stage-1 episode collided (same order).
Rate conditional_solution_rate(std::span<const EpisodeResult> stage1,
                               std::span<const EpisodeResult> stage2);

struct KinematicHistograms {
  Histogram generated_velocity = Histogram::velocity();
  Histogram logged_velocity = Histogram::velocity();
  Histogram generated_accel = Histogram::acceleration();
  Histogram logged_accel = Histogram::acceleration();
};

/// Generated CBV speeds at every sub-step and accelerations of its executed tokens,
/// against the logged CBV speeds and planning-rate finite-difference accelerations.
/// episodes[i] was generated from scenarios[i].
KinematicHistograms cbv_kinematic_histograms(std::span<const EpisodeResult> episodes,
                                             std::span<const Scenario> scenarios);

struct MetricsReport {
  std::string mode;
  Rate collisions;            // stage 1
  Rate solutions;             // stage 2
  std::optional<Rate> conditional_solutions;
  double vj = 0.0;            // nats
  double aj = 0.0;            // nats
  nlohmann::json config;      // echo

  double cr() const { return collisions.value(); }
  double sr() const { return solutions.value(); }
};

/// VJ and AJ come from the stage-1 episodes.
MetricsReport make_report(const std::string& mode, std::span<const EpisodeResult> stage1,
                          std::span<const EpisodeResult> stage2,
                          std::span<const Scenario> scenarios, bool conditional,
                          const nlohmann::json& config = {});

nlohmann::json to_json(const MetricsReport& r);
MetricsReport metrics_report_from_json(const nlohmann::json& j);

/// Fixed-width human table, one row per report.
std::string format_table(std::span<const MetricsReport> reports);

/// bin_center,generated,logged rows.
void write_histogram_csv(const std::filesystem::path& path, const Histogram& generated,
                         const Histogram& logged);

}  // namespace sgen
