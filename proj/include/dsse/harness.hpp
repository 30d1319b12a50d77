#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dsse/distributions.hpp"
#include "dsse/estimator.hpp"
#include "dsse/netmodel.hpp"
#include "dsse/powerflow.hpp"
#include "json.hpp"

namespace dsse::mc {

enum class ReactiveKind {
  independent,  // Q has its own pdf: the P pdf rescaled by k
  constant_pf,  // Q = k * P for every pseudo user
};

struct ReactiveModel {
  ReactiveKind kind = ReactiveKind::independent;
  double k = 0.0;
};

/// How the average voltage error is normalized.
enum class Normalization {
  buses,       // divide by the number of buses
  bus_phases,  // divide by the number of bus-phases
};

struct ScenarioConfig {
  std::filesystem::path network;
  /// Distribution the pseudo users' demand is drawn from.
  dist::UncertaintyModel original;
  /// Named approximations of `original`, e.g. "gmm", "ge", "ga".
  std::map<std::string, dist::UncertaintyModel> approximations;
  /// Models to estimate with; "exact" means `original`.
  std::vector<std::string> models = {"exact"};
  ReactiveModel reactive;
  double sm_voltage_sigma_v = 0.38;
  /// Smart-meter power sigma as a fraction of the GA sigma ...
  double sm_power_sigma_fraction = 0.01;
  /// ... unless given directly (per-unit).
  std::optional<double> sm_power_sigma_pu;
  /// Also meter |U| on every phase of the reference bus (same sigma as the
  /// smart meters). Without it, a phase with no metered user has no voltage
  /// anchor and the estimate may collapse onto a low-voltage solution.
  bool reference_bus_voltage = true;
  std::vector<double> ratios = {0.5};
  int runs = 1;
  std::uint64_t seed = 0;
  Normalization normalization = Normalization::buses;
  se::EstimatorConfig estimator;
};

/// Relative network paths are resolved against `base_dir`. Throws
/// std::invalid_argument on invalid content.
ScenarioConfig scenario_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
ScenarioConfig load_scenario(const std::filesystem::path& path);

/// Throws std::invalid_argument when an invariant fails.
void check(const ScenarioConfig& config);

/// The model used for `name` ("exact" or one of the approximations).
const dist::UncertaintyModel& model_named(const ScenarioConfig& config, const std::string& name);

/// Smart-meter power sigma in per-unit.
double sm_power_sigma(const ScenarioConfig& config);

class ScenarioError : public std::runtime_error {
 public:
  ScenarioError(const std::string& what, std::uint64_t seed) : std::runtime_error(what), seed_(seed) {}
  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
};

struct Scenario {
  double ratio = 0.0;
  std::uint64_t seed = 0;
  pf::StateSolution truth;
  std::vector<std::size_t> pseudo_devices;  // sorted device indices
  std::vector<se::Measurement> smart_meter; // Gaussian P, Q and |U| readings, then reference-bus |U|
};

/// Draws the pseudo users, their demand and the meter noise from `seed`,
/// then solves the power flow. Throws ScenarioError if it does not converge.
Scenario generate_scenario(const Network& network, const ScenarioConfig& config, double ratio, std::uint64_t seed);

/// Smart-meter readings plus pseudo-measurements carrying model `name`.
std::vector<se::Measurement> measurement_set(const Scenario& scenario, const Network& network,
                                             const ScenarioConfig& config, const std::string& name);

/// Estimator settings for a scenario (adds the constant power factor rows).
se::EstimatorConfig estimator_config(const Scenario& scenario, const Network& network, const ScenarioConfig& config);

struct Metrics {
  double du_avg = 0.0;  // p.u.
  double du_max = 0.0;  // p.u.
  std::array<double, 3> dpt_kw{0.0, 0.0, 0.0};  // head-branch active power error per phase
};

Metrics metrics(const pf::StateSolution& truth, const pf::StateSolution& estimate, const Network& network,
                Normalization normalization = Normalization::buses);

struct RunRecord {
  double ratio = 0.0;
  int run = 0;
  std::string model;
  std::optional<Metrics> metrics;
  std::string status;
  double solve_time_s = 0.0;
};

struct SummaryRow {
  double ratio = 0.0;
  std::string model;
  int runs = 0;
  int optimal = 0;
  double du_avg_median = 0.0;
  double du_avg_q25 = 0.0;
  double du_avg_q75 = 0.0;
  double du_max_median = 0.0;
  double solve_time_median = 0.0;
  double solve_time_max = 0.0;
};

struct MonteCarloResult {
  std::vector<RunRecord> records;  // ordered by ratio, run, model
  std::vector<SummaryRow> summary;
};

/// Seed of the stream owned by one (ratio, run) pair.
std::uint64_t stream_seed(std::uint64_t master, std::size_t ratio_index, int run);

/// Linear-interpolation quantile of unsorted data; NaN when empty.
double quantile(std::vector<double> values, double q);

/// Summary statistics use optimal runs only.
std::vector<SummaryRow> summarize(const std::vector<RunRecord>& records);

using Progress = std::function<void(std::size_t done, std::size_t total)>;

/// Runs the sweep on `workers` threads (0 = hardware concurrency). The
/// records do not depend on the number of workers.
MonteCarloResult run_monte_carlo(const ScenarioConfig& config, unsigned workers = 1, const Progress& progress = {});

void write_csv(std::ostream& out, const std::vector<RunRecord>& records);
nlohmann::json summary_to_json(const std::vector<SummaryRow>& rows);

}  // namespace dsse::mc
