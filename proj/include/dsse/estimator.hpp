#pragma once

#include <limits>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dsse/distributions.hpp"
#include "dsse/netmodel.hpp"
#include "dsse/nlp.hpp"
#include "dsse/powerflow.hpp"
#include "json.hpp"

namespace dsse::se {

enum class Quantity { voltage_magnitude, active_power, reactive_power };

/// What a measurement observes: |U| at a bus-phase, or P/Q of a device-phase.
struct MeasurementTarget {
  Quantity quantity = Quantity::voltage_magnitude;
  std::string entity;  // bus id for voltages, device id for powers
  Phase phase = Phase::a;

  static MeasurementTarget voltage(std::string bus, Phase p) { return {Quantity::voltage_magnitude, std::move(bus), p}; }
  static MeasurementTarget active(std::string dev, Phase p) { return {Quantity::active_power, std::move(dev), p}; }
  static MeasurementTarget reactive(std::string dev, Phase p) { return {Quantity::reactive_power, std::move(dev), p}; }
};

enum class MeasurementKind { real, pseudo };

/// All values are per-unit. A real meter reading is a Gaussian centred on
/// the measured value.
struct Measurement {
  MeasurementTarget target;
  dist::UncertaintyModel model;
  MeasurementKind kind = MeasurementKind::real;
};

/// Device-phases whose active (or reactive) powers move together in
/// proportion to their scale factors, e.g. co-located PV of different sizes.
struct CorrelationGroup {
  struct Member {
    std::string device;
    Phase phase = Phase::a;
    double scale = 1.0;
  };
  Quantity quantity = Quantity::active_power;
  std::vector<Member> members;
};

/// Q = k2 * P on every phase of the listed devices.
struct ConstantPowerFactor {
  double k2 = 0.0;
  std::vector<std::string> devices;
};

struct EstimatorConfig {
  std::vector<CorrelationGroup> pv_correlation_groups;
  std::optional<ConstantPowerFactor> constant_pf;
  nlp::SolveOptions solver;
  double u_min = 0.5;  // bounds of the |U| auxiliaries; |Re U|, |Im U| <= u_max
  double u_max = 1.5;
  double power_min = -std::numeric_limits<double>::infinity();
  double power_max = std::numeric_limits<double>::infinity();
  /// Added to every log-density shift constant.
  double xi_offset = 0.0;
  /// Use |xi| instead of xi for the log-density shift.
  bool literal_shift = false;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class TermKind { squared, absolute, log_density };

/// One objective term per measurement.
struct ObjectiveTerm {
  std::size_t measurement;
  int variable;
  TermKind kind;
  double shift = 0.0;  // log_density only
};

/// The assembled NLP together with the variable layout needed to read the
/// state back out of a solution vector.
struct SEProblem {
  nlp::NlpProblem nlp;
  std::vector<ObjectiveTerm> terms;
  int bus_phases = 0;
  int device_phases = 0;
  int magnitude_aux = 0;  // |U| auxiliaries
  int laplace_slacks = 0;

  int e(int bp) const { return bp; }
  int f(int bp) const { return bus_phases + bp; }
  int p(int dp) const { return 2 * bus_phases + dp; }
  int q(int dp) const { return 2 * bus_phases + device_phases + dp; }
};

/// The network must outlive the returned problem.
SEProblem build_problem(const Network& network, const std::vector<Measurement>& measurements,
                        const EstimatorConfig& config = {});

struct SEResult {
  pf::StateSolution state;
  double objective = 0.0;
  std::vector<double> residuals;  // one per measurement
  nlp::SolveReport report;
};

class EstimationError : public std::runtime_error {
 public:
  EstimationError(const std::string& what, SEResult result) : std::runtime_error(what), result_(std::move(result)) {}
  const SEResult& result() const { return result_; }

 private:
  SEResult result_;
};

/// Solves the estimation problem; throws EstimationError unless the solver
/// reports an optimal point.
SEResult estimate(const Network& network, const std::vector<Measurement>& measurements,
                  const EstimatorConfig& config = {});

/// Same as estimate() but returns whatever the solver reached.
SEResult try_estimate(const Network& network, const std::vector<Measurement>& measurements,
                      const EstimatorConfig& config = {});

/// Residual value of one measurement at a given state.
double residual(const Measurement& m, const pf::NetworkModel& model, const pf::StateSolution& state,
                const EstimatorConfig& config = {});

/// Model of k1 * X, used to derive reactive pseudo-measurements from active ones.
dist::UncertaintyModel reactive_rescale(const dist::UncertaintyModel& model, double k1);

// JSON. Measurement values may be given in volts / kW / kvar via "unit";
// they are converted to per-unit with the network's bases.
Measurement measurement_from_json(const nlohmann::json& j, const Network& network);
nlohmann::json measurement_to_json(const Measurement& m);
std::vector<Measurement> measurements_from_json(const nlohmann::json& j, const Network& network);
nlohmann::json measurements_to_json(const std::vector<Measurement>& ms);
EstimatorConfig config_from_json(const nlohmann::json& j);
nlohmann::json result_to_json(const SEResult& r, const Network& network);

}  // namespace dsse::se
