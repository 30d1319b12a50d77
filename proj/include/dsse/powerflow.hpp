#pragma once

#include <stdexcept>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "dsse/netmodel.hpp"

namespace dsse::pf {

using SparseMatrix = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

/// Reference-bus phase angles a, b, c in radians.
double reference_angle(Phase p);

/// Flattened index space of a network: one slot per bus-phase and per
/// device-phase, in network order.
class NetworkModel {
 public:
  explicit NetworkModel(const Network& network);

  const Network& network() const { return *net_; }
  int bus_phase_count() const { return static_cast<int>(bp_bus_.size()); }
  int device_phase_count() const { return static_cast<int>(dp_device_.size()); }

  /// Throws std::out_of_range when the bus does not carry the phase.
  int bus_phase(std::size_t bus, Phase p) const;
  int device_phase(std::size_t device, Phase p) const;

  std::size_t bus_of(int bus_phase) const { return bp_bus_[bus_phase]; }
  Phase phase_of(int bus_phase) const { return bp_phase_[bus_phase]; }
  std::size_t device_of(int device_phase) const { return dp_device_[device_phase]; }
  Phase device_phase_of(int device_phase) const { return dp_phase_[device_phase]; }
  /// Bus-phase that a device-phase injects into.
  int device_bus_phase(int device_phase) const { return dp_bus_phase_[device_phase]; }
  /// +1 for generators, -1 for loads.
  double device_sign(int device_phase) const { return dp_sign_[device_phase]; }
  bool is_reference(int bus_phase) const { return bp_bus_[bus_phase] == ref_bus_; }
  std::size_t reference_bus() const { return ref_bus_; }

  /// Bus-phase indices of a branch's from and to ends, ordered by shared phase.
  const std::vector<int>& branch_from(std::size_t branch) const { return br_from_[branch]; }
  const std::vector<int>& branch_to(std::size_t branch) const { return br_to_[branch]; }

  /// Nodal admittance matrix over bus-phases, split into real/imaginary parts.
  const SparseMatrix& conductance() const { return g_; }
  const SparseMatrix& susceptance() const { return b_; }

 private:
  const Network* net_;
  std::size_t ref_bus_;
  std::vector<int> bus_first_;
  std::vector<std::size_t> bp_bus_;
  std::vector<Phase> bp_phase_;
  std::vector<int> dev_first_;
  std::vector<std::size_t> dp_device_;
  std::vector<Phase> dp_phase_;
  std::vector<int> dp_bus_phase_;
  std::vector<double> dp_sign_;
  std::vector<std::vector<int>> br_from_, br_to_;
  SparseMatrix g_, b_;
};

/// Rectangular voltages per bus-phase and device powers per device-phase,
/// all per-unit, indexed by NetworkModel. Device powers follow the device's
/// own convention: consumption for loads, production for generators.
struct StateSolution {
  Eigen::VectorXd u_re, u_im;
  Eigen::VectorXd p, q;

  Eigen::VectorXd magnitude() const { return (u_re.array().square() + u_im.array().square()).sqrt(); }
};

/// Balanced nominal voltages at every bus-phase, zero device powers.
StateSolution flat_state(const NetworkModel& model, double magnitude = 1.0);

struct BranchFlow {
  ComplexMatrix s_from;  // S_ij
  ComplexMatrix s_to;    // S_ji
};

/// Per-branch power-flow matrices from the pi-model equations.
std::vector<BranchFlow> branch_flows(const NetworkModel& model, const StateSolution& state);

/// Power leaving each bus-phase into the network, U_k conj((Y U)_k).
void flow_injections(const NetworkModel& model, const Eigen::VectorXd& e, const Eigen::VectorXd& f,
                     Eigen::VectorXd& p_out, Eigen::VectorXd& q_out);

/// Jacobian of the stacked [P_out; Q_out] with respect to [e; f], appended as
/// triplets shifted by the given row/column offsets and multiplied by `scale`.
void flow_jacobian(const NetworkModel& model, const Eigen::VectorXd& e, const Eigen::VectorXd& f,
                   std::vector<Triplet>& out, int row_offset, int col_offset, double scale = 1.0);

/// Hessian of sum_k (w_p[k] P_out[k] + w_q[k] Q_out[k]) with respect to [e; f].
/// The flows are quadratic so the Hessian is constant. Only the lower
/// triangle is emitted.
void flow_hessian_lower(const NetworkModel& model, const Eigen::VectorXd& w_p, const Eigen::VectorXd& w_q,
                        std::vector<Triplet>& out, int offset);

/// Generation minus demand minus outgoing flow, per bus-phase. Reference
/// bus-phases absorb the slack and report zero.
Eigen::VectorXcd nodal_balance_residual(const NetworkModel& model, const StateSolution& state);

/// Slack injection at the reference bus-phases (zero elsewhere).
Eigen::VectorXcd slack_injection(const NetworkModel& model, const StateSolution& state);

/// Per-device-phase complex power setpoints.
struct PFSpec {
  Eigen::VectorXcd device_power;
};

/// Setpoints taken from the device profiles; throws if a profile is missing.
PFSpec profile_spec(const NetworkModel& model);

/// Setpoints from JSON: {"units": "kw"|"pu", "devices": [{"id", "p": [...], "q": [...]}]},
/// values in the device's phase order. Devices not listed keep their profile.
PFSpec spec_from_json(const NetworkModel& model, const nlohmann::json& j);

/// Per-bus-phase voltages (rectangular, magnitude, angle) and per-device P/Q in p.u.
nlohmann::json state_to_json(const NetworkModel& model, const StateSolution& state);

struct PFOptions {
  double tolerance = 1e-10;
  int max_iterations = 50;
  double reference_magnitude = 1.0;
};

struct PFReport {
  int iterations = 0;
  double mismatch = 0.0;
};

struct PFResult {
  StateSolution state;
  PFReport report;
};

class PowerFlowError : public std::runtime_error {
 public:
  PowerFlowError(const std::string& what, double last_mismatch)
      : std::runtime_error(what), last_mismatch_(last_mismatch) {}
  double last_mismatch() const { return last_mismatch_; }

 private:
  double last_mismatch_;
};

/// Newton-Raphson in rectangular coordinates from a flat start.
PFResult solve_pf(const NetworkModel& model, const PFSpec& spec, const PFOptions& options = {});

}  // namespace dsse::pf
