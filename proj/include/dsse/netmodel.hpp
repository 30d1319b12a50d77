#pragma once

#include <complex>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>
#include "json.hpp"

namespace dsse {

using Complex = std::complex<double>;
using ComplexMatrix = Eigen::MatrixXcd;

enum class Phase : std::uint8_t { a = 0, b = 1, c = 2 };

char phase_char(Phase p);
Phase phase_from_string(std::string_view s);

/// Ordered, duplicate-free subset of {a, b, c}.
class PhaseSet {
 public:
  PhaseSet() = default;
  /// Throws std::invalid_argument on duplicates.
  explicit PhaseSet(const std::vector<Phase>& phases);
  static PhaseSet abc() { return PhaseSet(0b111); }

  bool contains(Phase p) const { return mask_ & bit(p); }
  bool empty() const { return mask_ == 0; }
  int size() const;
  /// Position of `p` inside the ordered set, or -1.
  int index_of(Phase p) const;
  std::vector<Phase> phases() const;
  bool subset_of(const PhaseSet& other) const { return (mask_ & ~other.mask_) == 0; }
  PhaseSet intersect(const PhaseSet& other) const { return PhaseSet(mask_ & other.mask_); }
  PhaseSet union_with(const PhaseSet& other) const { return PhaseSet(static_cast<std::uint8_t>(mask_ | other.mask_)); }
  std::string to_string() const;

  bool operator==(const PhaseSet&) const = default;

 private:
  explicit PhaseSet(std::uint8_t mask) : mask_(mask) {}
  static std::uint8_t bit(Phase p) { return static_cast<std::uint8_t>(1u << static_cast<unsigned>(p)); }
  std::uint8_t mask_ = 0;
};

enum class BusKind { reference, ordinary };
enum class DeviceKind { load, generator };
enum class Connection { wye };

struct Bus {
  std::string id;
  PhaseSet phases;
  BusKind kind = BusKind::ordinary;
  double base_voltage = 0.0;  // volts, phase-to-neutral

  bool operator==(const Bus&) const = default;
};

/// Three-phase pi-model branch. Admittances are stored in per-unit and are
/// sized by the phases shared between the two endpoint buses.
struct Branch {
  std::string id;
  std::string from_bus;
  std::string to_bus;
  ComplexMatrix y_series;
  ComplexMatrix y_shunt_from;
  ComplexMatrix y_shunt_to;

  bool operator==(const Branch& o) const {
    return id == o.id && from_bus == o.from_bus && to_bus == o.to_bus && y_series == o.y_series &&
           y_shunt_from == o.y_shunt_from && y_shunt_to == o.y_shunt_to;
  }
};

struct Device {
  std::string id;
  std::string bus;
  PhaseSet phases;
  DeviceKind kind = DeviceKind::load;
  Connection connection = Connection::wye;
  /// Optional per-phase nominal operating point (per-unit), used as the
  /// smart-meter demand when generating scenarios.
  std::optional<std::vector<Complex>> profile;

  bool operator==(const Device&) const = default;
};

struct Bases {
  double voltage_v = 230.0;  // phase-to-neutral
  double power_va = 1000.0;  // per phase

  double impedance_ohm() const { return voltage_v * voltage_v / power_va; }
  bool operator==(const Bases&) const = default;
};

struct Violation {
  std::string entity;
  std::string message;
};

/// Immutable feeder description. Construction does not validate; use
/// validate() or load_network() for checked instances.
class Network {
 public:
  Network() = default;
  Network(std::vector<Bus> buses, std::vector<Branch> branches, std::vector<Device> devices,
          Bases bases = {});

  const std::vector<Bus>& buses() const { return buses_; }
  const std::vector<Branch>& branches() const { return branches_; }
  const std::vector<Device>& devices() const { return devices_; }
  const Bases& bases() const { return bases_; }

  std::optional<std::size_t> find_bus(std::string_view id) const;
  std::optional<std::size_t> find_device(std::string_view id) const;
  std::size_t bus_index(std::string_view id) const;
  std::size_t device_index(std::string_view id) const;
  /// Index of the first reference bus; throws if there is none.
  std::size_t reference_bus() const;
  /// Phases carried by a branch (intersection of its endpoints).
  PhaseSet branch_phases(const Branch& br) const;

  bool operator==(const Network& o) const {
    return buses_ == o.buses_ && branches_ == o.branches_ && devices_ == o.devices_ && bases_ == o.bases_;
  }

 private:
  std::vector<Bus> buses_;
  std::vector<Branch> branches_;
  std::vector<Device> devices_;
  Bases bases_;
  std::unordered_map<std::string, std::size_t> bus_lookup_;
  std::unordered_map<std::string, std::size_t> device_lookup_;
};

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(std::vector<Violation> violations);
  const std::vector<Violation>& violations() const { return violations_; }

 private:
  std::vector<Violation> violations_;
};

/// Returns every violated invariant; an empty list means the network is valid.
std::vector<Violation> validate(const Network& network);

Network network_from_json(const nlohmann::json& j);
nlohmann::json network_to_json(const Network& network);

/// Parses and validates a network file. Throws ParseError or ValidationError.
Network load_network(const std::filesystem::path& path);

}  // namespace dsse
