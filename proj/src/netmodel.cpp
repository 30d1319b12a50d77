#include "dsse/netmodel.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <queue>
#include <sstream>

namespace dsse {

using nlohmann::json;

char phase_char(Phase p) { return "abc"[static_cast<int>(p)]; }

Phase phase_from_string(std::string_view s) {
  if (s == "a") return Phase::a;
  if (s == "b") return Phase::b;
  if (s == "c") return Phase::c;
  throw std::invalid_argument("unknown phase '" + std::string(s) + "'");
}

PhaseSet::PhaseSet(const std::vector<Phase>& phases) {
  for (Phase p : phases) {
    if (contains(p)) throw std::invalid_argument(std::string("duplicate phase '") + phase_char(p) + "'");
    mask_ |= bit(p);
  }
}

int PhaseSet::size() const { return std::popcount(mask_); }

int PhaseSet::index_of(Phase p) const {
  if (!contains(p)) return -1;
  return std::popcount(static_cast<std::uint8_t>(mask_ & (bit(p) - 1)));
}

std::vector<Phase> PhaseSet::phases() const {
  std::vector<Phase> out;
  for (Phase p : {Phase::a, Phase::b, Phase::c})
    if (contains(p)) out.push_back(p);
  return out;
}

std::string PhaseSet::to_string() const {
  std::string s;
  for (Phase p : phases()) s += phase_char(p);
  return s;
}

Network::Network(std::vector<Bus> buses, std::vector<Branch> branches, std::vector<Device> devices,
                 Bases bases)
    : buses_(std::move(buses)), branches_(std::move(branches)), devices_(std::move(devices)), bases_(bases) {
  for (std::size_t i = 0; i < buses_.size(); ++i) bus_lookup_.emplace(buses_[i].id, i);
  for (std::size_t i = 0; i < devices_.size(); ++i) device_lookup_.emplace(devices_[i].id, i);
}

std::optional<std::size_t> Network::find_bus(std::string_view id) const {
  auto it = bus_lookup_.find(std::string(id));
  if (it == bus_lookup_.end()) return std::nullopt;
  return it->second;
}

std::optional<std::size_t> Network::find_device(std::string_view id) const {
  auto it = device_lookup_.find(std::string(id));
  if (it == device_lookup_.end()) return std::nullopt;
  return it->second;
}

std::size_t Network::bus_index(std::string_view id) const {
  if (auto i = find_bus(id)) return *i;
  throw std::out_of_range("unknown bus '" + std::string(id) + "'");
}

std::size_t Network::device_index(std::string_view id) const {
  if (auto i = find_device(id)) return *i;
  throw std::out_of_range("unknown device '" + std::string(id) + "'");
}

std::size_t Network::reference_bus() const {
  for (std::size_t i = 0; i < buses_.size(); ++i)
    if (buses_[i].kind == BusKind::reference) return i;
  throw std::logic_error("network has no reference bus");
}

PhaseSet Network::branch_phases(const Branch& br) const {
  return buses_.at(bus_index(br.from_bus)).phases.intersect(buses_.at(bus_index(br.to_bus)).phases);
}

namespace {

std::string describe(const std::vector<Violation>& vs) {
  std::ostringstream os;
  os << "network validation failed:";
  for (const auto& v : vs) os << "\n  " << v.entity << ": " << v.message;
  return os.str();
}

}  // namespace

ValidationError::ValidationError(std::vector<Violation> violations)
    : std::runtime_error(describe(violations)), violations_(std::move(violations)) {}

std::vector<Violation> validate(const Network& net) {
  std::vector<Violation> out;
  const auto& buses = net.buses();

  std::unordered_map<std::string, int> seen;
  for (const auto& b : buses)
    if (++seen[b.id] == 2) out.push_back({b.id, "duplicate bus id"});
  seen.clear();
  for (const auto& d : net.devices())
    if (++seen[d.id] == 2) out.push_back({d.id, "duplicate device id"});

  int n_ref = 0;
  for (const auto& b : buses) {
    if (b.kind == BusKind::reference) ++n_ref;
    if (!(b.base_voltage > 0.0)) out.push_back({b.id, "non-positive base voltage"});
    if (b.phases.empty()) out.push_back({b.id, "empty phase set"});
  }
  if (n_ref == 0) out.push_back({"network", "missing reference bus"});
  if (n_ref > 1) out.push_back({"network", "multiple reference buses"});
  if (!(net.bases().voltage_v > 0.0) || !(net.bases().power_va > 0.0))
    out.push_back({"bases", "non-positive base"});

  std::vector<std::vector<std::size_t>> adj(buses.size());
  std::vector<PhaseSet> carried(buses.size());
  for (const auto& br : net.branches()) {
    auto fi = net.find_bus(br.from_bus);
    auto ti = net.find_bus(br.to_bus);
    if (!fi) out.push_back({br.id, "dangling reference to absent bus '" + br.from_bus + "'"});
    if (!ti) out.push_back({br.id, "dangling reference to absent bus '" + br.to_bus + "'"});
    if (br.from_bus == br.to_bus) out.push_back({br.id, "from_bus equals to_bus"});
    if (!fi || !ti) continue;
    const int n = buses[*fi].phases.intersect(buses[*ti].phases).size();
    if (n == 0) out.push_back({br.id, "endpoints share no phase"});
    for (const ComplexMatrix* m : {&br.y_series, &br.y_shunt_from, &br.y_shunt_to})
      if (m->rows() != n || m->cols() != n) {
        out.push_back({br.id, "admittance dimension does not match shared phase count " + std::to_string(n)});
        break;
      }
    adj[*fi].push_back(*ti);
    adj[*ti].push_back(*fi);
    const auto shared = buses[*fi].phases.intersect(buses[*ti].phases);
    carried[*fi] = carried[*fi].union_with(shared);
    carried[*ti] = carried[*ti].union_with(shared);
  }
  if (buses.size() > 1)
    for (std::size_t i = 0; i < buses.size(); ++i)
      if (!buses[i].phases.subset_of(carried[i]))
        out.push_back({buses[i].id, "phase not carried by any branch"});

  for (const auto& d : net.devices()) {
    auto bi = net.find_bus(d.bus);
    if (!bi) {
      out.push_back({d.id, "dangling reference to absent bus '" + d.bus + "'"});
      continue;
    }
    if (d.phases.empty()) out.push_back({d.id, "empty phase set"});
    if (!d.phases.subset_of(buses[*bi].phases)) out.push_back({d.id, "phase mismatch with bus '" + d.bus + "'"});
    if (buses[*bi].kind == BusKind::reference)
      out.push_back({d.id, "device attached to reference bus (slack injection is implicit)"});
    if (d.profile && static_cast<int>(d.profile->size()) != d.phases.size())
      out.push_back({d.id, "profile length does not match phase count"});
  }

  if (n_ref >= 1) {
    std::vector<char> reached(buses.size(), 0);
    std::queue<std::size_t> q;
    const std::size_t ref = net.reference_bus();
    reached[ref] = 1;
    q.push(ref);
    while (!q.empty()) {
      auto u = q.front();
      q.pop();
      for (auto v : adj[u])
        if (!reached[v]) {
          reached[v] = 1;
          q.push(v);
        }
    }
    for (std::size_t i = 0; i < buses.size(); ++i)
      if (!reached[i]) out.push_back({buses[i].id, "disconnected from reference bus"});
  }
  return out;
}

namespace {

std::vector<Phase> parse_phases(const json& j) {
  std::vector<Phase> out;
  for (const auto& p : j) out.push_back(phase_from_string(p.get<std::string>()));
  return out;
}

json phases_json(const PhaseSet& ps) {
  json a = json::array();
  for (Phase p : ps.phases()) a.push_back(std::string(1, phase_char(p)));
  return a;
}

ComplexMatrix parse_matrix(const json& j, double scale) {
  const auto& re = j.at("re");
  const auto& im = j.at("im");
  const auto n = static_cast<Eigen::Index>(re.size());
  if (static_cast<Eigen::Index>(im.size()) != n) throw ParseError("matrix 're' and 'im' differ in row count");
  ComplexMatrix m(n, n == 0 ? 0 : static_cast<Eigen::Index>(re[0].size()));
  for (Eigen::Index r = 0; r < n; ++r) {
    if (re[r].size() != static_cast<std::size_t>(m.cols()) || im[r].size() != static_cast<std::size_t>(m.cols()))
      throw ParseError("ragged admittance matrix");
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      m(r, c) = Complex(re[r][c].get<double>(), im[r][c].get<double>()) * scale;
  }
  return m;
}

json matrix_json(const ComplexMatrix& m) {
  json re = json::array(), im = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json rr = json::array(), ir = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      rr.push_back(m(r, c).real());
      ir.push_back(m(r, c).imag());
    }
    re.push_back(rr);
    im.push_back(ir);
  }
  return {{"re", re}, {"im", im}};
}

}  // namespace

Network network_from_json(const json& j) {
  try {
    Bases bases;
    if (j.contains("bases")) {
      bases.voltage_v = j["bases"].value("voltage_v", bases.voltage_v);
      bases.power_va = j["bases"].value("power_va", bases.power_va);
    }
    std::string y_units = "siemens", p_units = "kw";
    if (j.contains("units")) {
      y_units = j["units"].value("admittance", y_units);
      p_units = j["units"].value("power", p_units);
    }
    if (y_units != "siemens" && y_units != "pu") throw ParseError("unknown admittance unit '" + y_units + "'");
    if (p_units != "kw" && p_units != "pu") throw ParseError("unknown power unit '" + p_units + "'");
    const double p_scale = p_units == "kw" ? 1000.0 / bases.power_va : 1.0;

    std::vector<Bus> buses;
    for (const auto& b : j.at("buses")) {
      Bus bus;
      bus.id = b.at("id").get<std::string>();
      bus.phases = PhaseSet(parse_phases(b.at("phases")));
      const std::string kind = b.value("kind", "ordinary");
      if (kind == "reference") bus.kind = BusKind::reference;
      else if (kind == "ordinary") bus.kind = BusKind::ordinary;
      else throw ParseError("bus '" + bus.id + "': unknown kind '" + kind + "'");
      bus.base_voltage = b.value("base_voltage", bases.voltage_v);
      buses.push_back(std::move(bus));
    }

    std::unordered_map<std::string, double> vbase;
    for (const auto& b : buses) vbase[b.id] = b.base_voltage;

    std::vector<Branch> branches;
    for (const auto& b : j.at("branches")) {
      Branch br;
      br.id = b.at("id").get<std::string>();
      br.from_bus = b.at("from").get<std::string>();
      br.to_bus = b.at("to").get<std::string>();
      double scale = 1.0;
      if (y_units == "siemens") {
        auto it = vbase.find(br.from_bus);
        const double v = it != vbase.end() ? it->second : bases.voltage_v;
        scale = v * v / bases.power_va;
      }
      br.y_series = parse_matrix(b.at("y_series"), scale);
      const auto n = br.y_series.rows();
      br.y_shunt_from = b.contains("y_shunt_from") ? parse_matrix(b["y_shunt_from"], scale)
                                                   : ComplexMatrix::Zero(n, n);
      br.y_shunt_to = b.contains("y_shunt_to") ? parse_matrix(b["y_shunt_to"], scale) : ComplexMatrix::Zero(n, n);
      branches.push_back(std::move(br));
    }

    std::vector<Device> devices;
    if (j.contains("devices"))
      for (const auto& d : j["devices"]) {
        Device dev;
        dev.id = d.at("id").get<std::string>();
        dev.bus = d.at("bus").get<std::string>();
        dev.phases = PhaseSet(parse_phases(d.at("phases")));
        const std::string kind = d.value("kind", "load");
        if (kind == "load") dev.kind = DeviceKind::load;
        else if (kind == "generator") dev.kind = DeviceKind::generator;
        else throw ParseError("device '" + dev.id + "': unknown kind '" + kind + "'");
        const std::string conn = d.value("connection", "wye");
        if (conn != "wye") throw ParseError("device '" + dev.id + "': unsupported connection '" + conn + "'");
        if (d.contains("profile")) {
          const auto& p = d["profile"].at("p");
          const auto& q = d["profile"].at("q");
          if (p.size() != q.size()) throw ParseError("device '" + dev.id + "': profile p/q length mismatch");
          std::vector<Complex> prof;
          for (std::size_t k = 0; k < p.size(); ++k)
            prof.emplace_back(p[k].get<double>() * p_scale, q[k].get<double>() * p_scale);
          dev.profile = std::move(prof);
        }
        devices.push_back(std::move(dev));
      }
    return Network(std::move(buses), std::move(branches), std::move(devices), bases);
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed network JSON: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ParseError(std::string("malformed network JSON: ") + e.what());
  }
}

json network_to_json(const Network& net) {
  json j;
  j["bases"] = {{"voltage_v", net.bases().voltage_v}, {"power_va", net.bases().power_va}};
  j["units"] = {{"admittance", "pu"}, {"power", "pu"}};
  j["buses"] = json::array();
  for (const auto& b : net.buses())
    j["buses"].push_back({{"id", b.id},
                          {"phases", phases_json(b.phases)},
                          {"kind", b.kind == BusKind::reference ? "reference" : "ordinary"},
                          {"base_voltage", b.base_voltage}});
  j["branches"] = json::array();
  for (const auto& br : net.branches())
    j["branches"].push_back({{"id", br.id},
                             {"from", br.from_bus},
                             {"to", br.to_bus},
                             {"y_series", matrix_json(br.y_series)},
                             {"y_shunt_from", matrix_json(br.y_shunt_from)},
                             {"y_shunt_to", matrix_json(br.y_shunt_to)}});
  j["devices"] = json::array();
  for (const auto& d : net.devices()) {
    json dj = {{"id", d.id},
               {"bus", d.bus},
               {"phases", phases_json(d.phases)},
               {"kind", d.kind == DeviceKind::load ? "load" : "generator"},
               {"connection", "wye"}};
    if (d.profile) {
      json p = json::array(), q = json::array();
      for (const auto& s : *d.profile) {
        p.push_back(s.real());
        q.push_back(s.imag());
      }
      dj["profile"] = {{"p", p}, {"q", q}};
    }
    j["devices"].push_back(dj);
  }
  return j;
}

Network load_network(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open network file " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ParseError("malformed JSON in " + path.string() + ": " + e.what());
  }
  Network net = network_from_json(j);
  if (auto v = validate(net); !v.empty()) throw ValidationError(std::move(v));
  return net;
}

}  // namespace dsse
