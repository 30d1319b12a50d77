#include "dsse/powerflow.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include <Eigen/SparseLU>

namespace dsse::pf {

double reference_angle(Phase p) {
  switch (p) {
    case Phase::a: return 0.0;
    case Phase::b: return -2.0 * std::numbers::pi / 3.0;
    case Phase::c: return 2.0 * std::numbers::pi / 3.0;
  }
  return 0.0;
}

NetworkModel::NetworkModel(const Network& network) : net_(&network), ref_bus_(network.reference_bus()) {
  const auto& buses = network.buses();
  bus_first_.resize(buses.size());
  for (std::size_t i = 0; i < buses.size(); ++i) {
    bus_first_[i] = static_cast<int>(bp_bus_.size());
    for (Phase p : buses[i].phases.phases()) {
      bp_bus_.push_back(i);
      bp_phase_.push_back(p);
    }
  }
  const auto& devices = network.devices();
  dev_first_.resize(devices.size());
  for (std::size_t d = 0; d < devices.size(); ++d) {
    dev_first_[d] = static_cast<int>(dp_device_.size());
    const std::size_t bus = network.bus_index(devices[d].bus);
    for (Phase p : devices[d].phases.phases()) {
      dp_device_.push_back(d);
      dp_phase_.push_back(p);
      dp_bus_phase_.push_back(bus_phase(bus, p));
      dp_sign_.push_back(devices[d].kind == DeviceKind::generator ? 1.0 : -1.0);
    }
  }

  const int n = bus_phase_count();
  std::vector<Eigen::Triplet<Complex>> y;
  for (int k = 0; k < n; ++k) y.emplace_back(k, k, Complex(0.0, 0.0));
  const auto& branches = network.branches();
  br_from_.resize(branches.size());
  br_to_.resize(branches.size());
  for (std::size_t b = 0; b < branches.size(); ++b) {
    const auto& br = branches[b];
    const std::size_t i = network.bus_index(br.from_bus), j = network.bus_index(br.to_bus);
    const auto phases = network.branch_phases(br).phases();
    for (Phase p : phases) {
      br_from_[b].push_back(bus_phase(i, p));
      br_to_[b].push_back(bus_phase(j, p));
    }
    const auto& fi = br_from_[b];
    const auto& tj = br_to_[b];
    for (std::size_t r = 0; r < phases.size(); ++r)
      for (std::size_t c = 0; c < phases.size(); ++c) {
        const auto rr = static_cast<Eigen::Index>(r), cc = static_cast<Eigen::Index>(c);
        const Complex ys = br.y_series(rr, cc);
        y.emplace_back(fi[r], fi[c], ys + br.y_shunt_from(rr, cc));
        y.emplace_back(tj[r], tj[c], ys + br.y_shunt_to(rr, cc));
        y.emplace_back(fi[r], tj[c], -ys);
        y.emplace_back(tj[r], fi[c], -ys);
      }
  }
  Eigen::SparseMatrix<Complex> ybus(n, n);
  ybus.setFromTriplets(y.begin(), y.end());
  g_ = ybus.real();
  b_ = ybus.imag();
}

int NetworkModel::bus_phase(std::size_t bus, Phase p) const {
  const int idx = net_->buses().at(bus).phases.index_of(p);
  if (idx < 0)
    throw std::out_of_range("bus '" + net_->buses()[bus].id + "' has no phase " + std::string(1, phase_char(p)));
  return bus_first_[bus] + idx;
}

int NetworkModel::device_phase(std::size_t device, Phase p) const {
  const int idx = net_->devices().at(device).phases.index_of(p);
  if (idx < 0)
    throw std::out_of_range("device '" + net_->devices()[device].id + "' has no phase " +
                            std::string(1, phase_char(p)));
  return dev_first_[device] + idx;
}

StateSolution flat_state(const NetworkModel& model, double magnitude) {
  StateSolution s;
  const int n = model.bus_phase_count();
  s.u_re.resize(n);
  s.u_im.resize(n);
  for (int k = 0; k < n; ++k) {
    const double th = reference_angle(model.phase_of(k));
    s.u_re[k] = magnitude * std::cos(th);
    s.u_im[k] = magnitude * std::sin(th);
  }
  s.p = Eigen::VectorXd::Zero(model.device_phase_count());
  s.q = Eigen::VectorXd::Zero(model.device_phase_count());
  return s;
}

namespace {

void check_dimensions(const NetworkModel& model, const StateSolution& s) {
  if (s.u_re.size() != model.bus_phase_count() || s.u_im.size() != model.bus_phase_count() ||
      s.p.size() != model.device_phase_count() || s.q.size() != model.device_phase_count())
    throw std::invalid_argument("state dimensions do not match the network");
}

}  // namespace

std::vector<BranchFlow> branch_flows(const NetworkModel& model, const StateSolution& state) {
  check_dimensions(model, state);
  const auto& branches = model.network().branches();
  std::vector<BranchFlow> out;
  out.reserve(branches.size());
  for (std::size_t b = 0; b < branches.size(); ++b) {
    const auto& br = branches[b];
    const auto& fi = model.branch_from(b);
    const auto& tj = model.branch_to(b);
    const auto n = static_cast<Eigen::Index>(fi.size());
    Eigen::VectorXcd ui(n), uj(n);
    for (Eigen::Index r = 0; r < n; ++r) {
      ui[r] = Complex(state.u_re[fi[r]], state.u_im[fi[r]]);
      uj[r] = Complex(state.u_re[tj[r]], state.u_im[tj[r]]);
    }
    BranchFlow flow;
    flow.s_from = ui * ui.adjoint() * (br.y_series + br.y_shunt_from).adjoint() - ui * uj.adjoint() * br.y_series.adjoint();
    flow.s_to = uj * uj.adjoint() * (br.y_series + br.y_shunt_to).adjoint() - uj * ui.adjoint() * br.y_series.adjoint();
    out.push_back(std::move(flow));
  }
  return out;
}

void flow_injections(const NetworkModel& model, const Eigen::VectorXd& e, const Eigen::VectorXd& f,
                     Eigen::VectorXd& p_out, Eigen::VectorXd& q_out) {
  const auto& g = model.conductance();
  const auto& b = model.susceptance();
  const Eigen::VectorXd a = g * e - b * f;   // Re(Y U)
  const Eigen::VectorXd c = g * f + b * e;   // Im(Y U)
  p_out = e.cwiseProduct(a) + f.cwiseProduct(c);
  q_out = f.cwiseProduct(a) - e.cwiseProduct(c);
}

void flow_jacobian(const NetworkModel& model, const Eigen::VectorXd& e, const Eigen::VectorXd& f,
                   std::vector<Triplet>& out, int row_offset, int col_offset, double scale) {
  const int n = model.bus_phase_count();
  const auto& g = model.conductance();
  const auto& b = model.susceptance();
  const Eigen::VectorXd a = g * e - b * f;
  const Eigen::VectorXd c = g * f + b * e;
  const int rp = row_offset, rq = row_offset + n, ce = col_offset, cf = col_offset + n;
  for (int l = 0; l < n; ++l) {
    Eigen::SparseMatrix<double>::InnerIterator gi(g, l), bi(b, l);
    for (; gi; ++gi, ++bi) {
      const int k = static_cast<int>(gi.row());
      const double gkl = gi.value(), bkl = bi.value();
      double dp_de = e[k] * gkl + f[k] * bkl;
      double dp_df = -e[k] * bkl + f[k] * gkl;
      double dq_de = f[k] * gkl - e[k] * bkl;
      double dq_df = -f[k] * bkl - e[k] * gkl;
      if (k == l) {
        dp_de += a[k];
        dp_df += c[k];
        dq_de -= c[k];
        dq_df += a[k];
      }
      out.emplace_back(rp + k, ce + l, scale * dp_de);
      out.emplace_back(rp + k, cf + l, scale * dp_df);
      out.emplace_back(rq + k, ce + l, scale * dq_de);
      out.emplace_back(rq + k, cf + l, scale * dq_df);
    }
  }
}

void flow_hessian_lower(const NetworkModel& model, const Eigen::VectorXd& w_p, const Eigen::VectorXd& w_q,
                        std::vector<Triplet>& out, int offset) {
  const int n = model.bus_phase_count();
  const auto& g = model.conductance();
  const auto& b = model.susceptance();
  auto lower = [&](int r, int c, double v) {
    if (r >= c) out.emplace_back(offset + r, offset + c, v);
  };
  for (int l = 0; l < n; ++l) {
    Eigen::SparseMatrix<double>::InnerIterator gi(g, l), bi(b, l);
    for (; gi; ++gi, ++bi) {
      const int k = static_cast<int>(gi.row());
      const double gkl = gi.value(), bkl = bi.value();
      const double wp = w_p[k], wq = w_q[k];
      const double same = wp * gkl - wq * bkl;  // ee and ff blocks
      lower(k, l, same);
      lower(l, k, same);
      lower(n + k, n + l, same);
      lower(n + l, n + k, same);
      // d2/de_r df_c lands at (f_c, e_r)
      out.emplace_back(offset + n + l, offset + k, -wp * bkl - wq * gkl);
      out.emplace_back(offset + n + k, offset + l, wp * bkl + wq * gkl);
    }
  }
}

Eigen::VectorXcd nodal_balance_residual(const NetworkModel& model, const StateSolution& state) {
  check_dimensions(model, state);
  Eigen::VectorXd p_out, q_out;
  flow_injections(model, state.u_re, state.u_im, p_out, q_out);
  Eigen::VectorXcd r(model.bus_phase_count());
  for (int k = 0; k < r.size(); ++k) r[k] = Complex(-p_out[k], -q_out[k]);
  for (int d = 0; d < model.device_phase_count(); ++d)
    r[model.device_bus_phase(d)] += model.device_sign(d) * Complex(state.p[d], state.q[d]);
  for (int k = 0; k < r.size(); ++k)
    if (model.is_reference(k)) r[k] = 0.0;
  return r;
}

Eigen::VectorXcd slack_injection(const NetworkModel& model, const StateSolution& state) {
  check_dimensions(model, state);
  Eigen::VectorXd p_out, q_out;
  flow_injections(model, state.u_re, state.u_im, p_out, q_out);
  Eigen::VectorXcd s = Eigen::VectorXcd::Zero(model.bus_phase_count());
  for (int k = 0; k < s.size(); ++k)
    if (model.is_reference(k)) s[k] = Complex(p_out[k], q_out[k]);
  return s;
}

PFSpec profile_spec(const NetworkModel& model) {
  PFSpec spec;
  spec.device_power.resize(model.device_phase_count());
  const auto& devices = model.network().devices();
  for (int d = 0; d < model.device_phase_count(); ++d) {
    const auto& dev = devices[model.device_of(d)];
    if (!dev.profile) throw std::invalid_argument("device '" + dev.id + "' has no profile");
    spec.device_power[d] = (*dev.profile)[dev.phases.index_of(model.device_phase_of(d))];
  }
  return spec;
}

PFSpec spec_from_json(const NetworkModel& model, const nlohmann::json& j) {
  const auto& net = model.network();
  PFSpec spec;
  spec.device_power = Eigen::VectorXcd::Constant(model.device_phase_count(), Complex(std::nan(""), 0.0));
  std::vector<char> given(net.devices().size(), 0);
  try {
    const std::string units = j.value("units", "kw");
    if (units != "kw" && units != "pu") throw std::invalid_argument("setpoint units must be 'kw' or 'pu'");
    const double scale = units == "kw" ? 1000.0 / net.bases().power_va : 1.0;
    for (const auto& dj : j.at("devices")) {
      const std::size_t d = net.device_index(dj.at("id").get<std::string>());
      const auto& dev = net.devices()[d];
      const auto p = dj.at("p").get<std::vector<double>>();
      const auto q = dj.at("q").get<std::vector<double>>();
      if (p.size() != static_cast<std::size_t>(dev.phases.size()) || q.size() != p.size())
        throw std::invalid_argument("setpoint for '" + dev.id + "' does not match its phases");
      const auto phases = dev.phases.phases();
      for (std::size_t k = 0; k < phases.size(); ++k)
        spec.device_power[model.device_phase(d, phases[k])] = Complex(p[k], q[k]) * scale;
      given[d] = 1;
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("setpoints: ") + e.what());
  }
  for (int dp = 0; dp < model.device_phase_count(); ++dp) {
    const auto& dev = net.devices()[model.device_of(dp)];
    if (given[model.device_of(dp)]) continue;
    if (!dev.profile) throw std::invalid_argument("no setpoint or profile for device '" + dev.id + "'");
    spec.device_power[dp] = (*dev.profile)[dev.phases.index_of(model.device_phase_of(dp))];
  }
  return spec;
}

nlohmann::json state_to_json(const NetworkModel& model, const StateSolution& state) {
  const auto& net = model.network();
  auto buses = nlohmann::json::array();
  for (std::size_t b = 0; b < net.buses().size(); ++b) {
    nlohmann::json ph;
    for (Phase p : net.buses()[b].phases.phases()) {
      const int k = model.bus_phase(b, p);
      const double re = state.u_re[k], im = state.u_im[k];
      ph[std::string(1, phase_char(p))] = {
          {"re", re}, {"im", im}, {"magnitude", std::hypot(re, im)}, {"angle_deg", std::atan2(im, re) * 180.0 / std::numbers::pi}};
    }
    buses.push_back({{"id", net.buses()[b].id}, {"phases", ph}});
  }
  auto devices = nlohmann::json::array();
  for (std::size_t d = 0; d < net.devices().size(); ++d) {
    nlohmann::json p, q;
    for (Phase ph : net.devices()[d].phases.phases()) {
      const int k = model.device_phase(d, ph);
      p[std::string(1, phase_char(ph))] = state.p[k];
      q[std::string(1, phase_char(ph))] = state.q[k];
    }
    devices.push_back({{"id", net.devices()[d].id}, {"p", p}, {"q", q}});
  }
  return {{"units", "pu"}, {"buses", buses}, {"devices", devices}};
}

PFResult solve_pf(const NetworkModel& model, const PFSpec& spec, const PFOptions& options) {
  const int n = model.bus_phase_count();
  if (spec.device_power.size() != model.device_phase_count())
    throw std::invalid_argument("power-flow setpoints do not cover every device-phase");

  PFResult result;
  StateSolution& s = result.state;
  s = flat_state(model, options.reference_magnitude);
  s.p = spec.device_power.real();
  s.q = spec.device_power.imag();

  // unknowns: e, f of non-reference bus-phases
  std::vector<int> slot(n, -1);
  int m = 0;
  for (int k = 0; k < n; ++k)
    if (!model.is_reference(k)) slot[k] = m++;

  Eigen::VectorXd inj_p = Eigen::VectorXd::Zero(n), inj_q = Eigen::VectorXd::Zero(n);
  for (int d = 0; d < model.device_phase_count(); ++d) {
    inj_p[model.device_bus_phase(d)] += model.device_sign(d) * s.p[d];
    inj_q[model.device_bus_phase(d)] += model.device_sign(d) * s.q[d];
  }

  auto mismatch = [&](Eigen::VectorXd& g) {
    Eigen::VectorXd p_out, q_out;
    flow_injections(model, s.u_re, s.u_im, p_out, q_out);
    g.resize(2 * m);
    for (int k = 0; k < n; ++k)
      if (slot[k] >= 0) {
        g[slot[k]] = inj_p[k] - p_out[k];
        g[m + slot[k]] = inj_q[k] - q_out[k];
      }
    return m == 0 ? 0.0 : g.lpNorm<Eigen::Infinity>();
  };

  Eigen::SparseLU<SparseMatrix> lu;
  bool analyzed = false;
  Eigen::VectorXd g;
  double err = mismatch(g);
  std::vector<Triplet> full, reduced;
  int it = 0;
  while (err >= options.tolerance) {
    if (it >= options.max_iterations)
      throw PowerFlowError("power flow did not converge in " + std::to_string(it) + " iterations (mismatch " +
                               std::to_string(err) + ")",
                           err);
    full.clear();
    flow_jacobian(model, s.u_re, s.u_im, full, 0, 0, -1.0);
    reduced.clear();
    for (const auto& t : full) {
      const int r = t.row() < n ? slot[t.row()] : (slot[t.row() - n] < 0 ? -1 : m + slot[t.row() - n]);
      const int c = t.col() < n ? slot[t.col()] : (slot[t.col() - n] < 0 ? -1 : m + slot[t.col() - n]);
      if (r >= 0 && c >= 0) reduced.emplace_back(r, c, t.value());
    }
    SparseMatrix jac(2 * m, 2 * m);
    jac.setFromTriplets(reduced.begin(), reduced.end());
    if (!analyzed) {
      lu.analyzePattern(jac);
      analyzed = true;
    }
    lu.factorize(jac);
    if (lu.info() != Eigen::Success) throw PowerFlowError("singular power-flow Jacobian", err);
    const Eigen::VectorXd dx = lu.solve(-g);
    for (int k = 0; k < n; ++k)
      if (slot[k] >= 0) {
        s.u_re[k] += dx[slot[k]];
        s.u_im[k] += dx[m + slot[k]];
      }
    ++it;
    err = mismatch(g);
    if (!std::isfinite(err)) throw PowerFlowError("power flow diverged", err);
  }
  result.report = {it, err};
  return result;
}

}  // namespace dsse::pf
