#include "dsse/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

namespace dsse::se {

using Eigen::VectorXd;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kSupportShrink = 1e-6;

bool is_log_density(const dist::UncertaintyModel& m) {
  return !std::holds_alternative<dist::Gaussian>(m) && !std::holds_alternative<dist::Laplacian>(m);
}

// Starting value for a variable observed through `m`.
double initial_value(const dist::UncertaintyModel& m) {
  if (std::holds_alternative<dist::PolynomialLogPdf>(m)) return dist::mode(m);
  return dist::mean(m);
}

// c = sum(coef * x) + constant
struct LinearRow {
  std::vector<std::pair<int, double>> terms;
  double constant = 0.0;
};

struct Term {
  std::size_t measurement;
  int var;
  TermKind kind;
  dist::UncertaintyModel model;
  double shift = 0.0;
  int slack_plus = -1, slack_minus = -1;
};

/// Variable and constraint layout plus the callback bodies. Shared read-only
/// by the closures stored in the NlpProblem.
struct Formulation {
  explicit Formulation(const Network& net) : model(net) {}

  pf::NetworkModel model;
  int nb = 0, nd = 0, n = 0;
  int n_balance = 0;
  std::vector<int> balance_row;  // per bus-phase, -1 at the reference
  std::vector<std::pair<int, int>> magnitude_aux;  // (variable, bus-phase)
  std::vector<LinearRow> linear;
  std::vector<Term> terms;
  int aux_row0 = 0, linear_row0 = 0, m = 0;

  int var_e(int k) const { return k; }
  int var_f(int k) const { return nb + k; }
  int var_p(int d) const { return 2 * nb + d; }
  int var_q(int d) const { return 2 * nb + nd + d; }

  double objective(const VectorXd& x) const {
    double v = 0.0;
    for (const auto& t : terms) {
      switch (t.kind) {
        case TermKind::squared: {
          const auto& g = std::get<dist::Gaussian>(t.model);
          const double r = (x[t.var] - g.mu) / g.sigma;
          v += r * r;
          break;
        }
        case TermKind::absolute:
          v += (x[t.slack_plus] + x[t.slack_minus]) / std::get<dist::Laplacian>(t.model).b;
          break;
        case TermKind::log_density:
          v += t.shift - dist::logpdf(t.model, x[t.var]);
          break;
      }
    }
    return v;
  }

  void gradient(const VectorXd& x, VectorXd& g) const {
    g.setZero(n);
    for (const auto& t : terms) {
      switch (t.kind) {
        case TermKind::squared: {
          const auto& gs = std::get<dist::Gaussian>(t.model);
          g[t.var] += 2.0 * (x[t.var] - gs.mu) / (gs.sigma * gs.sigma);
          break;
        }
        case TermKind::absolute: {
          const double ib = 1.0 / std::get<dist::Laplacian>(t.model).b;
          g[t.slack_plus] += ib;
          g[t.slack_minus] += ib;
          break;
        }
        case TermKind::log_density:
          g[t.var] -= dist::dlogpdf(t.model, x[t.var]);
          break;
      }
    }
  }

  void constraints(const VectorXd& x, VectorXd& c) const {
    c.resize(m);
    VectorXd p_out, q_out;
    pf::flow_injections(model, x.head(nb), x.segment(nb, nb), p_out, q_out);
    for (int k = 0; k < nb; ++k) {
      const int r = balance_row[k];
      if (r < 0) continue;
      c[r] = -p_out[k];
      c[n_balance + r] = -q_out[k];
    }
    for (int d = 0; d < nd; ++d) {
      const int r = balance_row[model.device_bus_phase(d)];
      if (r < 0) continue;
      c[r] += model.device_sign(d) * x[var_p(d)];
      c[n_balance + r] += model.device_sign(d) * x[var_q(d)];
    }
    for (std::size_t a = 0; a < magnitude_aux.size(); ++a) {
      const auto [v, k] = magnitude_aux[a];
      c[aux_row0 + a] = x[v] * x[v] - x[var_e(k)] * x[var_e(k)] - x[var_f(k)] * x[var_f(k)];
    }
    for (std::size_t i = 0; i < linear.size(); ++i) {
      double s = linear[i].constant;
      for (const auto& [col, coef] : linear[i].terms) s += coef * x[col];
      c[linear_row0 + i] = s;
    }
  }

  void jacobian(const VectorXd& x, std::vector<nlp::Triplet>& out) const {
    out.clear();
    std::vector<nlp::Triplet> flow;
    pf::flow_jacobian(model, x.head(nb), x.segment(nb, nb), flow, 0, 0, -1.0);
    for (const auto& t : flow) {
      const int k = t.row() % nb;
      const int r = balance_row[k];
      if (r < 0) continue;
      out.emplace_back(t.row() < nb ? r : n_balance + r, t.col(), t.value());
    }
    for (int d = 0; d < nd; ++d) {
      const int r = balance_row[model.device_bus_phase(d)];
      if (r < 0) continue;
      out.emplace_back(r, var_p(d), model.device_sign(d));
      out.emplace_back(n_balance + r, var_q(d), model.device_sign(d));
    }
    for (std::size_t a = 0; a < magnitude_aux.size(); ++a) {
      const auto [v, k] = magnitude_aux[a];
      const int r = aux_row0 + static_cast<int>(a);
      out.emplace_back(r, v, 2.0 * x[v]);
      out.emplace_back(r, var_e(k), -2.0 * x[var_e(k)]);
      out.emplace_back(r, var_f(k), -2.0 * x[var_f(k)]);
    }
    for (std::size_t i = 0; i < linear.size(); ++i)
      for (const auto& [col, coef] : linear[i].terms) out.emplace_back(linear_row0 + static_cast<int>(i), col, coef);
  }

  void hessian(const VectorXd& x, double of, const VectorXd& lambda, std::vector<nlp::Triplet>& out) const {
    out.clear();
    for (const auto& t : terms) {
      if (t.kind == TermKind::squared) {
        const double s = std::get<dist::Gaussian>(t.model).sigma;
        out.emplace_back(t.var, t.var, of * 2.0 / (s * s));
      } else if (t.kind == TermKind::log_density) {
        out.emplace_back(t.var, t.var, -of * dist::d2logpdf(t.model, x[t.var]));
      }
    }
    // balance rows are (injection - flow), hence the negated weights
    VectorXd wp = VectorXd::Zero(nb), wq = VectorXd::Zero(nb);
    for (int k = 0; k < nb; ++k) {
      const int r = balance_row[k];
      if (r < 0) continue;
      wp[k] = -lambda[r];
      wq[k] = -lambda[n_balance + r];
    }
    pf::flow_hessian_lower(model, wp, wq, out, 0);
    for (std::size_t a = 0; a < magnitude_aux.size(); ++a) {
      const auto [v, k] = magnitude_aux[a];
      const double l = lambda[aux_row0 + a];
      out.emplace_back(v, v, 2.0 * l);
      out.emplace_back(var_e(k), var_e(k), -2.0 * l);
      out.emplace_back(var_f(k), var_f(k), -2.0 * l);
    }
  }
};

// Variable observed by a measurement target; -1 for |U| (handled by an auxiliary).
int target_variable(const Formulation& fm, const Network& net, const MeasurementTarget& t) {
  if (t.quantity == Quantity::voltage_magnitude) return -1;
  const auto dev = net.find_device(t.entity);
  if (!dev) throw ConfigError("measurement references unknown device '" + t.entity + "'");
  if (!net.devices()[*dev].phases.contains(t.phase))
    throw ConfigError("device '" + t.entity + "' has no phase " + std::string(1, phase_char(t.phase)));
  const int d = fm.model.device_phase(*dev, t.phase);
  return t.quantity == Quantity::active_power ? fm.var_p(d) : fm.var_q(d);
}

int target_bus_phase(const Formulation& fm, const Network& net, const MeasurementTarget& t) {
  const auto bus = net.find_bus(t.entity);
  if (!bus) throw ConfigError("measurement references unknown bus '" + t.entity + "'");
  if (!net.buses()[*bus].phases.contains(t.phase))
    throw ConfigError("bus '" + t.entity + "' has no phase " + std::string(1, phase_char(t.phase)));
  return fm.model.bus_phase(*bus, t.phase);
}

std::string summary(const std::vector<Measurement>& ms) {
  std::size_t pseudo = 0;
  for (const auto& m : ms) pseudo += m.kind == MeasurementKind::pseudo;
  return std::to_string(ms.size()) + " measurements (" + std::to_string(ms.size() - pseudo) + " real, " +
         std::to_string(pseudo) + " pseudo)";
}

std::shared_ptr<Formulation> formulate(const Network& net, const std::vector<Measurement>& ms,
                                       const EstimatorConfig& cfg, VectorXd& lower, VectorXd& upper, VectorXd& x0) {
  auto fm = std::make_shared<Formulation>(net);
  auto& model = fm->model;
  fm->nb = model.bus_phase_count();
  fm->nd = model.device_phase_count();
  const int nb = fm->nb, nd = fm->nd;

  // measurement targets and the |U| auxiliaries they need
  std::vector<int> meas_var(ms.size());
  std::vector<int> aux_of_bp(nb, -1);
  int next = 2 * nb + 2 * nd;
  bool has_voltage = false;
  for (std::size_t i = 0; i < ms.size(); ++i) {
    dist::check(ms[i].model);
    const auto& t = ms[i].target;
    if (t.quantity == Quantity::voltage_magnitude) {
      has_voltage = true;
      const int k = target_bus_phase(*fm, net, t);
      if (aux_of_bp[k] < 0) {
        aux_of_bp[k] = next++;
        fm->magnitude_aux.emplace_back(aux_of_bp[k], k);
      }
      meas_var[i] = aux_of_bp[k];
    } else {
      meas_var[i] = target_variable(*fm, net, t);
    }
  }
  if (!has_voltage) throw ConfigError("underdetermined: no voltage magnitude measurement anchors the state");

  // Laplacian terms get a pair of nonnegative slacks each
  for (std::size_t i = 0; i < ms.size(); ++i) {
    Term term{i, meas_var[i], TermKind::squared, ms[i].model};
    if (std::holds_alternative<dist::Laplacian>(ms[i].model)) {
      term.kind = TermKind::absolute;
      term.slack_plus = next++;
      term.slack_minus = next++;
    } else if (is_log_density(ms[i].model)) {
      term.kind = TermKind::log_density;
      term.shift = dist::shift_constant(ms[i].model, cfg.literal_shift) + cfg.xi_offset;
    }
    fm->terms.push_back(std::move(term));
  }
  fm->n = next;
  const int n = next;

  lower = VectorXd::Constant(n, -kInf);
  upper = VectorXd::Constant(n, kInf);
  x0 = VectorXd::Zero(n);
  for (int k = 0; k < nb; ++k) {
    lower[fm->var_e(k)] = lower[fm->var_f(k)] = -cfg.u_max;
    upper[fm->var_e(k)] = upper[fm->var_f(k)] = cfg.u_max;
    const double th = pf::reference_angle(model.phase_of(k));
    x0[fm->var_e(k)] = std::cos(th);
    x0[fm->var_f(k)] = std::sin(th);
  }
  for (int v = 2 * nb; v < 2 * nb + 2 * nd; ++v) {
    lower[v] = cfg.power_min;
    upper[v] = cfg.power_max;
  }
  for (const auto& [v, k] : fm->magnitude_aux) {
    lower[v] = cfg.u_min;
    upper[v] = cfg.u_max;
    x0[v] = 1.0;
  }
  // a variable observed several times starts at its most precise reading
  std::vector<double> seed_var(n, kInf);
  for (const auto& t : fm->terms) {
    if (t.kind == TermKind::log_density) {
      // keep log-densities finite: stay inside the (shrunk) support
      auto [lo, hi] = dist::support(t.model);
      if (std::isfinite(lo) && std::isfinite(hi)) {
        const double pad = kSupportShrink * (hi - lo);
        lo += pad;
        hi -= pad;
      }
      lower[t.var] = std::max(lower[t.var], lo);
      upper[t.var] = std::min(upper[t.var], hi);
      if (lower[t.var] >= upper[t.var])
        throw ConfigError("measurement " + std::to_string(t.measurement) + ": support does not meet the variable box");
    }
    const double var = dist::variance(t.model);
    if (!(var >= seed_var[t.var])) {
      x0[t.var] = initial_value(t.model);
      seed_var[t.var] = var;
    }
    if (t.kind == TermKind::absolute) {
      lower[t.slack_plus] = lower[t.slack_minus] = 0.0;
    }
  }
  for (int v = 0; v < n; ++v)
    if (x0[v] <= lower[v] || x0[v] >= upper[v]) {
      const double width = upper[v] - lower[v];
      x0[v] = std::isfinite(width) ? std::clamp(x0[v], lower[v] + 0.01 * width, upper[v] - 0.01 * width)
                                   : std::clamp(x0[v], lower[v] + 1.0, upper[v] - 1.0);
    }
  for (const auto& t : fm->terms)
    if (t.kind == TermKind::absolute) {
      const double mu = std::get<dist::Laplacian>(t.model).mu;
      x0[t.slack_plus] = std::max(0.0, x0[t.var] - mu);
      x0[t.slack_minus] = std::max(0.0, mu - x0[t.var]);
    }

  // constraint rows: balance, |U| auxiliaries, then linear rows
  fm->balance_row.assign(nb, -1);
  for (int k = 0; k < nb; ++k)
    if (!model.is_reference(k)) fm->balance_row[k] = fm->n_balance++;
  fm->aux_row0 = 2 * fm->n_balance;
  fm->linear_row0 = fm->aux_row0 + static_cast<int>(fm->magnitude_aux.size());

  // reference angle: the voltage phasor lies on its reference ray
  for (int k = 0; k < nb; ++k) {
    if (!model.is_reference(k)) continue;
    const double th = pf::reference_angle(model.phase_of(k));
    fm->linear.push_back({{{fm->var_e(k), -std::sin(th)}, {fm->var_f(k), std::cos(th)}}, 0.0});
  }

  std::set<int> grouped;
  for (const auto& g : cfg.pv_correlation_groups) {
    if (g.quantity == Quantity::voltage_magnitude) throw ConfigError("correlation groups apply to powers only");
    if (g.members.size() < 2) throw ConfigError("correlation group needs at least two members");
    std::vector<std::pair<int, double>> vs;
    for (const auto& mem : g.members) {
      if (!(mem.scale > 0.0)) throw ConfigError("correlation scale must be positive");
      const auto tgt = g.quantity == Quantity::active_power ? MeasurementTarget::active(mem.device, mem.phase)
                                                            : MeasurementTarget::reactive(mem.device, mem.phase);
      const int v = target_variable(*fm, net, tgt);
      if (!grouped.insert(v).second) throw ConfigError("correlation groups overlap at device '" + mem.device + "'");
      vs.emplace_back(v, mem.scale);
    }
    // s0 * v_i - s_i * v0 = 0
    for (std::size_t i = 1; i < vs.size(); ++i)
      fm->linear.push_back({{{vs[i].first, vs[0].second}, {vs[0].first, -vs[i].second}}, 0.0});
  }

  if (cfg.constant_pf) {
    const double k2 = cfg.constant_pf->k2;
    std::set<int> q_measured;
    for (std::size_t i = 0; i < ms.size(); ++i)
      if (ms[i].target.quantity == Quantity::reactive_power) q_measured.insert(meas_var[i]);
    for (const auto& id : cfg.constant_pf->devices) {
      const auto dev = net.find_device(id);
      if (!dev) throw ConfigError("constant power factor references unknown device '" + id + "'");
      for (Phase p : net.devices()[*dev].phases.phases()) {
        const int d = model.device_phase(*dev, p);
        if (q_measured.count(fm->var_q(d)))
          throw ConfigError("device '" + id + "' has both a constant power factor and a reactive measurement");
        fm->linear.push_back({{{fm->var_q(d), 1.0}, {fm->var_p(d), -k2}}, 0.0});
        x0[fm->var_q(d)] = k2 * x0[fm->var_p(d)];
      }
    }
  }

  for (const auto& t : fm->terms)
    if (t.kind == TermKind::absolute)
      fm->linear.push_back({{{t.var, 1.0}, {t.slack_plus, -1.0}, {t.slack_minus, 1.0}},
                            -std::get<dist::Laplacian>(t.model).mu});

  fm->m = fm->linear_row0 + static_cast<int>(fm->linear.size());
  return fm;
}

Phase phase_field(const nlohmann::json& j) { return phase_from_string(j.at("phase").get<std::string>()); }

const char* quantity_name(Quantity q) {
  switch (q) {
    case Quantity::voltage_magnitude: return "voltage_magnitude";
    case Quantity::active_power: return "active_power";
    case Quantity::reactive_power: return "reactive_power";
  }
  return "?";
}

Quantity quantity_from(const std::string& s) {
  if (s == "voltage_magnitude") return Quantity::voltage_magnitude;
  if (s == "active_power" || s == "p") return Quantity::active_power;
  if (s == "reactive_power" || s == "q") return Quantity::reactive_power;
  throw ParseError("unknown measurement quantity '" + s + "'");
}

}  // namespace

SEProblem build_problem(const Network& network, const std::vector<Measurement>& measurements,
                        const EstimatorConfig& config) {
  SEProblem out;
  VectorXd lower, upper, x0;
  auto fm = formulate(network, measurements, config, lower, upper, x0);
  out.bus_phases = fm->nb;
  out.device_phases = fm->nd;
  out.magnitude_aux = static_cast<int>(fm->magnitude_aux.size());
  for (const auto& t : fm->terms) {
    out.terms.push_back({t.measurement, t.var, t.kind, t.shift});
    out.laplace_slacks += t.kind == TermKind::absolute ? 2 : 0;
  }
  auto& p = out.nlp;
  p.n = fm->n;
  p.m = fm->m;
  p.lower = lower;
  p.upper = upper;
  p.x0 = x0;
  p.objective = [fm](const VectorXd& x) { return fm->objective(x); };
  p.gradient = [fm](const VectorXd& x, VectorXd& g) { fm->gradient(x, g); };
  p.constraints = [fm](const VectorXd& x, VectorXd& c) { fm->constraints(x, c); };
  p.jacobian = [fm](const VectorXd& x, std::vector<nlp::Triplet>& t) { fm->jacobian(x, t); };
  p.hessian = [fm](const VectorXd& x, double of, const VectorXd& l, std::vector<nlp::Triplet>& t) {
    fm->hessian(x, of, l, t);
  };
  return out;
}

namespace {

SEResult run(const Network& net, const std::vector<Measurement>& ms, const EstimatorConfig& cfg) {
  const auto sp = build_problem(net, ms, cfg);
  const auto sol = nlp::solve(sp.nlp, cfg.solver);

  SEResult r;
  r.state.u_re = sol.x.segment(sp.e(0), sp.bus_phases);
  r.state.u_im = sol.x.segment(sp.f(0), sp.bus_phases);
  r.state.p = sol.x.segment(sp.p(0), sp.device_phases);
  r.state.q = sol.x.segment(sp.q(0), sp.device_phases);
  r.report = sol.report;
  const pf::NetworkModel model(net);
  r.residuals.reserve(ms.size());
  for (const auto& m : ms) {
    r.residuals.push_back(residual(m, model, r.state, cfg));
    r.objective += r.residuals.back();
  }
  return r;
}

}  // namespace

SEResult try_estimate(const Network& network, const std::vector<Measurement>& measurements,
                      const EstimatorConfig& config) {
  return run(network, measurements, config);
}

SEResult estimate(const Network& network, const std::vector<Measurement>& measurements,
                  const EstimatorConfig& config) {
  auto r = run(network, measurements, config);
  if (r.report.status != nlp::Status::optimal) {
    std::string what = "state estimation ended with status " + std::string(nlp::to_string(r.report.status)) +
                       " on " + summary(measurements);
    if (!r.report.message.empty()) what += ": " + r.report.message;
    throw EstimationError(what, std::move(r));
  }
  return r;
}

double residual(const Measurement& m, const pf::NetworkModel& model, const pf::StateSolution& state,
                const EstimatorConfig& config) {
  const auto& net = model.network();
  const auto& t = m.target;
  double x = 0.0;
  if (t.quantity == Quantity::voltage_magnitude) {
    const int k = model.bus_phase(net.bus_index(t.entity), t.phase);
    x = std::hypot(state.u_re[k], state.u_im[k]);
  } else {
    const int d = model.device_phase(net.device_index(t.entity), t.phase);
    x = t.quantity == Quantity::active_power ? state.p[d] : state.q[d];
  }
  if (const auto* g = std::get_if<dist::Gaussian>(&m.model)) {
    const double r = (x - g->mu) / g->sigma;
    return r * r;
  }
  if (const auto* l = std::get_if<dist::Laplacian>(&m.model)) return std::abs(x - l->mu) / l->b;
  return dist::shift_constant(m.model, config.literal_shift) + config.xi_offset - dist::logpdf(m.model, x);
}

dist::UncertaintyModel reactive_rescale(const dist::UncertaintyModel& model, double k1) {
  if (!(k1 > 0.0)) throw dist::UnsupportedModel("reactive rescaling needs k1 > 0");
  return dist::scaled(model, k1);
}

Measurement measurement_from_json(const nlohmann::json& j, const Network& network) {
  try {
    Measurement m;
    const auto& t = j.at("target");
    m.target.quantity = quantity_from(t.at("quantity").get<std::string>());
    m.target.phase = phase_field(t);
    if (m.target.quantity == Quantity::voltage_magnitude)
      m.target.entity = t.at("bus").get<std::string>();
    else
      m.target.entity = t.at("device").get<std::string>();
    m.model = dist::from_json(j.at("model"));
    const std::string kind = j.value("kind", "real");
    if (kind == "real")
      m.kind = MeasurementKind::real;
    else if (kind == "pseudo")
      m.kind = MeasurementKind::pseudo;
    else
      throw ParseError("unknown measurement kind '" + kind + "'");

    const std::string unit = j.value("unit", "pu");
    double factor = 1.0;
    if (unit == "volt") {
      if (m.target.quantity != Quantity::voltage_magnitude) throw ParseError("unit 'volt' on a power measurement");
      const auto bus = network.find_bus(m.target.entity);
      if (!bus) throw ParseError("unknown bus '" + m.target.entity + "'");
      factor = 1.0 / network.buses()[*bus].base_voltage;
    } else if (unit == "kw" || unit == "kvar") {
      if (m.target.quantity == Quantity::voltage_magnitude) throw ParseError("power unit on a voltage measurement");
      factor = 1000.0 / network.bases().power_va;
    } else if (unit != "pu") {
      throw ParseError("unknown unit '" + unit + "'");
    }
    if (factor != 1.0) m.model = dist::scaled(m.model, factor);
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("measurement: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ParseError(std::string("measurement: ") + e.what());
  }
}

nlohmann::json measurement_to_json(const Measurement& m) {
  nlohmann::json t{{"quantity", quantity_name(m.target.quantity)},
                   {"phase", std::string(1, phase_char(m.target.phase))}};
  t[m.target.quantity == Quantity::voltage_magnitude ? "bus" : "device"] = m.target.entity;
  return {{"target", t},
          {"model", dist::to_json(m.model)},
          {"kind", m.kind == MeasurementKind::real ? "real" : "pseudo"},
          {"unit", "pu"}};
}

std::vector<Measurement> measurements_from_json(const nlohmann::json& j, const Network& network) {
  const auto& list = j.is_object() ? j.at("measurements") : j;
  if (!list.is_array()) throw ParseError("measurements must be a list");
  std::vector<Measurement> out;
  for (const auto& m : list) out.push_back(measurement_from_json(m, network));
  return out;
}

nlohmann::json measurements_to_json(const std::vector<Measurement>& ms) {
  auto list = nlohmann::json::array();
  for (const auto& m : ms) list.push_back(measurement_to_json(m));
  return {{"measurements", list}};
}

EstimatorConfig config_from_json(const nlohmann::json& j) {
  try {
    EstimatorConfig c;
    if (j.contains("pv_correlation_groups")) {
      for (const auto& g : j.at("pv_correlation_groups")) {
        CorrelationGroup grp;
        grp.quantity = quantity_from(g.value("quantity", "active_power"));
        for (const auto& mem : g.at("members"))
          grp.members.push_back({mem.at("device").get<std::string>(), phase_field(mem), mem.value("scale", 1.0)});
        c.pv_correlation_groups.push_back(std::move(grp));
      }
    }
    if (j.contains("constant_pf") && !j.at("constant_pf").is_null()) {
      const auto& pfj = j.at("constant_pf");
      ConstantPowerFactor cpf;
      cpf.k2 = pfj.contains("k2") ? pfj.at("k2").get<double>()
                                  : std::tan(std::acos(pfj.at("power_factor").get<double>()));
      cpf.devices = pfj.at("devices").get<std::vector<std::string>>();
      c.constant_pf = cpf;
    }
    if (j.contains("solver")) {
      const auto& s = j.at("solver");
      c.solver.tol_stat = s.value("tol_stat", c.solver.tol_stat);
      c.solver.tol_feas = s.value("tol_feas", c.solver.tol_feas);
      c.solver.max_iterations = s.value("max_iterations", c.solver.max_iterations);
      c.solver.mu_init = s.value("mu_init", c.solver.mu_init);
      c.solver.verbose = s.value("verbose", false);
      const std::string h = s.value("hessian", "exact");
      if (h == "gauss_newton")
        c.solver.hessian = nlp::HessianMode::gauss_newton;
      else if (h != "exact")
        throw ParseError("unknown hessian mode '" + h + "'");
    }
    if (j.contains("bounds")) {
      const auto& b = j.at("bounds");
      c.u_min = b.value("u_min", c.u_min);
      c.u_max = b.value("u_max", c.u_max);
      if (b.contains("power_min")) c.power_min = b.at("power_min").get<double>();
      if (b.contains("power_max")) c.power_max = b.at("power_max").get<double>();
    }
    c.xi_offset = j.value("xi_offset", 0.0);
    c.literal_shift = j.value("literal_shift", false);
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("estimator config: ") + e.what());
  }
}

nlohmann::json result_to_json(const SEResult& r, const Network& network) {
  nlohmann::json j = pf::state_to_json(pf::NetworkModel(network), r.state);
  j["status"] = nlp::to_string(r.report.status);
  j["iterations"] = r.report.iterations;
  j["objective"] = r.objective;
  j["stationarity"] = r.report.stationarity;
  j["constraint_violation"] = r.report.constraint_violation;
  j["solve_time_s"] = r.report.wall_time_s;
  j["residuals"] = r.residuals;
  return j;
}

}  // namespace dsse::se
