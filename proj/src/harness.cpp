#include "dsse/harness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <mutex>
#include <numeric>
#include <ostream>
#include <random>
#include <thread>

namespace dsse::mc {

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

ReactiveModel reactive_from_json(const nlohmann::json& j) {
  ReactiveModel r;
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "independent") {
    r.kind = ReactiveKind::independent;
    r.k = j.at("k1").get<double>();
  } else if (kind == "constant_pf") {
    r.kind = ReactiveKind::constant_pf;
    if (j.contains("power_factor")) {
      const double pf = j.at("power_factor").get<double>();
      if (!(pf > 0.0 && pf <= 1.0)) throw std::invalid_argument("power_factor must lie in (0, 1]");
      r.k = std::tan(std::acos(pf));
    } else {
      r.k = j.at("k2").get<double>();
    }
  } else {
    throw std::invalid_argument("unknown reactive model '" + kind + "'");
  }
  return r;
}

// Complex power of a device-phase from the device profile.
Complex profile_power(const Device& dev, Phase p) {
  if (!dev.profile) throw std::invalid_argument("device '" + dev.id + "' has no profile");
  return dev.profile->at(static_cast<std::size_t>(dev.phases.index_of(p)));
}

std::string status_text(nlp::Status s) { return nlp::to_string(s); }

}  // namespace

ScenarioConfig scenario_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  ScenarioConfig c;
  try {
    std::filesystem::path net = j.at("network").get<std::string>();
    c.network = net.is_relative() && !base_dir.empty() ? base_dir / net : net;
    c.original = dist::from_json(j.at("original"));
    if (j.contains("approximations"))
      for (const auto& [name, m] : j.at("approximations").items()) c.approximations[name] = dist::from_json(m);
    if (j.contains("models")) c.models = j.at("models").get<std::vector<std::string>>();
    c.reactive = reactive_from_json(j.at("reactive"));
    if (j.contains("smart_meter")) {
      const auto& sm = j.at("smart_meter");
      c.sm_voltage_sigma_v = sm.value("voltage_sigma_v", c.sm_voltage_sigma_v);
      c.sm_power_sigma_fraction = sm.value("power_sigma_fraction_of_ga", c.sm_power_sigma_fraction);
      if (sm.contains("power_sigma_pu")) c.sm_power_sigma_pu = sm.at("power_sigma_pu").get<double>();
      c.reference_bus_voltage = sm.value("reference_bus_voltage", c.reference_bus_voltage);
    }
    if (j.contains("ratios")) c.ratios = j.at("ratios").get<std::vector<double>>();
    c.runs = j.value("runs", c.runs);
    c.seed = j.value("seed", c.seed);
    const auto norm = j.value("normalization", std::string("buses"));
    if (norm == "buses") c.normalization = Normalization::buses;
    else if (norm == "bus_phases") c.normalization = Normalization::bus_phases;
    else throw std::invalid_argument("unknown normalization '" + norm + "'");
    if (j.contains("estimator")) c.estimator = se::config_from_json(j.at("estimator"));
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("scenario config: ") + e.what());
  }
  // sampling needs a normalized polynomial
  if (auto* p = std::get_if<dist::PolynomialLogPdf>(&c.original); p && !p->log_normalizer)
    *p = dist::normalized(*p);
  check(c);
  return c;
}

ScenarioConfig load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open scenario config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
  return scenario_from_json(j, path.parent_path());
}

void check(const ScenarioConfig& c) {
  dist::check(c.original);
  for (const auto& [name, m] : c.approximations) {
    if (name == "exact") throw std::invalid_argument("'exact' is reserved for the original model");
    dist::check(m);
  }
  if (c.models.empty()) throw std::invalid_argument("no models to estimate with");
  for (const auto& m : c.models) model_named(c, m);
  if (c.ratios.empty()) throw std::invalid_argument("empty ratio sweep");
  for (double r : c.ratios)
    if (!(r >= 0.0 && r < 1.0)) throw std::invalid_argument("pseudo ratio must lie in [0, 1)");
  if (c.runs < 1) throw std::invalid_argument("runs must be at least 1");
  if (!(c.reactive.k > 0.0) && c.reactive.kind == ReactiveKind::independent)
    throw std::invalid_argument("k1 must be positive");
  if (!(c.reactive.k >= 0.0)) throw std::invalid_argument("k2 must be nonnegative");
  if (!(c.sm_voltage_sigma_v > 0.0)) throw std::invalid_argument("voltage sigma must be positive");
  if (!(sm_power_sigma(c) > 0.0)) throw std::invalid_argument("power sigma must be positive");
}

const dist::UncertaintyModel& model_named(const ScenarioConfig& c, const std::string& name) {
  if (name == "exact") return c.original;
  const auto it = c.approximations.find(name);
  if (it == c.approximations.end()) throw std::invalid_argument("unknown model '" + name + "'");
  return it->second;
}

double sm_power_sigma(const ScenarioConfig& c) {
  if (c.sm_power_sigma_pu) return *c.sm_power_sigma_pu;
  const auto it = c.approximations.find("ga");
  const double ga = it != c.approximations.end() && std::holds_alternative<dist::Gaussian>(it->second)
                        ? std::get<dist::Gaussian>(it->second).sigma
                        : dist::ga_fit(c.original).sigma;
  return c.sm_power_sigma_fraction * ga;
}

Scenario generate_scenario(const Network& network, const ScenarioConfig& config, double ratio, std::uint64_t seed) {
  if (!(ratio >= 0.0 && ratio < 1.0)) throw std::invalid_argument("pseudo ratio must lie in [0, 1)");
  dist::Rng rng(seed);
  pf::NetworkModel model(network);
  Scenario s;
  s.ratio = ratio;
  s.seed = seed;

  const std::size_t users = network.devices().size();
  std::vector<std::size_t> order(users);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_pseudo = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(users)));
  s.pseudo_devices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_pseudo));
  std::sort(s.pseudo_devices.begin(), s.pseudo_devices.end());
  std::vector<char> pseudo(users, 0);
  for (auto d : s.pseudo_devices) pseudo[d] = 1;

  const dist::UncertaintyModel q_model = config.reactive.kind == ReactiveKind::independent
                                             ? se::reactive_rescale(config.original, config.reactive.k)
                                             : dist::UncertaintyModel{};
  pf::PFSpec spec;
  spec.device_power.resize(model.device_phase_count());
  for (int dp = 0; dp < model.device_phase_count(); ++dp) {
    const auto& dev = network.devices()[model.device_of(dp)];
    if (!pseudo[model.device_of(dp)]) {
      spec.device_power[dp] = profile_power(dev, model.device_phase_of(dp));
      continue;
    }
    const double p = dist::sample(config.original, rng);
    const double q = config.reactive.kind == ReactiveKind::independent ? dist::sample(q_model, rng)
                                                                       : config.reactive.k * p;
    spec.device_power[dp] = {p, q};
  }

  try {
    s.truth = pf::solve_pf(model, spec).state;
  } catch (const pf::PowerFlowError& e) {
    throw ScenarioError("power flow did not converge for seed " + std::to_string(seed) + ": " + e.what(), seed);
  }

  const double sigma_v = config.sm_voltage_sigma_v / network.bases().voltage_v;
  const double sigma_p = sm_power_sigma(config);
  std::normal_distribution<double> noise;
  const Eigen::VectorXd mag = s.truth.magnitude();
  for (int dp = 0; dp < model.device_phase_count(); ++dp) {
    const std::size_t d = model.device_of(dp);
    if (pseudo[d]) continue;
    const auto& dev = network.devices()[d];
    const Phase ph = model.device_phase_of(dp);
    const int bp = model.device_bus_phase(dp);
    s.smart_meter.push_back({se::MeasurementTarget::active(dev.id, ph),
                             dist::Gaussian{s.truth.p[dp] + sigma_p * noise(rng), sigma_p}});
    s.smart_meter.push_back({se::MeasurementTarget::reactive(dev.id, ph),
                             dist::Gaussian{s.truth.q[dp] + sigma_p * noise(rng), sigma_p}});
    s.smart_meter.push_back({se::MeasurementTarget::voltage(dev.bus, ph),
                             dist::Gaussian{mag[bp] + sigma_v * noise(rng), sigma_v}});
  }
  if (config.reference_bus_voltage) {
    const auto& ref = network.buses()[model.reference_bus()];
    for (Phase ph : ref.phases.phases()) {
      const int bp = model.bus_phase(model.reference_bus(), ph);
      s.smart_meter.push_back({se::MeasurementTarget::voltage(ref.id, ph),
                               dist::Gaussian{mag[bp] + sigma_v * noise(rng), sigma_v}});
    }
  }
  return s;
}

std::vector<se::Measurement> measurement_set(const Scenario& scenario, const Network& network,
                                             const ScenarioConfig& config, const std::string& name) {
  const auto& m = model_named(config, name);
  std::optional<dist::UncertaintyModel> q_model;
  if (config.reactive.kind == ReactiveKind::independent) q_model = se::reactive_rescale(m, config.reactive.k);
  std::vector<se::Measurement> ms = scenario.smart_meter;
  for (auto d : scenario.pseudo_devices) {
    const auto& dev = network.devices()[d];
    for (Phase ph : dev.phases.phases()) {
      ms.push_back({se::MeasurementTarget::active(dev.id, ph), m, se::MeasurementKind::pseudo});
      if (q_model) ms.push_back({se::MeasurementTarget::reactive(dev.id, ph), *q_model, se::MeasurementKind::pseudo});
    }
  }
  return ms;
}

se::EstimatorConfig estimator_config(const Scenario& scenario, const Network& network, const ScenarioConfig& config) {
  se::EstimatorConfig cfg = config.estimator;
  if (config.reactive.kind == ReactiveKind::constant_pf && !scenario.pseudo_devices.empty()) {
    se::ConstantPowerFactor pf{config.reactive.k, {}};
    for (auto d : scenario.pseudo_devices) pf.devices.push_back(network.devices()[d].id);
    cfg.constant_pf = std::move(pf);
  }
  return cfg;
}

Metrics metrics(const pf::StateSolution& truth, const pf::StateSolution& estimate, const Network& network,
                Normalization normalization) {
  pf::NetworkModel model(network);
  const int nbp = model.bus_phase_count();
  if (truth.u_re.size() != nbp || estimate.u_re.size() != nbp)
    throw std::invalid_argument("metrics: state does not match the network");
  Metrics m;
  const Eigen::VectorXd diff = (truth.magnitude() - estimate.magnitude()).cwiseAbs();
  const double count = normalization == Normalization::buses ? static_cast<double>(network.buses().size())
                                                             : static_cast<double>(nbp);
  m.du_avg = diff.sum() / count;
  m.du_max = nbp > 0 ? diff.maxCoeff() : 0.0;

  // active power through the branches at the reference bus, per phase
  const auto ft = pf::branch_flows(model, truth);
  const auto fe = pf::branch_flows(model, estimate);
  std::array<double, 3> pt{0, 0, 0}, pe{0, 0, 0};
  for (std::size_t b = 0; b < network.branches().size(); ++b) {
    const bool at_from = model.bus_of(model.branch_from(b).front()) == model.reference_bus();
    const bool at_to = !model.branch_to(b).empty() && model.bus_of(model.branch_to(b).front()) == model.reference_bus();
    if (!at_from && !at_to) continue;
    const auto& idx = at_from ? model.branch_from(b) : model.branch_to(b);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const auto k = static_cast<std::size_t>(model.phase_of(idx[r]));
      const auto rr = static_cast<Eigen::Index>(r);
      pt[k] += (at_from ? ft[b].s_from : ft[b].s_to)(rr, rr).real();
      pe[k] += (at_from ? fe[b].s_from : fe[b].s_to)(rr, rr).real();
    }
  }
  const double kw = network.bases().power_va / 1000.0;
  for (int k = 0; k < 3; ++k) m.dpt_kw[k] = std::abs(pt[k] - pe[k]) * kw;
  return m;
}

std::uint64_t stream_seed(std::uint64_t master, std::size_t ratio_index, int run) {
  std::uint64_t s = master;
  const std::uint64_t a = splitmix64(s);
  std::uint64_t t = a ^ (static_cast<std::uint64_t>(ratio_index) << 32) ^ static_cast<std::uint64_t>(run);
  return splitmix64(t);
}

double quantile(std::vector<double> v, double q) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

std::vector<SummaryRow> summarize(const std::vector<RunRecord>& records) {
  // keep first-seen order of ratios and models
  std::vector<std::pair<double, std::string>> keys;
  for (const auto& r : records) {
    const std::pair<double, std::string> k{r.ratio, r.model};
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) keys.push_back(k);
  }
  std::vector<SummaryRow> rows;
  for (const auto& [ratio, model] : keys) {
    SummaryRow row;
    row.ratio = ratio;
    row.model = model;
    std::vector<double> avg, mx, t;
    for (const auto& r : records) {
      if (r.ratio != ratio || r.model != model) continue;
      ++row.runs;
      if (r.status != "optimal" || !r.metrics) continue;
      ++row.optimal;
      avg.push_back(r.metrics->du_avg);
      mx.push_back(r.metrics->du_max);
      t.push_back(r.solve_time_s);
    }
    row.du_avg_median = quantile(avg, 0.5);
    row.du_avg_q25 = quantile(avg, 0.25);
    row.du_avg_q75 = quantile(avg, 0.75);
    row.du_max_median = quantile(mx, 0.5);
    row.solve_time_median = quantile(t, 0.5);
    row.solve_time_max = t.empty() ? std::numeric_limits<double>::quiet_NaN() : *std::max_element(t.begin(), t.end());
    rows.push_back(row);
  }
  return rows;
}

MonteCarloResult run_monte_carlo(const ScenarioConfig& config, unsigned workers, const Progress& progress) {
  check(config);
  const Network network = load_network(config.network);
  const std::size_t n_models = config.models.size();
  const std::size_t n_tasks = config.ratios.size() * static_cast<std::size_t>(config.runs);
  MonteCarloResult out;
  out.records.resize(n_tasks * n_models);

  auto task = [&](std::size_t t) {
    const std::size_t ri = t / static_cast<std::size_t>(config.runs);
    const int run = static_cast<int>(t % static_cast<std::size_t>(config.runs));
    const double ratio = config.ratios[ri];
    RunRecord* rec = &out.records[t * n_models];
    for (std::size_t k = 0; k < n_models; ++k) {
      rec[k].ratio = ratio;
      rec[k].run = run;
      rec[k].model = config.models[k];
    }
    Scenario sc;
    try {
      sc = generate_scenario(network, config, ratio, stream_seed(config.seed, ri, run));
    } catch (const std::exception&) {
      for (std::size_t k = 0; k < n_models; ++k) rec[k].status = "scenario_failed";
      return;
    }
    for (std::size_t k = 0; k < n_models; ++k) {
      try {
        const auto ms = measurement_set(sc, network, config, config.models[k]);
        const auto res = se::try_estimate(network, ms, estimator_config(sc, network, config));
        rec[k].status = status_text(res.report.status);
        rec[k].solve_time_s = res.report.wall_time_s;
        rec[k].metrics = metrics(sc.truth, res.state, network, config.normalization);
      } catch (const std::exception&) {
        rec[k].status = "error";
      }
    }
  };

  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = static_cast<unsigned>(std::min<std::size_t>(workers, std::max<std::size_t>(n_tasks, 1)));
  std::atomic<std::size_t> next{0}, done{0};
  std::mutex progress_mutex;
  auto worker = [&] {
    for (std::size_t t = next++; t < n_tasks; t = next++) {
      task(t);
      const std::size_t d = ++done;
      if (progress) {
        std::lock_guard lock(progress_mutex);
        progress(d, n_tasks);
      }
    }
  };
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  out.summary = summarize(out.records);
  return out;
}

void write_csv(std::ostream& out, const std::vector<RunRecord>& records) {
  // shortest text that reads back to the same double
  auto num = [](double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
  };
  out << "ratio,run,model,du_avg_pu,du_max_pu,dpt_a_kw,dpt_b_kw,dpt_c_kw,status,solve_time_s\n";
  for (const auto& r : records) {
    out << num(r.ratio) << ',' << r.run << ',' << r.model << ',';
    if (r.metrics)
      out << num(r.metrics->du_avg) << ',' << num(r.metrics->du_max) << ',' << num(r.metrics->dpt_kw[0]) << ','
          << num(r.metrics->dpt_kw[1]) << ',' << num(r.metrics->dpt_kw[2]) << ',';
    else
      out << ",,,,,";
    out << r.status << ',' << num(r.solve_time_s) << '\n';
  }
}

nlohmann::json summary_to_json(const std::vector<SummaryRow>& rows) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  nlohmann::json a = nlohmann::json::array();
  for (const auto& r : rows)
    a.push_back({{"ratio", r.ratio},
                 {"model", r.model},
                 {"runs", r.runs},
                 {"optimal", r.optimal},
                 {"du_avg_median", num(r.du_avg_median)},
                 {"du_avg_q25", num(r.du_avg_q25)},
                 {"du_avg_q75", num(r.du_avg_q75)},
                 {"du_max_median", num(r.du_max_median)},
                 {"solve_time_median_s", num(r.solve_time_median)},
                 {"solve_time_max_s", num(r.solve_time_max)}});
  return a;
}

}  // namespace dsse::mc
