#include "doctest.h"

#include <cmath>
#include <random>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "dsse/estimator.hpp"
#include "dsse/wls.hpp"
#include "test_support.hpp"

using namespace dsse;
using namespace dsse::se;
using dist::Gaussian;

namespace {

const dist::Beta4 kBetaT1{1.6339, 20.9022, -0.1, 8.268};
const double kK2 = std::tan(std::acos(0.95));

struct Truth {
  Network net;
  pf::StateSolution state;
};

Truth solved(const char* name) {
  Truth t{load_network(data_path(name)), {}};
  pf::NetworkModel model(t.net);
  t.state = pf::solve_pf(model, pf::profile_spec(model)).state;
  return t;
}

// Meter every device-phase (P, Q) and the voltage at every device bus-phase.
// When `rng` is given the readings are perturbed by their sigma.
std::vector<Measurement> meter_everything(const Network& net, const pf::StateSolution& s, double sigma_v,
                                          double sigma_p, std::mt19937_64* rng = nullptr) {
  pf::NetworkModel model(net);
  std::normal_distribution<double> nd;
  auto noisy = [&](double v, double sigma) { return rng ? v + sigma * nd(*rng) : v; };
  std::vector<Measurement> ms;
  const auto mag = s.magnitude();
  for (int d = 0; d < model.device_phase_count(); ++d) {
    const auto& dev = net.devices()[model.device_of(d)];
    const Phase ph = model.device_phase_of(d);
    ms.push_back({MeasurementTarget::active(dev.id, ph), Gaussian{noisy(s.p[d], sigma_p), sigma_p}});
    ms.push_back({MeasurementTarget::reactive(dev.id, ph), Gaussian{noisy(s.q[d], sigma_p), sigma_p}});
    ms.push_back({MeasurementTarget::voltage(dev.bus, ph), Gaussian{noisy(mag[model.device_bus_phase(d)], sigma_v), sigma_v}});
  }
  return ms;
}

double max_voltage_error(const pf::StateSolution& a, const pf::StateSolution& b) {
  return std::max((a.u_re - b.u_re).cwiseAbs().maxCoeff(), (a.u_im - b.u_im).cwiseAbs().maxCoeff());
}

double avg_magnitude_error(const pf::StateSolution& a, const pf::StateSolution& b) {
  return (a.magnitude() - b.magnitude()).cwiseAbs().mean();
}

// Replace every measurement on device `id` phase `ph` quantity `q` by `model`.
void replace(std::vector<Measurement>& ms, const std::string& id, Phase ph, Quantity q, dist::UncertaintyModel model) {
  for (auto& m : ms)
    if (m.target.entity == id && m.target.phase == ph && m.target.quantity == q) {
      m.model = model;
      m.kind = MeasurementKind::pseudo;
    }
}

// Drops the voltage readings and anchors only the reference bus magnitudes.
std::vector<Measurement> anchor_reference_only(std::vector<Measurement> ms, const Network& net,
                                               const pf::StateSolution& s, double sigma) {
  std::erase_if(ms, [](const Measurement& m) { return m.target.quantity == Quantity::voltage_magnitude; });
  pf::NetworkModel model(net);
  const auto& ref = net.buses()[net.reference_bus()];
  for (Phase p : ref.phases.phases())
    ms.push_back({MeasurementTarget::voltage(ref.id, p),
                  Gaussian{s.magnitude()[model.bus_phase(net.reference_bus(), p)], sigma}});
  return ms;
}

}  // namespace

TEST_CASE("problem layout for a single metered load") {
  const auto net = load_network(data_path("two_bus.json"));
  std::vector<Measurement> ms{{MeasurementTarget::active("u1", Phase::a), Gaussian{1.2, 0.01}},
                              {MeasurementTarget::reactive("u1", Phase::a), Gaussian{0.4, 0.01}},
                              {MeasurementTarget::voltage("b2", Phase::a), Gaussian{0.99, 0.001}}};
  const auto sp = build_problem(net, ms);
  CHECK(sp.magnitude_aux == 1);
  CHECK(sp.terms.size() == 3);
  for (const auto& t : sp.terms) CHECK(t.kind == TermKind::squared);
  CHECK(sp.nlp.n == 2 * 6 + 2 * 3 + 1);
  // 3 non-reference bus-phases x (P, Q) + 1 auxiliary + 3 reference angles
  CHECK(sp.nlp.m == 6 + 1 + 3);

  SUBCASE("Beta pseudo-measurement on P becomes a shifted log-density term") {
    ms[0] = {MeasurementTarget::active("u1", Phase::a), kBetaT1, MeasurementKind::pseudo};
    const auto sb = build_problem(net, ms);
    int logs = 0;
    for (const auto& t : sb.terms)
      if (t.kind == TermKind::log_density) {
        ++logs;
        // grid oracle for the maximum of the density
        double best = -1e300;
        for (int i = 1; i < 400000; ++i) best = std::max(best, dist::logpdf(kBetaT1, -0.1 + 8.368 * i / 400000.0));
        CHECK(t.shift > 0.0);
        CHECK(t.shift == doctest::Approx(best).epsilon(1e-8));
        CHECK(sb.nlp.lower[t.variable] > kBetaT1.x_min);
        CHECK(sb.nlp.upper[t.variable] < kBetaT1.x_max);
      }
    CHECK(logs == 1);
  }
}

TEST_CASE("constant power factor adds one linear equality per device-phase") {
  const auto t = solved("feeder30.json");
  auto ms = meter_everything(t.net, t.state, 1e-3, 1e-2);
  std::erase_if(ms, [](const Measurement& m) {
    return m.target.quantity == Quantity::reactive_power &&
           (m.target.entity == "u1" || m.target.entity == "u2" || m.target.entity == "u3");
  });
  const auto base = build_problem(t.net, ms);
  EstimatorConfig cfg;
  cfg.constant_pf = ConstantPowerFactor{kK2, {"u1", "u2", "u3"}};
  const auto sp = build_problem(t.net, ms, cfg);
  CHECK(sp.nlp.m - base.nlp.m == 3);
  CHECK(kK2 == doctest::Approx(0.3287).epsilon(1e-4));
  pf::NetworkModel model(t.net);
  for (const char* id : {"u1", "u2", "u3"}) {
    const int d = model.device_phase(t.net.device_index(id), t.net.devices()[t.net.device_index(id)].phases.phases()[0]);
    for (const auto& term : sp.terms) CHECK(term.variable != sp.q(d));
  }
}

TEST_CASE("configuration errors") {
  const auto t = solved("feeder30.json");
  auto ms = meter_everything(t.net, t.state, 1e-3, 1e-2);

  SUBCASE("no voltage anchor") {
    std::erase_if(ms, [](const Measurement& m) { return m.target.quantity == Quantity::voltage_magnitude; });
    CHECK_THROWS_AS(build_problem(t.net, ms), ConfigError);
  }
  SUBCASE("constant power factor on a device with a reactive reading") {
    EstimatorConfig cfg;
    cfg.constant_pf = ConstantPowerFactor{kK2, {"u4"}};
    CHECK_THROWS_AS(build_problem(t.net, ms, cfg), ConfigError);
  }
  SUBCASE("unknown entity") {
    ms.push_back({MeasurementTarget::active("nobody", Phase::a), Gaussian{0, 1}});
    CHECK_THROWS_AS(build_problem(t.net, ms), ConfigError);
  }
  SUBCASE("phase not present on the device") {
    ms.push_back({MeasurementTarget::active("u1", Phase::c), Gaussian{0, 1}});
    CHECK_THROWS_AS(build_problem(t.net, ms), ConfigError);
  }
  SUBCASE("overlapping correlation groups") {
    EstimatorConfig cfg;
    cfg.pv_correlation_groups = {{Quantity::active_power, {{"u1", Phase::a, 1}, {"u4", Phase::a, 1}}},
                                 {Quantity::active_power, {{"u4", Phase::a, 1}, {"u7", Phase::a, 1}}}};
    CHECK_THROWS_AS(build_problem(t.net, ms, cfg), ConfigError);
  }
}

TEST_CASE("noise-free measurements reproduce the power flow") {
  for (const char* name : {"two_bus.json", "three_bus.json", "feeder30.json"}) {
    CAPTURE(name);
    const auto t = solved(name);
    const auto ms = meter_everything(t.net, t.state, 1e-6, 1e-8);
    const auto r = estimate(t.net, ms);
    CHECK(max_voltage_error(r.state, t.state) < 1e-8);
    CHECK((r.state.p - t.state.p).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("all-Gaussian estimation agrees with weighted least squares") {
  std::mt19937_64 rng(3);
  for (const char* name : {"two_bus.json", "three_bus.json", "feeder30.json"}) {
    CAPTURE(name);
    const auto t = solved(name);
    const auto ms = meter_everything(t.net, t.state, 0.38 / 230.0, 0.0167, &rng);
    const auto mle = estimate(t.net, ms);
    const auto wls = wls_estimate(t.net, ms);
    CHECK(max_voltage_error(mle.state, wls.state) < 1e-6);
    CHECK((mle.state.p - wls.state.p).cwiseAbs().maxCoeff() < 1e-6);
    CHECK((mle.state.q - wls.state.q).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(mle.objective == doctest::Approx(wls.objective).epsilon(1e-6));
  }
}

TEST_CASE("an unconstrained Beta pseudo-measurement settles at the Beta mode") {
  const auto t = solved("feeder30.json");
  auto ms = anchor_reference_only(meter_everything(t.net, t.state, 1e-6, 1e-6), t.net, t.state, 1e-6);
  replace(ms, "u5", Phase::b, Quantity::active_power, kBetaT1);
  const auto r = estimate(t.net, ms);
  pf::NetworkModel model(t.net);
  const int d = model.device_phase(t.net.device_index("u5"), Phase::b);
  const double mode = kBetaT1.x_min + (kBetaT1.x_max - kBetaT1.x_min) * (kBetaT1.alpha - 1) / (kBetaT1.alpha + kBetaT1.beta - 2);
  CHECK(r.state.p[d] == doctest::Approx(mode).epsilon(1e-6));
}

TEST_CASE("Laplacian pseudo-measurement") {
  const auto t = solved("feeder30.json");
  auto ms = anchor_reference_only(meter_everything(t.net, t.state, 1e-6, 1e-6), t.net, t.state, 1e-6);
  replace(ms, "u2", Phase::b, Quantity::active_power, dist::Laplacian{0.5, 0.2});
  const auto sp = build_problem(t.net, ms);
  CHECK(sp.laplace_slacks == 2);
  const auto r = estimate(t.net, ms);
  pf::NetworkModel model(t.net);
  const int d = model.device_phase(t.net.device_index("u2"), Phase::b);
  CHECK(r.state.p[d] == doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("mixture pseudo-measurements converge") {
  const auto t = solved("feeder30.json");
  auto ms = meter_everything(t.net, t.state, 0.38 / 230, 0.0045);
  const dist::Gmm g{{{0.476, 0.181, 0.152}, {0.152, 1.223, 0.467}, {0.372, 0.627, 0.241}}};
  for (const char* id : {"u1", "u4", "u7"}) replace(ms, id, Phase::a, Quantity::active_power, g);
  const auto r = estimate(t.net, ms);
  CHECK(r.report.status == nlp::Status::optimal);
}

TEST_CASE("correlation groups and constant power factor hold at the solution") {
  const auto t = solved("feeder30.json");
  auto ms = meter_everything(t.net, t.state, 0.38 / 230, 0.0045);
  std::erase_if(ms, [](const Measurement& m) { return m.target.quantity == Quantity::reactive_power; });
  for (const char* id : {"u1", "u4", "u7", "u10"}) replace(ms, id, Phase::a, Quantity::active_power, kBetaT1);
  EstimatorConfig cfg;
  std::vector<std::string> all;
  for (const auto& d : t.net.devices()) all.push_back(d.id);
  cfg.constant_pf = ConstantPowerFactor{kK2, all};
  cfg.pv_correlation_groups = {{Quantity::active_power, {{"u1", Phase::a, 1.0}, {"u4", Phase::a, 2.0}, {"u7", Phase::a, 0.5}}}};
  const auto r = estimate(t.net, ms, cfg);
  pf::NetworkModel model(t.net);
  for (int d = 0; d < model.device_phase_count(); ++d) CHECK(std::abs(r.state.q[d] - kK2 * r.state.p[d]) < 1e-8);
  auto p_of = [&](const char* id) { return r.state.p[model.device_phase(t.net.device_index(id), Phase::a)]; };
  CHECK(std::abs(p_of("u4") / 2.0 - p_of("u1")) < 1e-8);
  CHECK(std::abs(p_of("u7") / 0.5 - p_of("u1")) < 1e-8);
}

TEST_CASE("shifting every log-density constant leaves the state unchanged") {
  const auto t = solved("feeder30.json");
  auto ms = meter_everything(t.net, t.state, 0.38 / 230, 0.0045);
  int pseudo = 0;
  for (const char* id : {"u2", "u5", "u8"}) {
    replace(ms, id, Phase::b, Quantity::active_power, kBetaT1);
    ++pseudo;
  }
  const auto r0 = estimate(t.net, ms);
  EstimatorConfig cfg;
  cfg.xi_offset = 10.0;
  const auto r1 = estimate(t.net, ms, cfg);
  CHECK(r1.objective - r0.objective == doctest::Approx(10.0 * pseudo).epsilon(1e-9));
  CHECK(max_voltage_error(r0.state, r1.state) < 1e-8);
}

TEST_CASE("reported residuals are nonnegative and sum to the objective") {
  const auto t = solved("feeder30.json");
  std::mt19937_64 rng(8);
  auto ms = meter_everything(t.net, t.state, 0.38 / 230, 0.0045, &rng);
  replace(ms, "u3", Phase::c, Quantity::active_power, kBetaT1);
  replace(ms, "u6", Phase::c, Quantity::active_power, dist::Laplacian{0.3, 0.1});
  const auto r = estimate(t.net, ms);
  REQUIRE(r.residuals.size() == ms.size());
  double sum = 0.0;
  for (double rho : r.residuals) {
    CHECK(rho >= -1e-9);
    sum += rho;
  }
  CHECK(r.objective == doctest::Approx(sum).epsilon(1e-12));
}

TEST_CASE("an extra consistent measurement does not worsen the estimate") {
  const auto t = solved("feeder30.json");
  auto ms = meter_everything(t.net, t.state, 1e-6, 1e-8);
  for (const char* id : {"u1", "u3", "u5", "u7", "u9"}) {
    const auto& dev = t.net.devices()[t.net.device_index(id)];
    replace(ms, id, dev.phases.phases()[0], Quantity::active_power, kBetaT1);
  }
  const double before = avg_magnitude_error(estimate(t.net, ms).state, t.state);
  pf::NetworkModel model(t.net);
  const int d = model.device_phase(t.net.device_index("u5"), Phase::b);
  ms.push_back({MeasurementTarget::active("u5", Phase::b), Gaussian{t.state.p[d], 1e-8}});
  const double after = avg_magnitude_error(estimate(t.net, ms).state, t.state);
  CHECK(after <= before + 1e-12);
}

TEST_CASE("non-optimal termination raises with the partial result attached") {
  const auto t = solved("feeder30.json");
  const auto ms = meter_everything(t.net, t.state, 1e-3, 1e-2);
  EstimatorConfig cfg;
  cfg.solver.max_iterations = 1;
  try {
    estimate(t.net, ms, cfg);
    FAIL("expected EstimationError");
  } catch (const EstimationError& e) {
    CHECK(e.result().report.status == nlp::Status::max_iter);
    CHECK(std::string(e.what()).find("measurements") != std::string::npos);
  }
  CHECK(try_estimate(t.net, ms, cfg).report.status == nlp::Status::max_iter);
}

TEST_CASE("reactive rescaling") {
  const auto g = std::get<Gaussian>(reactive_rescale(Gaussian{1.0, 0.2}, 0.3287));
  CHECK(g.mu == doctest::Approx(0.3287));
  CHECK(g.sigma == doctest::Approx(0.06574));
  const auto b = std::get<dist::Beta4>(reactive_rescale(dist::Beta4{2, 3, 0, 1}, 2.0));
  CHECK(b.alpha == 2);
  CHECK(b.beta == 3);
  CHECK(b.x_min == 0);
  CHECK(b.x_max == 2);

  // mean by quadrature of the rescaled density
  const auto rb = reactive_rescale(kBetaT1, kK2);
  auto [lo, hi] = dist::support(rb);
  const double m = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
      [&](double x) { return x * std::exp(dist::logpdf(rb, x)); }, lo, hi, 15, 1e-13);
  const double m0 = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
      [&](double x) { return x * std::exp(dist::logpdf(kBetaT1, x)); }, kBetaT1.x_min, kBetaT1.x_max, 15, 1e-13);
  CHECK(m == doctest::Approx(kK2 * m0).epsilon(1e-8));
  CHECK_THROWS_AS(reactive_rescale(kBetaT1, 0.0), dist::UnsupportedModel);
}

TEST_CASE("measurement JSON converts units to per-unit") {
  const auto net = load_network(data_path("two_bus.json"));
  const auto mv = measurement_from_json(nlohmann::json::parse(R"({
    "target": {"quantity": "voltage_magnitude", "bus": "b2", "phase": "b"},
    "model": {"type": "gaussian", "mu": 227.7, "sigma": 0.38}, "unit": "volt"})"),
                                        net);
  const auto& g = std::get<Gaussian>(mv.model);
  CHECK(g.mu == doctest::Approx(227.7 / 230.0));
  CHECK(g.sigma == doctest::Approx(0.38 / 230.0));
  CHECK(mv.kind == MeasurementKind::real);

  const auto mp = measurement_from_json(nlohmann::json::parse(R"({
    "target": {"quantity": "active_power", "device": "u1", "phase": "a"},
    "model": {"type": "beta4", "alpha": 2, "beta": 3, "xmin": 0, "xmax": 4}, "unit": "kw", "kind": "pseudo"})"),
                                        net);
  CHECK(mp.kind == MeasurementKind::pseudo);
  CHECK(std::get<dist::Beta4>(mp.model).x_max == doctest::Approx(4.0));

  const auto back = measurement_from_json(measurement_to_json(mp), net);
  CHECK(dist::to_json(back.model) == dist::to_json(mp.model));
  CHECK(back.target.entity == "u1");

  CHECK_THROWS_AS(measurement_from_json(nlohmann::json::parse(R"({"target": {"quantity": "x"}})"), net), ParseError);
}

TEST_CASE("estimator config JSON") {
  const auto c = config_from_json(nlohmann::json::parse(R"({
    "constant_pf": {"power_factor": 0.95, "devices": ["u1"]},
    "pv_correlation_groups": [{"members": [{"device": "u1", "phase": "a"}, {"device": "u2", "phase": "b", "scale": 2}]}],
    "solver": {"tol_stat": 1e-7, "hessian": "gauss_newton"},
    "bounds": {"u_min": 0.8},
    "xi_offset": 2.5})"));
  REQUIRE(c.constant_pf);
  CHECK(c.constant_pf->k2 == doctest::Approx(kK2));
  CHECK(c.pv_correlation_groups.at(0).members.at(1).scale == 2.0);
  CHECK(c.solver.tol_stat == 1e-7);
  CHECK(c.solver.hessian == nlp::HessianMode::gauss_newton);
  CHECK(c.u_min == 0.8);
  CHECK(c.u_max == 1.5);
  CHECK(c.xi_offset == 2.5);
}
