#include "dsse/distributions.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include <boost/math/quadrature/gauss_kronrod.hpp>

namespace dsse::dist {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kLogSqrt2Pi = 0.91893853320467274178;  // log(sqrt(2 pi))

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};

double log_beta_fn(double a, double b) { return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b); }

double gaussian_logpdf(double mu, double sigma, double x) {
  const double z = (x - mu) / sigma;
  return -0.5 * z * z - std::log(sigma) - kLogSqrt2Pi;
}

double poly_value(const std::vector<double>& c, double x) {
  double v = 0.0;
  for (auto it = c.rbegin(); it != c.rend(); ++it) v = v * x + *it;
  return v;
}

double poly_d1(const std::vector<double>& c, double x) {
  double v = 0.0;
  for (std::size_t k = c.size(); k-- > 1;) v = v * x + static_cast<double>(k) * c[k];
  return v;
}

double poly_d2(const std::vector<double>& c, double x) {
  double v = 0.0;
  for (std::size_t k = c.size(); k-- > 2;) v = v * x + static_cast<double>(k * (k - 1)) * c[k];
  return v;
}

bool inside_open(const UncertaintyModel& m, double x) {
  auto [lo, hi] = support(m);
  return x > lo && x < hi;
}

void require_interior(const UncertaintyModel& m, double x) {
  if (!inside_open(m, x))
    throw DomainError(std::string(type_name(m)) + " derivative requested outside open support at x=" +
                      std::to_string(x));
}

// Mixture responsibilities and log f, computed with log-sum-exp.
double gmm_log_terms(const Gmm& g, double x, std::vector<double>& logw) {
  logw.resize(g.components.size());
  double mx = -kInf;
  for (std::size_t i = 0; i < g.components.size(); ++i) {
    const auto& c = g.components[i];
    logw[i] = c.weight > 0.0 ? std::log(c.weight) + gaussian_logpdf(c.mu, c.sigma, x) : -kInf;
    mx = std::max(mx, logw[i]);
  }
  if (mx == -kInf) return -kInf;
  double s = 0.0;
  for (double l : logw) s += std::exp(l - mx);
  return mx + std::log(s);
}

template <class F>
double integrate(F f, double a, double b) {
  return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, a, b, 15, 1e-13);
}

struct PolyMoments {
  double log_z, mean, var;
};

PolyMoments poly_moments(const PolynomialLogPdf& p) {
  double peak = -kInf;
  for (int i = 0; i <= 1000; ++i) {
    const double x = p.x_min + (p.x_max - p.x_min) * i / 1000.0;
    peak = std::max(peak, poly_value(p.coefficients, x));
  }
  auto f = [&](double x) { return std::exp(poly_value(p.coefficients, x) - peak); };
  const double z = integrate(f, p.x_min, p.x_max);
  const double m = integrate([&](double x) { return x * f(x); }, p.x_min, p.x_max) / z;
  const double v = integrate([&](double x) { return (x - m) * (x - m) * f(x); }, p.x_min, p.x_max) / z;
  return {peak + std::log(z), m, v};
}

// Grid search followed by safeguarded Newton on logpdf.
double numeric_mode(const UncertaintyModel& m, double lo, double hi) {
  constexpr int kGrid = 1000;
  double best_x = lo, best = -kInf;
  for (int i = 0; i <= kGrid; ++i) {
    const double x = lo + (hi - lo) * i / kGrid;
    const double v = logpdf(m, x);
    if (v > best) {
      best = v;
      best_x = x;
    }
  }
  auto [slo, shi] = support(m);
  double x = best_x;
  for (int it = 0; it < 60; ++it) {
    if (!inside_open(m, x)) break;
    const double g = dlogpdf(m, x);
    const double h = d2logpdf(m, x);
    if (!(h < 0.0)) break;
    double nx = x - g / h;
    nx = std::clamp(nx, slo, shi);
    const double step = nx - x;
    x = nx;
    if (std::abs(step) <= 1e-15 * std::max(1.0, std::abs(x))) break;
  }
  return logpdf(m, x) >= best ? x : best_x;
}

}  // namespace

const char* type_name(const UncertaintyModel& model) {
  return std::visit(overloaded{[](const Gaussian&) { return "gaussian"; },
                               [](const Laplacian&) { return "laplacian"; },
                               [](const Beta4&) { return "beta4"; }, [](const Gmm&) { return "gmm"; },
                               [](const PolynomialLogPdf&) { return "polynomial"; }},
                    model);
}

void check(const UncertaintyModel& model) {
  std::visit(overloaded{
                 [](const Gaussian& g) {
                   if (!(g.sigma > 0.0) || !std::isfinite(g.mu)) throw std::invalid_argument("gaussian: sigma must be > 0");
                 },
                 [](const Laplacian& l) {
                   if (!(l.b > 0.0) || !std::isfinite(l.mu)) throw std::invalid_argument("laplacian: scale must be > 0");
                 },
                 [](const Beta4& b) {
                   if (!(b.alpha > 0.0) || !(b.beta > 0.0)) throw std::invalid_argument("beta4: alpha, beta must be > 0");
                   if (!(b.x_min < b.x_max)) throw std::invalid_argument("beta4: x_min must be < x_max");
                 },
                 [](const Gmm& g) {
                   if (g.components.empty()) throw std::invalid_argument("gmm: needs at least one component");
                   double w = 0.0;
                   for (const auto& c : g.components) {
                     if (!(c.sigma > 0.0)) throw std::invalid_argument("gmm: component sigma must be > 0");
                     if (!(c.weight >= 0.0)) throw std::invalid_argument("gmm: negative weight");
                     w += c.weight;
                   }
                   if (std::abs(w - 1.0) > 1e-12) throw std::invalid_argument("gmm: weights must sum to 1");
                 },
                 [](const PolynomialLogPdf& p) {
                   if (p.coefficients.empty()) throw std::invalid_argument("polynomial: no coefficients");
                   for (double c : p.coefficients)
                     if (!std::isfinite(c)) throw std::invalid_argument("polynomial: non-finite coefficient");
                   if (!(p.x_min < p.x_max)) throw std::invalid_argument("polynomial: x_min must be < x_max");
                 }},
             model);
}

std::pair<double, double> support(const UncertaintyModel& model) {
  return std::visit(overloaded{[](const Beta4& b) { return std::pair{b.x_min, b.x_max}; },
                               [](const PolynomialLogPdf& p) { return std::pair{p.x_min, p.x_max}; },
                               [](const auto&) { return std::pair{-kInf, kInf}; }},
                    model);
}

double logpdf(const UncertaintyModel& model, double x) {
  return std::visit(
      overloaded{
          [x](const Gaussian& g) { return gaussian_logpdf(g.mu, g.sigma, x); },
          [x](const Laplacian& l) { return -std::abs(x - l.mu) / l.b - std::log(2.0 * l.b); },
          [x](const Beta4& b) {
            if (x < b.x_min || x > b.x_max) return -kInf;
            const double w = b.x_max - b.x_min;
            const double left = b.alpha == 1.0 ? 0.0 : (b.alpha - 1.0) * std::log(x - b.x_min);
            const double right = b.beta == 1.0 ? 0.0 : (b.beta - 1.0) * std::log(b.x_max - x);
            return left + right - log_beta_fn(b.alpha, b.beta) - (b.alpha + b.beta - 1.0) * std::log(w);
          },
          [x](const Gmm& g) {
            std::vector<double> lw;
            return gmm_log_terms(g, x, lw);
          },
          [x](const PolynomialLogPdf& p) {
            if (x < p.x_min || x > p.x_max) return -kInf;
            return poly_value(p.coefficients, x) - p.log_normalizer.value_or(0.0);
          }},
      model);
}

double dlogpdf(const UncertaintyModel& model, double x) {
  require_interior(model, x);
  return std::visit(overloaded{[x](const Gaussian& g) { return -(x - g.mu) / (g.sigma * g.sigma); },
                               // sign(0) = 0 at the kink
                               [x](const Laplacian& l) {
                                 return x > l.mu ? -1.0 / l.b : (x < l.mu ? 1.0 / l.b : 0.0);
                               },
                               [x](const Beta4& b) {
                                 return (b.alpha - 1.0) / (x - b.x_min) - (b.beta - 1.0) / (b.x_max - x);
                               },
                               [x](const Gmm& g) {
                                 std::vector<double> lw;
                                 const double lf = gmm_log_terms(g, x, lw);
                                 double d = 0.0;
                                 for (std::size_t i = 0; i < lw.size(); ++i) {
                                   const auto& c = g.components[i];
                                   d -= std::exp(lw[i] - lf) * (x - c.mu) / (c.sigma * c.sigma);
                                 }
                                 return d;
                               },
                               [x](const PolynomialLogPdf& p) { return poly_d1(p.coefficients, x); }},
                    model);
}

double d2logpdf(const UncertaintyModel& model, double x) {
  require_interior(model, x);
  return std::visit(overloaded{[](const Gaussian& g) { return -1.0 / (g.sigma * g.sigma); },
                               [](const Laplacian&) { return 0.0; },
                               [x](const Beta4& b) {
                                 const double l = x - b.x_min, r = b.x_max - x;
                                 return -(b.alpha - 1.0) / (l * l) - (b.beta - 1.0) / (r * r);
                               },
                               [x](const Gmm& g) {
                                 std::vector<double> lw;
                                 const double lf = gmm_log_terms(g, x, lw);
                                 double d1 = 0.0, d2 = 0.0;
                                 for (std::size_t i = 0; i < lw.size(); ++i) {
                                   const auto& c = g.components[i];
                                   const double r = std::exp(lw[i] - lf);
                                   const double inv_var = 1.0 / (c.sigma * c.sigma);
                                   const double s = -(x - c.mu) * inv_var;
                                   d1 += r * s;
                                   d2 += r * (s * s - inv_var);
                                 }
                                 return d2 - d1 * d1;
                               },
                               [x](const PolynomialLogPdf& p) { return poly_d2(p.coefficients, x); }},
                    model);
}

double mean(const UncertaintyModel& model) {
  return std::visit(overloaded{[](const Gaussian& g) { return g.mu; }, [](const Laplacian& l) { return l.mu; },
                               [](const Beta4& b) {
                                 return b.x_min + (b.x_max - b.x_min) * b.alpha / (b.alpha + b.beta);
                               },
                               [](const Gmm& g) {
                                 double m = 0.0;
                                 for (const auto& c : g.components) m += c.weight * c.mu;
                                 return m;
                               },
                               [](const PolynomialLogPdf& p) { return poly_moments(p).mean; }},
                    model);
}

double variance(const UncertaintyModel& model) {
  return std::visit(overloaded{[](const Gaussian& g) { return g.sigma * g.sigma; },
                               [](const Laplacian& l) { return 2.0 * l.b * l.b; },
                               [](const Beta4& b) {
                                 const double w = b.x_max - b.x_min, s = b.alpha + b.beta;
                                 return w * w * b.alpha * b.beta / (s * s * (s + 1.0));
                               },
                               [](const Gmm& g) {
                                 double m = 0.0, m2 = 0.0;
                                 for (const auto& c : g.components) {
                                   m += c.weight * c.mu;
                                   m2 += c.weight * (c.sigma * c.sigma + c.mu * c.mu);
                                 }
                                 return m2 - m * m;
                               },
                               [](const PolynomialLogPdf& p) { return poly_moments(p).var; }},
                    model);
}

double mode(const UncertaintyModel& model) {
  return std::visit(
      overloaded{[](const Gaussian& g) { return g.mu; }, [](const Laplacian& l) { return l.mu; },
                 [](const Beta4& b) {
                   if (b.alpha < 1.0 || b.beta < 1.0) throw DomainError("beta4: density is unbounded at the support edge");
                   if (b.alpha == 1.0 && b.beta == 1.0) return 0.5 * (b.x_min + b.x_max);
                   return b.x_min + (b.x_max - b.x_min) * (b.alpha - 1.0) / (b.alpha + b.beta - 2.0);
                 },
                 [&model](const Gmm& g) {
                   double lo = kInf, hi = -kInf;
                   for (const auto& c : g.components) {
                     if (c.weight <= 0.0) continue;
                     lo = std::min(lo, c.mu - 6.0 * c.sigma);
                     hi = std::max(hi, c.mu + 6.0 * c.sigma);
                   }
                   return numeric_mode(model, lo, hi);
                 },
                 [&model](const PolynomialLogPdf& p) { return numeric_mode(model, p.x_min, p.x_max); }},
      model);
}

double shift_constant(const UncertaintyModel& model, bool literal_abs) {
  const double xi = logpdf(model, mode(model));
  if (!std::isfinite(xi)) throw DomainError(std::string(type_name(model)) + ": density maximum is not finite");
  return literal_abs ? std::abs(xi) : xi;
}

double sample(const UncertaintyModel& model, Rng& rng) {
  return std::visit(
      overloaded{[&rng](const Gaussian& g) { return std::normal_distribution<double>(g.mu, g.sigma)(rng); },
                 [&rng](const Laplacian& l) {
                   const double u = std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
                   const double s = u < 0.0 ? -1.0 : 1.0;
                   return l.mu - l.b * s * std::log1p(-2.0 * std::abs(u));
                 },
                 [&rng](const Beta4& b) {
                   const double x = std::gamma_distribution<double>(b.alpha, 1.0)(rng);
                   const double y = std::gamma_distribution<double>(b.beta, 1.0)(rng);
                   return b.x_min + (b.x_max - b.x_min) * x / (x + y);
                 },
                 [&rng](const Gmm& g) {
                   double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
                   std::size_t k = 0;
                   for (; k + 1 < g.components.size(); ++k) {
                     if (u < g.components[k].weight) break;
                     u -= g.components[k].weight;
                   }
                   const auto& c = g.components[k];
                   return std::normal_distribution<double>(c.mu, c.sigma)(rng);
                 },
                 [&rng, &model](const PolynomialLogPdf& p) {
                   if (!p.log_normalizer)
                     throw UnsupportedModel("polynomial: sampling requires a normalized log-pdf");
                   const double peak = logpdf(model, mode(model));
                   std::uniform_real_distribution<double> ux(p.x_min, p.x_max), uu(0.0, 1.0);
                   for (int attempt = 0; attempt < 1000000; ++attempt) {
                     const double x = ux(rng);
                     if (std::log(uu(rng)) <= logpdf(model, x) - peak) return x;
                   }
                   throw UnsupportedModel("polynomial: rejection sampling failed to accept");
                 }},
      model);
}

Gaussian ge_reduce(const Gmm& gmm, std::span<const std::size_t> selection) {
  if (selection.empty()) throw std::invalid_argument("ge_reduce: empty component selection");
  double w_eq = 0.0, mu_eq = 0.0;
  for (auto j : selection) {
    const auto& c = gmm.components.at(j);
    w_eq += c.weight;
    mu_eq += c.weight * c.mu;
  }
  if (!(w_eq > 0.0)) throw std::invalid_argument("ge_reduce: selected components carry zero weight");
  mu_eq /= w_eq;
  double var = 0.0;
  for (auto j : selection) {
    const auto& c = gmm.components[j];
    var += c.weight * (c.sigma * c.sigma + (c.mu - mu_eq) * (c.mu - mu_eq));
  }
  return {mu_eq, std::sqrt(var / w_eq)};
}

std::vector<std::size_t> dominant_component(const Gmm& gmm) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < gmm.components.size(); ++i)
    if (gmm.components[i].weight > gmm.components[best].weight) best = i;
  return {best};
}

Gaussian ga_fit(const UncertaintyModel& model) {
  if (const auto* g = std::get_if<Gaussian>(&model)) return *g;
  if (const auto* m = std::get_if<Gmm>(&model)) {
    std::vector<std::size_t> all(m->components.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return ge_reduce(*m, all);
  }
  return {mean(model), std::sqrt(variance(model))};
}

UncertaintyModel scaled(const UncertaintyModel& model, double k) {
  if (!(k > 0.0) || !std::isfinite(k)) throw UnsupportedModel("scaling factor must be positive and finite");
  return std::visit(overloaded{[k](const Gaussian& g) -> UncertaintyModel { return Gaussian{k * g.mu, k * g.sigma}; },
                               [k](const Laplacian& l) -> UncertaintyModel { return Laplacian{k * l.mu, k * l.b}; },
                               [k](const Beta4& b) -> UncertaintyModel {
                                 return Beta4{b.alpha, b.beta, k * b.x_min, k * b.x_max};
                               },
                               [k](const Gmm& g) -> UncertaintyModel {
                                 Gmm out = g;
                                 for (auto& c : out.components) {
                                   c.mu *= k;
                                   c.sigma *= k;
                                 }
                                 return out;
                               },
                               [k](const PolynomialLogPdf& p) -> UncertaintyModel {
                                 // f_Y(y) = f_X(y / k) / k
                                 PolynomialLogPdf out = p;
                                 double kp = 1.0;
                                 for (auto& c : out.coefficients) {
                                   c /= kp;
                                   kp *= k;
                                 }
                                 out.coefficients[0] -= std::log(k);
                                 out.x_min *= k;
                                 out.x_max *= k;
                                 return out;
                               }},
                    model);
}

PolynomialLogPdf normalized(PolynomialLogPdf poly) {
  poly.log_normalizer.reset();
  poly.log_normalizer = poly_moments(poly).log_z;
  return poly;
}

UncertaintyModel from_json(const nlohmann::json& j) {
  const std::string type = j.at("type").get<std::string>();
  UncertaintyModel m;
  if (type == "gaussian" || type == "normal") {
    m = Gaussian{j.at("mu").get<double>(), j.at("sigma").get<double>()};
  } else if (type == "laplacian") {
    m = Laplacian{j.at("mu").get<double>(), j.at("b").get<double>()};
  } else if (type == "beta4" || type == "beta") {
    m = Beta4{j.at("alpha").get<double>(), j.at("beta").get<double>(), j.at("xmin").get<double>(),
              j.at("xmax").get<double>()};
  } else if (type == "gmm") {
    const auto w = j.at("weights").get<std::vector<double>>();
    const auto mu = j.at("mu").get<std::vector<double>>();
    const auto sd = j.at("sigma").get<std::vector<double>>();
    if (w.size() != mu.size() || w.size() != sd.size()) throw std::invalid_argument("gmm: parameter lengths differ");
    Gmm g;
    for (std::size_t i = 0; i < w.size(); ++i) g.components.push_back({w[i], mu[i], sd[i]});
    m = std::move(g);
  } else if (type == "polynomial") {
    PolynomialLogPdf p;
    p.coefficients = j.at("coefficients").get<std::vector<double>>();
    p.x_min = j.at("xmin").get<double>();
    p.x_max = j.at("xmax").get<double>();
    if (j.contains("log_normalizer")) p.log_normalizer = j["log_normalizer"].get<double>();
    m = std::move(p);
  } else {
    throw std::invalid_argument("unknown distribution type '" + type + "'");
  }
  check(m);
  return m;
}

nlohmann::json to_json(const UncertaintyModel& model) {
  using nlohmann::json;
  return std::visit(
      overloaded{[](const Gaussian& g) { return json{{"type", "gaussian"}, {"mu", g.mu}, {"sigma", g.sigma}}; },
                 [](const Laplacian& l) { return json{{"type", "laplacian"}, {"mu", l.mu}, {"b", l.b}}; },
                 [](const Beta4& b) {
                   return json{{"type", "beta4"}, {"alpha", b.alpha}, {"beta", b.beta}, {"xmin", b.x_min}, {"xmax", b.x_max}};
                 },
                 [](const Gmm& g) {
                   json w = json::array(), mu = json::array(), sd = json::array();
                   for (const auto& c : g.components) {
                     w.push_back(c.weight);
                     mu.push_back(c.mu);
                     sd.push_back(c.sigma);
                   }
                   return json{{"type", "gmm"}, {"weights", w}, {"mu", mu}, {"sigma", sd}};
                 },
                 [](const PolynomialLogPdf& p) {
                   json j{{"type", "polynomial"}, {"coefficients", p.coefficients}, {"xmin", p.x_min}, {"xmax", p.x_max}};
                   if (p.log_normalizer) j["log_normalizer"] = *p.log_normalizer;
                   return j;
                 }},
      model);
}

}  // namespace dsse::dist
