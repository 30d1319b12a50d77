#pragma once

#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <utility>
#include <variant>
#include <vector>

#include "json.hpp"

/// Univariate uncertainty models for (pseudo-)measurements.
///
/// Every model exposes an exact log-density with analytic first and second
/// derivatives, which is what the estimator hands to the NLP solver. Models
/// are plain values; sampling takes a caller-owned generator.
namespace dsse::dist {

using Rng = std::mt19937_64;

struct Gaussian {
  double mu = 0.0;
  double sigma = 1.0;
};

struct Laplacian {
  double mu = 0.0;
  double b = 1.0;
};

/// Four-parameter Beta on [x_min, x_max].
struct Beta4 {
  double alpha = 1.0;
  double beta = 1.0;
  double x_min = 0.0;
  double x_max = 1.0;
};

struct GmmComponent {
  double weight = 1.0;
  double mu = 0.0;
  double sigma = 1.0;
};

struct Gmm {
  std::vector<GmmComponent> components;
};

/// log f(x) = sum_k c_k x^k on [x_min, x_max], minus `log_normalizer` when
/// present. Without a normalizer the density is only known up to a constant,
/// which is enough for estimation but not for sampling.
struct PolynomialLogPdf {
  std::vector<double> coefficients;
  double x_min = 0.0;
  double x_max = 1.0;
  std::optional<double> log_normalizer;
};

using UncertaintyModel = std::variant<Gaussian, Laplacian, Beta4, Gmm, PolynomialLogPdf>;

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class UnsupportedModel : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Throws std::invalid_argument when a model's parameter invariants fail.
void check(const UncertaintyModel& model);

const char* type_name(const UncertaintyModel& model);

/// Exact log-density; -infinity outside a bounded support.
double logpdf(const UncertaintyModel& model, double x);
/// Derivatives of logpdf. Throw DomainError outside the open support.
double dlogpdf(const UncertaintyModel& model, double x);
double d2logpdf(const UncertaintyModel& model, double x);

/// Closed support, (-inf, inf) for the unbounded models.
std::pair<double, double> support(const UncertaintyModel& model);

double mean(const UncertaintyModel& model);
double variance(const UncertaintyModel& model);

/// Location of the density maximum. Throws DomainError when the density is
/// unbounded (Beta with alpha < 1 or beta < 1).
double mode(const UncertaintyModel& model);

/// xi = log(max f), so that xi - logpdf(x) >= 0 with equality at the mode.
/// `literal_abs` returns |log(max f)| instead.
double shift_constant(const UncertaintyModel& model, bool literal_abs = false);

double sample(const UncertaintyModel& model, Rng& rng);

/// Collapses the selected mixture components into one moment-matched Gaussian.
Gaussian ge_reduce(const Gmm& gmm, std::span<const std::size_t> selection);
/// Default GE selection: the single largest-weight component.
std::vector<std::size_t> dominant_component(const Gmm& gmm);

/// Moment-matched Gaussian (the large-sample Gaussian MLE) of any model.
Gaussian ga_fit(const UncertaintyModel& model);

/// Distribution of k * X for k > 0.
UncertaintyModel scaled(const UncertaintyModel& model, double k);

/// Returns the polynomial with its normalizer computed by quadrature.
PolynomialLogPdf normalized(PolynomialLogPdf poly);

UncertaintyModel from_json(const nlohmann::json& j);
nlohmann::json to_json(const UncertaintyModel& model);

}  // namespace dsse::dist
