#pragma once

#include <vector>

#include "dsse/estimator.hpp"

namespace dsse::se {

struct WlsResult {
  pf::StateSolution state;
  double objective = 0.0;  // sum of squared standardized residuals
  int iterations = 0;
};

/// Classical weighted least squares: minimize sum ((z - h(x)) / sigma)^2
/// subject to the nodal balance and the reference angles, with |U| taken
/// directly as sqrt(e^2 + f^2). Solved by equality-constrained Gauss-Newton
/// on a dense KKT system, which is adequate for small feeders. Every
/// measurement must carry a Gaussian model.
WlsResult wls_estimate(const Network& network, const std::vector<Measurement>& measurements,
                       double step_tolerance = 1e-13, int max_iterations = 100);

}  // namespace dsse::se
