#include "dsse/wls.hpp"

#include <cmath>

namespace dsse::se {

using Eigen::MatrixXd;
using Eigen::VectorXd;

WlsResult wls_estimate(const Network& network, const std::vector<Measurement>& measurements,
                       double step_tolerance, int max_iterations) {
  const pf::NetworkModel model(network);
  const int nb = model.bus_phase_count(), nd = model.device_phase_count();
  const int n = 2 * nb + 2 * nd;
  const int nm = static_cast<int>(measurements.size());

  // measurement -> (kind, index into bus-phases or state vector)
  std::vector<int> index(nm);
  VectorXd z(nm), w(nm);
  for (int i = 0; i < nm; ++i) {
    const auto& m = measurements[i];
    const auto* g = std::get_if<dist::Gaussian>(&m.model);
    if (!g) throw ConfigError("weighted least squares needs Gaussian measurements only");
    z[i] = g->mu;
    w[i] = 1.0 / (g->sigma * g->sigma);
    const auto& t = m.target;
    if (t.quantity == Quantity::voltage_magnitude) {
      index[i] = model.bus_phase(network.bus_index(t.entity), t.phase);
    } else {
      const int d = model.device_phase(network.device_index(t.entity), t.phase);
      index[i] = 2 * nb + (t.quantity == Quantity::active_power ? 0 : nd) + d;
    }
  }

  std::vector<int> row(nb, -1);
  int nbal = 0;
  std::vector<int> refs;
  for (int k = 0; k < nb; ++k) {
    if (model.is_reference(k))
      refs.push_back(k);
    else
      row[k] = nbal++;
  }
  const int nc = 2 * nbal + static_cast<int>(refs.size());

  VectorXd x = VectorXd::Zero(n);
  for (int k = 0; k < nb; ++k) {
    const double th = pf::reference_angle(model.phase_of(k));
    x[k] = std::cos(th);
    x[nb + k] = std::sin(th);
  }
  for (int i = 0; i < nm; ++i)
    if (measurements[i].target.quantity != Quantity::voltage_magnitude) x[index[i]] = z[i];

  WlsResult out;
  for (int it = 1; it <= max_iterations; ++it) {
    const VectorXd e = x.head(nb), f = x.segment(nb, nb);
    VectorXd r(nm);
    MatrixXd h = MatrixXd::Zero(nm, n);
    for (int i = 0; i < nm; ++i) {
      if (measurements[i].target.quantity == Quantity::voltage_magnitude) {
        const int k = index[i];
        const double mag = std::hypot(e[k], f[k]);
        r[i] = mag - z[i];
        h(i, k) = e[k] / mag;
        h(i, nb + k) = f[k] / mag;
      } else {
        r[i] = x[index[i]] - z[i];
        h(i, index[i]) = 1.0;
      }
    }

    VectorXd p_out, q_out;
    pf::flow_injections(model, e, f, p_out, q_out);
    VectorXd c = VectorXd::Zero(nc);
    MatrixXd cj = MatrixXd::Zero(nc, n);
    for (int k = 0; k < nb; ++k)
      if (row[k] >= 0) {
        c[row[k]] = -p_out[k];
        c[nbal + row[k]] = -q_out[k];
      }
    for (int d = 0; d < nd; ++d) {
      const int rr = row[model.device_bus_phase(d)];
      if (rr < 0) continue;
      const double s = model.device_sign(d);
      c[rr] += s * x[2 * nb + d];
      c[nbal + rr] += s * x[2 * nb + nd + d];
      cj(rr, 2 * nb + d) = s;
      cj(nbal + rr, 2 * nb + nd + d) = s;
    }
    std::vector<pf::Triplet> trip;
    pf::flow_jacobian(model, e, f, trip, 0, 0, -1.0);
    for (const auto& t : trip) {
      const int rr = row[t.row() % nb];
      if (rr >= 0) cj(t.row() < nb ? rr : nbal + rr, t.col()) += t.value();
    }
    for (std::size_t j = 0; j < refs.size(); ++j) {
      const int k = refs[j];
      const double th = pf::reference_angle(model.phase_of(k));
      const int rr = 2 * nbal + static_cast<int>(j);
      c[rr] = -std::sin(th) * e[k] + std::cos(th) * f[k];
      cj(rr, k) = -std::sin(th);
      cj(rr, nb + k) = std::cos(th);
    }

    MatrixXd kkt = MatrixXd::Zero(n + nc, n + nc);
    kkt.topLeftCorner(n, n) = h.transpose() * w.asDiagonal() * h;
    kkt.topRightCorner(n, nc) = cj.transpose();
    kkt.bottomLeftCorner(nc, n) = cj;
    VectorXd rhs(n + nc);
    rhs << -h.transpose() * w.asDiagonal() * r, -c;
    const VectorXd step = kkt.fullPivLu().solve(rhs);
    x += step.head(n);
    out.iterations = it;
    if (step.head(n).lpNorm<Eigen::Infinity>() < step_tolerance) break;
    if (it == max_iterations) throw std::runtime_error("weighted least squares did not converge");
  }

  out.state.u_re = x.head(nb);
  out.state.u_im = x.segment(nb, nb);
  out.state.p = x.segment(2 * nb, nd);
  out.state.q = x.segment(2 * nb + nd, nd);
  for (int i = 0; i < nm; ++i) {
    const double hv = measurements[i].target.quantity == Quantity::voltage_magnitude
                          ? std::hypot(x[index[i]], x[nb + index[i]])
                          : x[index[i]];
    out.objective += w[i] * (hv - z[i]) * (hv - z[i]);
  }
  return out;
}

}  // namespace dsse::se
