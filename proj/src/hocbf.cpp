#include "gpcbf/hocbf.hpp"

namespace gpcbf {

void BarrierSpec::validate() const {
  if (relative_degree < 1) {
    throw std::invalid_argument("BarrierSpec: relative degree must be >= 1");
  }
  if (alphas.size() != relative_degree || (alphas.array() <= 0.0).any()) {
    throw std::invalid_argument("BarrierSpec: need m positive class-K coefficients");
  }
  if (!drift_chain || !control_row) {
    throw std::invalid_argument("BarrierSpec: drift_chain and control_row must be set");
  }
}

Eigen::VectorXd psi_coefficients(const Eigen::VectorXd& alphas, int order) {
  // psi_order = prod_{l<=order} (d/dt + k_l) applied to h; build the
  // polynomial coefficients by the shift-and-add recursion.
  Eigen::VectorXd e = Eigen::VectorXd::Zero(order + 1);
  e(0) = 1.0;
  for (int i = 1; i <= order; ++i) {
    Eigen::VectorXd next = Eigen::VectorXd::Zero(order + 1);
    for (int j = 0; j < i; ++j) {
      next(j + 1) += e(j);              // derivative shifts D^j -> D^(j+1)
      next(j) += alphas(i - 1) * e(j);  // + k_i psi_(i-1)
    }
    e = next;
  }
  return e;
}

Eigen::VectorXd psi_chain(const BarrierSpec& spec, const Eigen::VectorXd& x, double t) {
  spec.validate();
  const int m = spec.relative_degree;
  const Eigen::VectorXd d = spec.drift_chain(x, t);
  if (d.size() != m + 1) {
    throw std::invalid_argument("psi_chain: drift_chain must return m + 1 values");
  }
  Eigen::VectorXd out(m + 1);
  for (int i = 0; i < m; ++i) {
    const Eigen::VectorXd e = psi_coefficients(spec.alphas, i);
    out(i) = e.head(i + 1).dot(d.head(i + 1));
  }
  // Drift part of psi_m: d(psi_(m-1))/dt along the nominal drift plus the
  // final class-K term; adding L_g psi_(m-1) u gives the HOCBF constraint.
  const Eigen::VectorXd e = psi_coefficients(spec.alphas, m - 1);
  double drift_rate = 0.0;
  for (int j = 0; j < m; ++j) drift_rate += e(j) * d(j + 1);
  out(m) = drift_rate + spec.alphas(m - 1) * out(m - 1);
  return out;
}

ConstraintRow nominal_constraint(const BarrierSpec& spec, const Eigen::VectorXd& x,
                                 double t) {
  spec.validate();
  const int m = spec.relative_degree;
  const Eigen::VectorXd d = spec.drift_chain(x, t);
  const Eigen::RowVectorXd g_row = spec.control_row(x, t);
  if (g_row.size() != spec.control_dim) {
    throw std::invalid_argument("nominal_constraint: control_row has wrong width");
  }
  const Eigen::VectorXd e = psi_coefficients(spec.alphas, m - 1);

  ConstraintRow row;
  row.F_row.resize(spec.control_dim + 1);
  row.F_row(0) = d(m);  // L_f^m h (with explicit-time terms folded in)
  row.F_row.tail(spec.control_dim) = g_row.transpose();

  // S(h): the lower-order Lie terms of psi_dot_(m-1), i.e. everything of the
  // drift rate except D^m h itself.
  double s_term = 0.0;
  for (int j = 0; j + 1 < m; ++j) s_term += e(j) * d(j + 1);
  double psi_m1 = 0.0;
  for (int j = 0; j < m; ++j) psi_m1 += e(j) * d(j);
  row.offset = s_term + spec.alphas(m - 1) * psi_m1;
  return row;
}

DiscrepancySample measure_discrepancy(const BarrierSpec& spec,
                                      const Eigen::VectorXd& x_t,
                                      const Eigen::VectorXd& x_next,
                                      const Eigen::VectorXd& u, double t, double dt) {
  if (dt <= 0.0) {
    throw std::invalid_argument("measure_discrepancy: dt must be > 0");
  }
  const int m = spec.relative_degree;
  const Eigen::VectorXd psi_a = psi_chain(spec, x_t, t);
  const Eigen::VectorXd psi_b = psi_chain(spec, x_next, t + dt);
  const double fd = (psi_b(m - 1) - psi_a(m - 1)) / dt;

  DiscrepancySample s;
  s.mid_state = 0.5 * (x_t + x_next);
  s.mid_time = t + 0.5 * dt;
  s.u_bar.resize(u.size() + 1);
  s.u_bar(0) = 1.0;
  s.u_bar.tail(u.size()) = u;

  const ConstraintRow row = nominal_constraint(spec, s.mid_state, s.mid_time);
  const Eigen::VectorXd psi_mid = psi_chain(spec, s.mid_state, s.mid_time);
  const double nominal_rate =
      row.value(s.u_bar) - spec.alphas(m - 1) * psi_mid(m - 1);
  s.z = fd - nominal_rate;
  return s;
}

UncertainConstraint assemble_uncertain_constraint(const ConstraintRow& row,
                                                  const Prediction& pred, double beta) {
  if (beta < 0.0) {
    throw std::invalid_argument("assemble_uncertain_constraint: beta must be >= 0");
  }
  UncertainConstraint c;
  c.a_vec = row.F_row + pred.b_vec;
  c.offset = row.offset;
  c.Sigma = 0.5 * (pred.Sigma + pred.Sigma.transpose());
  c.beta = beta;
  return c;
}

}  // namespace gpcbf
