#ifndef GPCBF_HOCBF_HPP
#define GPCBF_HOCBF_HPP

#include <functional>

#include <Eigen/Dense>

#include "gpcbf/kernels.hpp"
#include "gpcbf/sparse_gp.hpp"

namespace gpcbf {

/// Barrier of relative degree m with linear class-K coefficients, described
/// by its drift-derivative chain against the NOMINAL model:
///   drift_chain(x, t) = [D^0 h, D^1 h, ..., D^m h]
/// with D^0 h = h and D^(j+1) h = d(D^j h)/dt along the nominal drift
/// (includes any explicit time dependence, e.g. a moving obstacle), and
///   control_row(x, t) = L_g0 D^(m-1) h, the row where the input appears.
/// Each scenario supplies these in closed form.
struct BarrierSpec {
  int relative_degree = 1;  // m
  int control_dim = 1;
  Eigen::VectorXd alphas;   // k_1..k_m, all > 0

  std::function<Eigen::VectorXd(const Eigen::VectorXd&, double)> drift_chain;
  std::function<Eigen::RowVectorXd(const Eigen::VectorXd&, double)> control_row;

  double h(const Eigen::VectorXd& x, double t) const { return drift_chain(x, t)(0); }
  void validate() const;
};

/// Affine-in-u_bar barrier constraint: F_row . u_bar + offset >= 0 with
/// F_row = [L_f^m h, L_g L_f^(m-1) h] and
/// offset = S(h) + alpha_m(psi_(m-1)), all against the nominal model.
struct ConstraintRow {
  Eigen::VectorXd F_row;  // length control_dim + 1
  double offset = 0.0;

  double value(const Eigen::VectorXd& u_bar) const { return F_row.dot(u_bar) + offset; }
};

/// Finite-difference measurement of the model discrepancy over one interval.
struct DiscrepancySample {
  Eigen::VectorXd mid_state;  // (x(t) + x(t+dt)) / 2
  double mid_time = 0.0;
  Eigen::VectorXd u_bar;      // held control, leading 1
  double z = 0.0;             // measured Delta B^(m)
};

/// Coefficients e with psi_i = sum_j e_j D^j h for the linear class-K
/// recursion psi_i = psi_dot_(i-1) + k_i psi_(i-1); exposed because the
/// discrepancy measurement and the constraint assembly share them.
Eigen::VectorXd psi_coefficients(const Eigen::VectorXd& alphas, int order);

/// [psi_0(x), ..., psi_(m-1)(x), psi_m drift part], where the last entry is
/// the constraint value at u = 0 (nominal drift + alpha_m term).
Eigen::VectorXd psi_chain(const BarrierSpec& spec, const Eigen::VectorXd& x, double t);

ConstraintRow nominal_constraint(const BarrierSpec& spec, const Eigen::VectorXd& x,
                                 double t);

/// Midpoint estimate of Delta B^(m): finite-difference the nominal-chain
/// psi_(m-1) across the interval and subtract the nominal estimate of its
/// rate at the averaged state (WITHOUT the class-K term, so an exact nominal
/// model yields z = O(dt^2)).
DiscrepancySample measure_discrepancy(const BarrierSpec& spec,
                                      const Eigen::VectorXd& x_t,
                                      const Eigen::VectorXd& x_next,
                                      const Eigen::VectorXd& u, double t, double dt);

/// Constraint of the uncertainty-aware program:
///   (F_row + b)^T u_bar + offset - beta u_bar^T Sigma u_bar >= 0.
struct UncertainConstraint {
  Eigen::VectorXd a_vec;
  double offset = 0.0;
  Eigen::MatrixXd Sigma;
  double beta = 0.0;

  double value(const Eigen::VectorXd& u_bar) const {
    return a_vec.dot(u_bar) + offset - beta * u_bar.dot(Sigma * u_bar);
  }
};

UncertainConstraint assemble_uncertain_constraint(const ConstraintRow& row,
                                                  const Prediction& pred, double beta);

}  // namespace gpcbf

#endif  // GPCBF_HOCBF_HPP
