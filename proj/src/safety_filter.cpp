#include "gpcbf/safety_filter.hpp"

#include <cmath>

namespace gpcbf {

namespace {

Eigen::MatrixXd clamp_psd(const Eigen::MatrixXd& sigma) {
  Eigen::MatrixXd sym = 0.5 * (sigma + sigma.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
  if (eig.eigenvalues().minCoeff() >= 0.0) return sym;
  Eigen::VectorXd vals = eig.eigenvalues().cwiseMax(0.0);
  return eig.eigenvectors() * vals.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace

SafetyProblem::SafetyProblem(Eigen::VectorXd u_nom_in, const UncertainConstraint& c)
    : u_nom(std::move(u_nom_in)), a_vec(c.a_vec), offset(c.offset),
      Sigma(clamp_psd(c.Sigma)), beta(c.beta) {
  if (a_vec.size() != u_nom.size() + 1 || Sigma.rows() != a_vec.size()) {
    throw std::invalid_argument("SafetyProblem: inconsistent dimensions");
  }
  if (beta < 0.0) {
    throw std::invalid_argument("SafetyProblem: beta must be >= 0");
  }
}

double SafetyProblem::constraint_value(const Eigen::VectorXd& u) const {
  Eigen::VectorXd u_bar(u.size() + 1);
  u_bar(0) = 1.0;
  u_bar.tail(u.size()) = u;
  return a_vec.dot(u_bar) + offset - beta * u_bar.dot(Sigma * u_bar);
}

double compute_beta(const BetaConfig& cfg, int window_size) {
  if (cfg.delta <= 0.0 || cfg.delta >= 1.0) {
    throw std::invalid_argument("compute_beta: delta must be in (0, 1)");
  }
  if (window_size < 1 || cfg.rkhs_bound < 0.0 || cfg.kappa < 0.0) {
    throw std::invalid_argument("compute_beta: window_size >= 1, nonnegative bounds");
  }
  const double ln = std::log((window_size + 1.0) / cfg.delta);
  return std::sqrt(2.0 * cfg.rkhs_bound * cfg.rkhs_bound +
                   300.0 * cfg.kappa * ln * ln * ln);
}

std::string to_string(FilterStatus s) {
  switch (s) {
    case FilterStatus::interior: return "interior";
    case FilterStatus::active: return "active";
    case FilterStatus::infeasible_relaxed: return "infeasible_relaxed";
  }
  return "unknown";
}

FilterResult solve(const SafetyProblem& problem) {
  const int m = static_cast<int>(problem.u_nom.size());
  FilterResult result;
  result.u = problem.u_nom;
  result.constraint_value = problem.constraint_value(problem.u_nom);
  if (result.constraint_value >= 0.0) {
    result.status = FilterStatus::interior;
    return result;
  }

  // Constraint in u alone: c(u) = r + q.u - u^T H u.
  const double s00 = problem.Sigma(0, 0);
  const Eigen::VectorXd s0 = problem.Sigma.block(1, 0, m, 1);
  const Eigen::MatrixXd H = problem.beta * problem.Sigma.block(1, 1, m, m);
  const Eigen::VectorXd q = problem.a_vec.tail(m) - 2.0 * problem.beta * s0;
  const double r = problem.a_vec(0) + problem.offset - problem.beta * s00;

  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(m, m);
  auto u_of = [&](double lam) -> Eigen::VectorXd {
    return (eye + 2.0 * lam * H).ldlt().solve(problem.u_nom + lam * q);
  };
  auto c_of = [&](const Eigen::VectorXd& u) -> double {
    return r + q.dot(u) - u.dot(H * u);
  };
  auto grad_c = [&](const Eigen::VectorXd& u) -> Eigen::VectorXd {
    return q - 2.0 * H * u;
  };

  const double tol =
      std::min(1e-7, 1e-10 * std::max(1.0, std::abs(result.constraint_value)));
  int iters = 0;

  // Bracket the root of c(u(lambda)); the map is nondecreasing in lambda.
  double lo = 0.0;
  double hi = 1.0;
  bool bracketed = false;
  for (; hi <= 1e12; hi *= 4.0) {
    ++iters;
    if (c_of(u_of(hi)) >= 0.0) {
      bracketed = true;
      break;
    }
    lo = hi;
  }
  if (!bracketed) {
    // Feasible set is empty for any multiplier we allow: degrade gracefully
    // with the constraint-maximizing control.
    result.u = u_of(1e12);
    result.lambda = 1e12;
    result.constraint_value = c_of(result.u);
    result.status = FilterStatus::infeasible_relaxed;
    result.solve_iters = iters;
    return result;
  }

  // Safeguarded Newton on g(lambda) = c(u(lambda)); g'(lambda) =
  // grad_c(u)^T (I + 2 lambda H)^-1 grad_c(u) >= 0.
  double lam = 0.5 * (lo + hi);
  Eigen::VectorXd u = u_of(lam);
  double g = c_of(u);
  for (int it = 0; it < 200 && std::abs(g) > tol; ++it) {
    ++iters;
    if (g > 0.0) { hi = lam; } else { lo = lam; }
    const Eigen::VectorXd gc = grad_c(u);
    const double gprime = gc.dot((eye + 2.0 * lam * H).ldlt().solve(gc));
    double next = lam - g / gprime;
    if (!(std::isfinite(next)) || next <= lo || next >= hi) {
      next = 0.5 * (lo + hi);  // bisection safeguard
    }
    lam = next;
    u = u_of(lam);
    g = c_of(u);
  }

  result.u = u;
  result.lambda = lam;
  result.constraint_value = g;
  result.status = FilterStatus::active;
  result.solve_iters = iters;
  result.stationarity_residual =
      (u - problem.u_nom - lam * grad_c(u)).lpNorm<Eigen::Infinity>();
  return result;
}

FilterResult filter_control(const ModelState& state, const BarrierSpec& spec,
                            const Eigen::VectorXd& x, double t,
                            const Eigen::VectorXd& xi_star,
                            const Eigen::VectorXd& u_nom, double beta) {
  const Prediction pred = predict(state, xi_star);
  const ConstraintRow row = nominal_constraint(spec, x, t);
  const UncertainConstraint c = assemble_uncertain_constraint(row, pred, beta);
  return solve(SafetyProblem(u_nom, c));
}

Prediction zero_prediction(int slots) {
  Prediction p;
  p.b_vec = Eigen::VectorXd::Zero(slots);
  p.Sigma = Eigen::MatrixXd::Zero(slots, slots);
  return p;
}

}  // namespace gpcbf
