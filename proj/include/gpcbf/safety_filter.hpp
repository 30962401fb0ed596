#ifndef GPCBF_SAFETY_FILTER_HPP
#define GPCBF_SAFETY_FILTER_HPP

#include <string>

#include <Eigen/Dense>

#include "gpcbf/hocbf.hpp"
#include "gpcbf/sparse_gp.hpp"

namespace gpcbf {

/// min 1/2 ||u - u_nom||^2  s.t.  a_vec . u_bar + offset - beta u_bar^T Sigma u_bar >= 0
/// with u_bar = [1, u^T]^T. Sigma is clamped to PSD at construction, so the
/// constraint is concave in u and the feasible set convex.
struct SafetyProblem {
  Eigen::VectorXd u_nom;
  Eigen::VectorXd a_vec;   // length m+1
  double offset = 0.0;
  Eigen::MatrixXd Sigma;   // (m+1) x (m+1)
  double beta = 0.0;

  SafetyProblem() = default;
  SafetyProblem(Eigen::VectorXd u_nom, const UncertainConstraint& constraint);

  double constraint_value(const Eigen::VectorXd& u) const;
};

/// Inputs of the theoretical confidence scale
///   beta = sqrt(2 ||Delta||^2 + 300 kappa ln^3((P+1)/delta)).
/// kappa (the maximum information gain) is a config input, not computed.
struct BetaConfig {
  double delta = 0.05;      // failure probability, in (0,1)
  double rkhs_bound = 1.0;  // ||Delta||_ka
  double kappa = 0.5;       // kappa_{P+1}
};

double compute_beta(const BetaConfig& cfg, int window_size);

enum class FilterStatus { interior, active, infeasible_relaxed };
std::string to_string(FilterStatus s);

struct FilterResult {
  Eigen::VectorXd u;
  FilterStatus status = FilterStatus::interior;
  double constraint_value = 0.0;
  double lambda = 0.0;             // KKT multiplier (0 when interior)
  double stationarity_residual = 0.0;
  int solve_iters = 0;
};

/// Exact minimum-perturbation solve. The active case runs safeguarded
/// Newton/bisection on the scalar dual variable: for each lambda >= 0,
/// u(lambda) = (I + 2 lambda H)^-1 (u_nom + lambda q) solves the stationarity
/// system and the constraint value at u(lambda) is nondecreasing in lambda.
/// An empty feasible set yields status infeasible_relaxed with the
/// constraint-maximizing control; the call never throws on infeasibility.
FilterResult solve(const SafetyProblem& problem);

/// predict -> assemble -> solve, the per-step safety filter of the control
/// loop. `xi_star` is the learner's feature vector at the current state.
FilterResult filter_control(const ModelState& state, const BarrierSpec& spec,
                            const Eigen::VectorXd& x, double t,
                            const Eigen::VectorXd& xi_star,
                            const Eigen::VectorXd& u_nom, double beta);

/// Zero-information prediction (b = 0, Sigma = 0); turns the filter into the
/// nominal HOCBF-QP for no-learning baselines.
Prediction zero_prediction(int slots);

}  // namespace gpcbf

#endif  // GPCBF_SAFETY_FILTER_HPP
