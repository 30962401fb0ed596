#ifndef GPCBF_PLANTS_HPP
#define GPCBF_PLANTS_HPP

#include <functional>

#include <Eigen/Dense>

#include "gpcbf/hocbf.hpp"

namespace gpcbf {

/// Control-affine dynamics xdot = drift(x) + input_gain(x) u.
struct ControlAffineDynamics {
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> drift;
  std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> input_gain;

  Eigen::VectorXd rate(const Eigen::VectorXd& x, const Eigen::VectorXd& u) const {
    return drift(x) + input_gain(x) * u;
  }
};

/// True plant plus the (mismatched, possibly zero) nominal model the
/// controller believes in.
struct PlantPair {
  int state_dim = 0;
  int control_dim = 0;
  ControlAffineDynamics true_dyn;
  ControlAffineDynamics nominal_dyn;
};

/// Classic fixed-step RK4 for one control interval (zero-order-held u).
Eigen::VectorXd rk4_step(const ControlAffineDynamics& dyn, const Eigen::VectorXd& x,
                         const Eigen::VectorXd& u, double dt);

/// Time-parameterized obstacle center with its first two derivatives.
struct ObstacleMotion {
  std::function<Eigen::Vector2d(double)> center;
  std::function<Eigen::Vector2d(double)> velocity;
  std::function<Eigen::Vector2d(double)> accel;

  static ObstacleMotion fixed(const Eigen::Vector2d& c);
  static ObstacleMotion linear(const Eigen::Vector2d& c0, const Eigen::Vector2d& v);
};

// ---------------------------------------------------------------------------
// Planar double integrator: x = [px, py, vx, vy], u = [ax, ay].
// True accelerations are gain*u + bias - drag*v; the nominal model is the
// clean vdot = u.
// ---------------------------------------------------------------------------

struct DoubleIntegratorParams {
  Eigen::Matrix2d gain = Eigen::Matrix2d::Identity();
  Eigen::Vector2d bias = Eigen::Vector2d::Zero();
  double drag = 0.0;
};

PlantPair make_double_integrator(const DoubleIntegratorParams& true_params,
                                 bool zero_nominal = false);

/// Barrier h = ||p - c(t)||^2 - r^2 for the double integrator (relative
/// degree 2), with the obstacle's own motion folded into the chain.
BarrierSpec make_distance_barrier_di(const ObstacleMotion& obstacle, double radius,
                                     double k1, double k2);

// ---------------------------------------------------------------------------
// Planar two-link manipulator: x = [q1, q2, dq1, dq2], u = joint torques.
// ---------------------------------------------------------------------------

struct TwoLinkParams {
  double m1 = 1.0, m2 = 1.0;    // link masses
  double l1 = 1.0, l2 = 1.0;    // link lengths
  double lc1 = 0.5, lc2 = 0.5;  // center-of-mass distances
  double I1 = 0.05, I2 = 0.05;  // link inertias about the CoM
  double gravity = 9.81;

  Eigen::Matrix2d mass_matrix(const Eigen::Vector2d& q) const;
  Eigen::Vector2d coriolis(const Eigen::Vector2d& q, const Eigen::Vector2d& dq) const;
  Eigen::Vector2d gravity_torque(const Eigen::Vector2d& q) const;
  Eigen::Vector2d ee_position(const Eigen::Vector2d& q) const;
  Eigen::Matrix2d jacobian(const Eigen::Vector2d& q) const;
  Eigen::Matrix2d jacobian_rate(const Eigen::Vector2d& q, const Eigen::Vector2d& dq) const;
};

PlantPair make_two_link_arm(const TwoLinkParams& true_params,
                            const TwoLinkParams& nominal_params);

/// Barrier h = ||p_ee(q) - c||^2 - r^2 on the end effector (relative degree
/// 2 w.r.t. torques), chained through the NOMINAL arm model.
BarrierSpec make_distance_barrier_arm(const TwoLinkParams& nominal_params,
                                      const Eigen::Vector2d& obstacle, double radius,
                                      double k1, double k2);

}  // namespace gpcbf

#endif  // GPCBF_PLANTS_HPP
