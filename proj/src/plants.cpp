#include "gpcbf/plants.hpp"

#include <cmath>

namespace gpcbf {

Eigen::VectorXd rk4_step(const ControlAffineDynamics& dyn, const Eigen::VectorXd& x,
                         const Eigen::VectorXd& u, double dt) {
  const Eigen::VectorXd k1 = dyn.rate(x, u);
  const Eigen::VectorXd k2 = dyn.rate(x + 0.5 * dt * k1, u);
  const Eigen::VectorXd k3 = dyn.rate(x + 0.5 * dt * k2, u);
  const Eigen::VectorXd k4 = dyn.rate(x + dt * k3, u);
  return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

ObstacleMotion ObstacleMotion::fixed(const Eigen::Vector2d& c) {
  return {[c](double) { return c; },
          [](double) { return Eigen::Vector2d::Zero().eval(); },
          [](double) { return Eigen::Vector2d::Zero().eval(); }};
}

ObstacleMotion ObstacleMotion::linear(const Eigen::Vector2d& c0,
                                      const Eigen::Vector2d& v) {
  return {[c0, v](double t) { return (c0 + t * v).eval(); },
          [v](double) { return v; },
          [](double) { return Eigen::Vector2d::Zero().eval(); }};
}

PlantPair make_double_integrator(const DoubleIntegratorParams& p, bool zero_nominal) {
  PlantPair plant;
  plant.state_dim = 4;
  plant.control_dim = 2;

  plant.true_dyn.drift = [p](const Eigen::VectorXd& x) {
    Eigen::VectorXd dx(4);
    dx.head(2) = x.tail(2);
    dx.tail(2) = p.bias - p.drag * x.tail(2);
    return dx;
  };
  plant.true_dyn.input_gain = [p](const Eigen::VectorXd&) {
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(4, 2);
    g.bottomRows(2) = p.gain;
    return g;
  };

  if (zero_nominal) {
    // Acceleration-level estimates set to zero: the model keeps the exact
    // kinematics pdot = v but claims nothing about vdot, so the whole
    // acceleration effect (input included) lands in the learned discrepancy.
    plant.nominal_dyn.drift = [](const Eigen::VectorXd& x) {
      Eigen::VectorXd dx = Eigen::VectorXd::Zero(4);
      dx.head(2) = x.tail(2);
      return dx;
    };
    plant.nominal_dyn.input_gain = [](const Eigen::VectorXd&) {
      return Eigen::MatrixXd::Zero(4, 2).eval();
    };
  } else {
    plant.nominal_dyn.drift = [](const Eigen::VectorXd& x) {
      Eigen::VectorXd dx = Eigen::VectorXd::Zero(4);
      dx.head(2) = x.tail(2);
      return dx;
    };
    plant.nominal_dyn.input_gain = [](const Eigen::VectorXd&) {
      Eigen::MatrixXd g = Eigen::MatrixXd::Zero(4, 2);
      g.bottomRows(2).setIdentity();
      return g;
    };
  }
  return plant;
}

BarrierSpec make_distance_barrier_di(const ObstacleMotion& obstacle, double radius,
                                     double k1, double k2) {
  BarrierSpec spec;
  spec.relative_degree = 2;
  spec.control_dim = 2;
  spec.alphas.resize(2);
  spec.alphas << k1, k2;

  spec.drift_chain = [obstacle, radius](const Eigen::VectorXd& x, double t) {
    const Eigen::Vector2d p = x.head(2);
    const Eigen::Vector2d v = x.tail(2);
    const Eigen::Vector2d c = obstacle.center(t);
    const Eigen::Vector2d cv = obstacle.velocity(t);
    const Eigen::Vector2d ca = obstacle.accel(t);
    const Eigen::Vector2d rel = p - c;
    const Eigen::Vector2d rv = v - cv;
    Eigen::VectorXd d(3);
    d(0) = rel.squaredNorm() - radius * radius;
    d(1) = 2.0 * rel.dot(rv);
    d(2) = 2.0 * rv.squaredNorm() - 2.0 * rel.dot(ca);  // nominal vdot = 0
    return d;
  };
  spec.control_row = [obstacle](const Eigen::VectorXd& x, double t) {
    const Eigen::Vector2d rel = x.head(2) - obstacle.center(t);
    return Eigen::RowVectorXd(2.0 * rel.transpose());
  };
  return spec;
}

Eigen::Matrix2d TwoLinkParams::mass_matrix(const Eigen::Vector2d& q) const {
  const double c2 = std::cos(q(1));
  Eigen::Matrix2d M;
  const double a = I1 + I2 + m1 * lc1 * lc1 + m2 * (l1 * l1 + lc2 * lc2 + 2.0 * l1 * lc2 * c2);
  const double b = I2 + m2 * (lc2 * lc2 + l1 * lc2 * c2);
  const double d = I2 + m2 * lc2 * lc2;
  M << a, b, b, d;
  return M;
}

Eigen::Vector2d TwoLinkParams::coriolis(const Eigen::Vector2d& q,
                                        const Eigen::Vector2d& dq) const {
  const double s2 = std::sin(q(1));
  const double hh = m2 * l1 * lc2 * s2;
  Eigen::Vector2d c;
  c(0) = -hh * (2.0 * dq(0) * dq(1) + dq(1) * dq(1));
  c(1) = hh * dq(0) * dq(0);
  return c;
}

Eigen::Vector2d TwoLinkParams::gravity_torque(const Eigen::Vector2d& q) const {
  const double c1 = std::cos(q(0));
  const double c12 = std::cos(q(0) + q(1));
  Eigen::Vector2d g;
  g(0) = (m1 * lc1 + m2 * l1) * gravity * c1 + m2 * lc2 * gravity * c12;
  g(1) = m2 * lc2 * gravity * c12;
  return g;
}

Eigen::Vector2d TwoLinkParams::ee_position(const Eigen::Vector2d& q) const {
  return {l1 * std::cos(q(0)) + l2 * std::cos(q(0) + q(1)),
          l1 * std::sin(q(0)) + l2 * std::sin(q(0) + q(1))};
}

Eigen::Matrix2d TwoLinkParams::jacobian(const Eigen::Vector2d& q) const {
  const double s1 = std::sin(q(0)), c1 = std::cos(q(0));
  const double s12 = std::sin(q(0) + q(1)), c12 = std::cos(q(0) + q(1));
  Eigen::Matrix2d J;
  J << -l1 * s1 - l2 * s12, -l2 * s12, l1 * c1 + l2 * c12, l2 * c12;
  return J;
}

Eigen::Matrix2d TwoLinkParams::jacobian_rate(const Eigen::Vector2d& q,
                                             const Eigen::Vector2d& dq) const {
  const double s1 = std::sin(q(0)), c1 = std::cos(q(0));
  const double s12 = std::sin(q(0) + q(1)), c12 = std::cos(q(0) + q(1));
  const double d1 = dq(0), d12 = dq(0) + dq(1);
  Eigen::Matrix2d Jd;
  Jd << -l1 * c1 * d1 - l2 * c12 * d12, -l2 * c12 * d12,
        -l1 * s1 * d1 - l2 * s12 * d12, -l2 * s12 * d12;
  return Jd;
}

namespace {

ControlAffineDynamics arm_dynamics(const TwoLinkParams& p) {
  ControlAffineDynamics dyn;
  dyn.drift = [p](const Eigen::VectorXd& x) {
    const Eigen::Vector2d q = x.head(2);
    const Eigen::Vector2d dq = x.tail(2);
    Eigen::VectorXd dx(4);
    dx.head(2) = dq;
    dx.tail(2) = p.mass_matrix(q).ldlt().solve(-p.coriolis(q, dq) - p.gravity_torque(q));
    return dx;
  };
  dyn.input_gain = [p](const Eigen::VectorXd& x) {
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(4, 2);
    g.bottomRows(2) = p.mass_matrix(x.head(2)).inverse();
    return g;
  };
  return dyn;
}

}  // namespace

PlantPair make_two_link_arm(const TwoLinkParams& true_params,
                            const TwoLinkParams& nominal_params) {
  PlantPair plant;
  plant.state_dim = 4;
  plant.control_dim = 2;
  plant.true_dyn = arm_dynamics(true_params);
  plant.nominal_dyn = arm_dynamics(nominal_params);
  return plant;
}

BarrierSpec make_distance_barrier_arm(const TwoLinkParams& nom,
                                      const Eigen::Vector2d& obstacle, double radius,
                                      double k1, double k2) {
  BarrierSpec spec;
  spec.relative_degree = 2;
  spec.control_dim = 2;
  spec.alphas.resize(2);
  spec.alphas << k1, k2;

  spec.drift_chain = [nom, obstacle, radius](const Eigen::VectorXd& x, double) {
    const Eigen::Vector2d q = x.head(2);
    const Eigen::Vector2d dq = x.tail(2);
    const Eigen::Vector2d rel = nom.ee_position(q) - obstacle;
    const Eigen::Matrix2d J = nom.jacobian(q);
    const Eigen::Vector2d pv = J * dq;  // end-effector velocity
    const Eigen::Vector2d ddq_drift =
        nom.mass_matrix(q).ldlt().solve(-nom.coriolis(q, dq) - nom.gravity_torque(q));
    Eigen::VectorXd d(3);
    d(0) = rel.squaredNorm() - radius * radius;
    d(1) = 2.0 * rel.dot(pv);
    d(2) = 2.0 * pv.squaredNorm() +
           2.0 * rel.dot(nom.jacobian_rate(q, dq) * dq + J * ddq_drift);
    return d;
  };
  spec.control_row = [nom, obstacle](const Eigen::VectorXd& x, double) {
    const Eigen::Vector2d q = x.head(2);
    const Eigen::Vector2d rel = nom.ee_position(q) - obstacle;
    const Eigen::RowVector2d row =
        2.0 * rel.transpose() * nom.jacobian(q) * nom.mass_matrix(q).inverse();
    return Eigen::RowVectorXd(row);
  };
  return spec;
}

}  // namespace gpcbf
