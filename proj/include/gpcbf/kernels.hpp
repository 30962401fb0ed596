#ifndef GPCBF_KERNELS_HPP
#define GPCBF_KERNELS_HPP

#include <functional>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace gpcbf {

/// Input point of the augmented GP: a state/feature vector xi paired with the
/// affine control vector u_bar = [1, u^T]^T. The leading 1 is what makes the
/// compound kernel's posterior mean affine (and variance quadratic) in u.
struct AugmentedInput {
  Eigen::VectorXd state;        // xi
  Eigen::VectorXd control_bar;  // u_bar, control_bar(0) == 1

  AugmentedInput() = default;
  AugmentedInput(Eigen::VectorXd xi, Eigen::VectorXd u_bar);

  static AugmentedInput from_control(const Eigen::VectorXd& xi,
                                     const Eigen::VectorXd& u);
};

struct Sample {
  AugmentedInput input;
  double target = 0.0;  // z
};

/// Squared-exponential kernel with per-dimension lengthscales.
class SquaredExponentialKernel {
 public:
  SquaredExponentialKernel() = default;
  SquaredExponentialKernel(double signal_variance, Eigen::VectorXd lengthscales);

  double signal_variance() const { return signal_variance_; }
  const Eigen::VectorXd& lengthscales() const { return lengthscales_; }
  int input_dim() const { return static_cast<int>(lengthscales_.size()); }

  double operator()(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const;

  // d k / d log(signal_variance) and d k / d log(lengthscale_d), needed for
  // marginal-likelihood gradients.
  double grad_log_signal_variance(const Eigen::VectorXd& a,
                                  const Eigen::VectorXd& b) const;
  double grad_log_lengthscale(const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                              int d) const;

 private:
  double signal_variance_ = 1.0;
  Eigen::VectorXd lengthscales_;
};

/// Compound kernel over augmented inputs:
///   k([xi,u_bar], [xi',u_bar']) = u_bar^T Diag(k_1(xi,xi'),...,k_{m+1}(xi,xi')) u_bar'
/// built from m+1 scalar base kernels for control dimension m. Positive
/// definiteness is inherited from the base kernels. Immutable after
/// construction; safe to share across threads.
class AdpKernel {
 public:
  AdpKernel() = default;
  AdpKernel(std::vector<SquaredExponentialKernel> base_kernels, int control_dim);

  int control_dim() const { return control_dim_; }       // m
  int slots() const { return control_dim_ + 1; }         // m + 1
  int state_dim() const;
  const std::vector<SquaredExponentialKernel>& base_kernels() const {
    return base_kernels_;
  }

  /// Values of all base kernels at a state pair: [k_1(xi,xi'),...,k_{m+1}(xi,xi')].
  Eigen::VectorXd base_values(const Eigen::VectorXd& xi,
                              const Eigen::VectorXd& xi2) const;

  double eval(const AugmentedInput& a, const AugmentedInput& b) const;

  Eigen::MatrixXd gram(const std::vector<AugmentedInput>& rows,
                       const std::vector<AugmentedInput>& cols) const;
  Eigen::MatrixXd gram(const std::vector<AugmentedInput>& points) const;

  /// Cross matrix between a bare query state and the inducing set:
  /// entry (i, j) = k_i(xi_star, xi_j) * u_bar_j(i), shape (m+1) x M.
  /// Contracting its transpose with u_bar_star reproduces eval() against each
  /// inducing point, which is what keeps predictions affine in u_star.
  Eigen::MatrixXd cross_vector(const Eigen::VectorXd& xi_star,
                               const std::vector<AugmentedInput>& inducing) const;

  /// Number of trainable kernel hyperparameters: (m+1) * (1 + state_dim).
  int num_params() const;
  /// Pack hyperparameters as logs: per base kernel [log sv, log l_1..log l_d].
  Eigen::VectorXd log_params() const;
  AdpKernel with_log_params(const Eigen::VectorXd& theta) const;

  /// Derivative of eval(a, b) w.r.t. log-hyperparameter `p` (index into
  /// log_params ordering).
  double eval_grad(const AugmentedInput& a, const AugmentedInput& b, int p) const;

 private:
  std::vector<SquaredExponentialKernel> base_kernels_;
  int control_dim_ = 0;
};

/// Central-finite-difference gradient of a scalar objective at theta.
/// Used by tests as the independent oracle for the analytic bound gradient
/// and available as a fallback optimizer backend.
Eigen::VectorXd numerical_gradient(
    const std::function<double(const Eigen::VectorXd&)>& objective,
    const Eigen::VectorXd& theta, double step = 1e-5);

}  // namespace gpcbf

#endif  // GPCBF_KERNELS_HPP
