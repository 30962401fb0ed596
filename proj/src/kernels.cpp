#include "gpcbf/kernels.hpp"

#include <cmath>
#include <string>

namespace gpcbf {

AugmentedInput::AugmentedInput(Eigen::VectorXd xi, Eigen::VectorXd u_bar)
    : state(std::move(xi)), control_bar(std::move(u_bar)) {
  if (control_bar.size() < 1 || control_bar(0) != 1.0) {
    throw std::invalid_argument("AugmentedInput: control_bar must start with 1");
  }
}

AugmentedInput AugmentedInput::from_control(const Eigen::VectorXd& xi,
                                            const Eigen::VectorXd& u) {
  Eigen::VectorXd u_bar(u.size() + 1);
  u_bar(0) = 1.0;
  u_bar.tail(u.size()) = u;
  return AugmentedInput(xi, u_bar);
}

SquaredExponentialKernel::SquaredExponentialKernel(double signal_variance,
                                                   Eigen::VectorXd lengthscales)
    : signal_variance_(signal_variance), lengthscales_(std::move(lengthscales)) {
  if (signal_variance_ <= 0.0) {
    throw std::invalid_argument("SquaredExponentialKernel: signal variance must be > 0");
  }
  if (lengthscales_.size() == 0 || (lengthscales_.array() <= 0.0).any()) {
    throw std::invalid_argument("SquaredExponentialKernel: lengthscales must be > 0");
  }
}

double SquaredExponentialKernel::operator()(const Eigen::VectorXd& a,
                                            const Eigen::VectorXd& b) const {
  if (a.size() != lengthscales_.size() || b.size() != lengthscales_.size()) {
    throw std::invalid_argument("SquaredExponentialKernel: input dimension mismatch");
  }
  const double q = ((a - b).array() / lengthscales_.array()).square().sum();
  return signal_variance_ * std::exp(-0.5 * q);
}

double SquaredExponentialKernel::grad_log_signal_variance(
    const Eigen::VectorXd& a, const Eigen::VectorXd& b) const {
  return (*this)(a, b);
}

double SquaredExponentialKernel::grad_log_lengthscale(const Eigen::VectorXd& a,
                                                      const Eigen::VectorXd& b,
                                                      int d) const {
  const double r = (a(d) - b(d)) / lengthscales_(d);
  return (*this)(a, b) * r * r;
}

AdpKernel::AdpKernel(std::vector<SquaredExponentialKernel> base_kernels,
                     int control_dim)
    : base_kernels_(std::move(base_kernels)), control_dim_(control_dim) {
  if (static_cast<int>(base_kernels_.size()) != control_dim_ + 1) {
    throw std::invalid_argument(
        "AdpKernel: need exactly control_dim + 1 base kernels, got " +
        std::to_string(base_kernels_.size()));
  }
  for (const auto& k : base_kernels_) {
    if (k.input_dim() != base_kernels_.front().input_dim()) {
      throw std::invalid_argument("AdpKernel: base kernels disagree on input dim");
    }
  }
}

int AdpKernel::state_dim() const {
  return base_kernels_.empty() ? 0 : base_kernels_.front().input_dim();
}

Eigen::VectorXd AdpKernel::base_values(const Eigen::VectorXd& xi,
                                       const Eigen::VectorXd& xi2) const {
  Eigen::VectorXd v(slots());
  for (int i = 0; i < slots(); ++i) v(i) = base_kernels_[i](xi, xi2);
  return v;
}

double AdpKernel::eval(const AugmentedInput& a, const AugmentedInput& b) const {
  if (a.control_bar.size() != slots() || b.control_bar.size() != slots()) {
    throw std::invalid_argument("AdpKernel: control_bar length must be m + 1");
  }
  double acc = 0.0;
  for (int i = 0; i < slots(); ++i) {
    acc += a.control_bar(i) * base_kernels_[i](a.state, b.state) * b.control_bar(i);
  }
  return acc;
}

Eigen::MatrixXd AdpKernel::gram(const std::vector<AugmentedInput>& rows,
                                const std::vector<AugmentedInput>& cols) const {
  if (rows.empty() || cols.empty()) {
    throw std::invalid_argument("AdpKernel::gram: empty input list");
  }
  Eigen::MatrixXd out(rows.size(), cols.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < cols.size(); ++c) {
      out(r, c) = eval(rows[r], cols[c]);
    }
  }
  return out;
}

Eigen::MatrixXd AdpKernel::gram(const std::vector<AugmentedInput>& points) const {
  if (points.empty()) {
    throw std::invalid_argument("AdpKernel::gram: empty input list");
  }
  const auto n = points.size();
  Eigen::MatrixXd out(n, n);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = r; c < n; ++c) {
      const double v = eval(points[r], points[c]);
      out(r, c) = v;
      out(c, r) = v;
    }
  }
  return out;
}

Eigen::MatrixXd AdpKernel::cross_vector(
    const Eigen::VectorXd& xi_star,
    const std::vector<AugmentedInput>& inducing) const {
  if (inducing.empty()) {
    throw std::invalid_argument("AdpKernel::cross_vector: empty inducing set");
  }
  Eigen::MatrixXd out(slots(), inducing.size());
  for (std::size_t j = 0; j < inducing.size(); ++j) {
    const Eigen::VectorXd kv = base_values(xi_star, inducing[j].state);
    out.col(j) = kv.cwiseProduct(inducing[j].control_bar);
  }
  return out;
}

int AdpKernel::num_params() const { return slots() * (1 + state_dim()); }

Eigen::VectorXd AdpKernel::log_params() const {
  Eigen::VectorXd theta(num_params());
  int at = 0;
  for (const auto& k : base_kernels_) {
    theta(at++) = std::log(k.signal_variance());
    for (int d = 0; d < k.input_dim(); ++d) theta(at++) = std::log(k.lengthscales()(d));
  }
  return theta;
}

AdpKernel AdpKernel::with_log_params(const Eigen::VectorXd& theta) const {
  if (theta.size() != num_params()) {
    throw std::invalid_argument("AdpKernel::with_log_params: wrong parameter count");
  }
  std::vector<SquaredExponentialKernel> ks;
  ks.reserve(base_kernels_.size());
  int at = 0;
  for (const auto& k : base_kernels_) {
    const double sv = std::exp(theta(at++));
    Eigen::VectorXd ls(k.input_dim());
    for (int d = 0; d < k.input_dim(); ++d) ls(d) = std::exp(theta(at++));
    ks.emplace_back(sv, std::move(ls));
  }
  return AdpKernel(std::move(ks), control_dim_);
}

double AdpKernel::eval_grad(const AugmentedInput& a, const AugmentedInput& b,
                            int p) const {
  const int per = 1 + state_dim();
  const int slot = p / per;
  const int which = p % per;
  const double w = a.control_bar(slot) * b.control_bar(slot);
  if (w == 0.0) return 0.0;
  const auto& k = base_kernels_[slot];
  if (which == 0) return w * k.grad_log_signal_variance(a.state, b.state);
  return w * k.grad_log_lengthscale(a.state, b.state, which - 1);
}

Eigen::VectorXd numerical_gradient(
    const std::function<double(const Eigen::VectorXd&)>& objective,
    const Eigen::VectorXd& theta, double step) {
  Eigen::VectorXd grad(theta.size());
  Eigen::VectorXd probe = theta;
  for (int i = 0; i < theta.size(); ++i) {
    probe(i) = theta(i) + step;
    const double hi = objective(probe);
    probe(i) = theta(i) - step;
    const double lo = objective(probe);
    probe(i) = theta(i);
    if (!std::isfinite(hi) || !std::isfinite(lo)) {
      throw std::runtime_error("numerical_gradient: objective not finite near theta(" +
                               std::to_string(i) + ")");
    }
    grad(i) = (hi - lo) / (2.0 * step);
  }
  return grad;
}

}  // namespace gpcbf
