#ifndef GPCBF_SPARSE_GP_HPP
#define GPCBF_SPARSE_GP_HPP

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gpcbf/kernels.hpp"

namespace gpcbf {

/// Thrown when a linear-algebra step cannot be stabilized (Cholesky failure
/// at maximum jitter, divergent bound, ...).
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

struct JitteredInverse {
  Eigen::MatrixXd inverse;
  double jitter = 0.0;  // amount actually added to the diagonal
};

/// Inverse of a symmetric matrix via Cholesky, escalating a diagonal jitter
/// from 1e-10 to 1e-4 until the factorization succeeds. Throws NumericalError
/// (naming `label`) if the matrix is still not positive definite at 1e-4.
JitteredInverse jittered_inverse(const Eigen::MatrixXd& A,
                                 const std::string& label = "matrix");

/// Fixed-capacity FIFO of training samples; newest at the back.
struct TrainingWindow {
  int capacity = 0;
  std::vector<Sample> samples;

  int size() const { return static_cast<int>(samples.size()); }
  bool full() const { return size() == capacity; }
  /// Appends, evicting the oldest sample once at capacity. Returns the
  /// evicted sample if any.
  bool push(const Sample& s, Sample* evicted = nullptr);
};

/// Forgetting weights Lambda: sample i (0-based, oldest first) of a window of
/// size P carries weight phi^(P-1-i); the newest sample always weighs 1.
Eigen::VectorXd forgetting_weights(double phi, int window_size);

/// Posterior over the coefficient vector of Delta B at a query state:
/// mean(u_bar) = b_vec . u_bar, variance(u_bar) = u_bar^T Sigma u_bar.
struct Prediction {
  Eigen::VectorXd b_vec;   // length m+1
  Eigen::MatrixXd Sigma;   // (m+1) x (m+1), symmetric

  double mean(const Eigen::VectorXd& u_bar) const { return b_vec.dot(u_bar); }
  /// Quadratic-form variance, clamped at zero (roundoff can drive it
  /// slightly negative); clamps are counted, not errors.
  double variance(const Eigen::VectorXd& u_bar) const;

  static std::int64_t negative_variance_clamps();
  static void reset_clamp_counter();
};

/// The full learner state: kernel + window + forgetting factor + inducing set
/// with all cached matrices needed for O(M^3) streaming updates.
///
/// Cache layout (all derived from kernel/window/inducing/phi):
///   K_oo      MxM gram of the inducing set
///   K_oo_inv  its (jittered) inverse
///   K_xo      PxM cross gram, row i = kernel between window sample i and inducing
///   B_phi     (K_oo + s^-2 K_xo^T Lambda K_xo)^-1
///   B_phi_inv its inverse, kept exactly because streaming updates recurse on it
///   zlk       1xM row z^T Lambda K_xo
struct ModelState {
  AdpKernel kernel;
  double noise_variance = 1e-2;
  double phi = 1.0;
  TrainingWindow window;
  std::vector<AugmentedInput> inducing;

  Eigen::MatrixXd K_oo, K_oo_inv, B_phi, B_phi_inv, K_xo;
  Eigen::RowVectorXd zlk;

  // Streaming diagnostics.
  int fallback_rebuilds = 0;
  int rejected_insertions = 0;

  int inducing_size() const { return static_cast<int>(inducing.size()); }
  Eigen::VectorXd weights() const { return forgetting_weights(phi, window.size()); }

  /// Recompute every cache from scratch (used after load, as the streaming
  /// fallback, and at the end of fitting).
  void rebuild_caches();

  /// Max relative Frobenius distance between the stored caches and a fresh
  /// batch recomputation; cheap consistency probe for load-time self tests.
  double cache_consistency_error() const;
};

/// Forgetting-weighted collapsed bound of the window/inducing configuration:
///   log N(z | 0, K_xo K_oo^-1 K_ox + s^2 Lambda^-1)
///   - (log(2 pi s^2) / (2 s^2)) * sum_i (w_i - 1)
///   - (1 / (2 s^2)) * sum_i w_i (k_ii - q_ii)
/// At phi = 1 this is the standard collapsed variational bound. Note the
/// middle term keeps the printed 1/(2 s^2) scaling on the log-constant sum,
/// which differs from the usual collapsed-bound constant; see README.
double collapsed_bound(const ModelState& state);

/// Same bound for an arbitrary hyperparameter vector
/// theta = [kernel log-params..., log noise_variance].
double collapsed_bound_at(const ModelState& state, const Eigen::VectorXd& theta);

/// Analytic gradient of collapsed_bound_at w.r.t. theta. Validated against
/// central finite differences in the test suite.
Eigen::VectorXd collapsed_bound_gradient(const ModelState& state,
                                         const Eigen::VectorXd& theta);

Prediction predict(const ModelState& state, const Eigen::VectorXd& xi_star);

struct FitOptions {
  int max_iterations = 200;
  int restarts = 3;
  double gradient_tolerance = 1e-5;
  double initial_step = 0.1;
  std::uint64_t seed = 0;
  bool verbose = false;
};

struct FitReport {
  double bound = 0.0;
  int iterations = 0;
  bool converged = false;
  int restarts_used = 0;
};

/// Offline phase: fill the window with `data` (oldest first, size = capacity),
/// seed the inducing set with the M most recent samples, and train kernel
/// hyperparameters plus noise variance by maximizing the collapsed bound
/// (gradient ascent with backtracking, multi-restart). Inducing locations are
/// selected from data, never optimized continuously.
ModelState fit_offline(const std::vector<Sample>& data, int num_inducing,
                       double phi, const AdpKernel& init_kernel,
                       double init_noise_variance, const FitOptions& opts = {},
                       FitReport* report = nullptr);

/// Data-scaled starting point for the hyperparameter search: per-slot signal
/// variances from the target variance split across the control slots,
/// lengthscales from the per-dimension feature spread. Keeps the optimizer
/// out of the "explain everything as noise" basin when targets are large.
AdpKernel kernel_init_from_data(const std::vector<Sample>& data, int control_dim,
                                double* noise_init = nullptr);

}  // namespace gpcbf

#endif  // GPCBF_SPARSE_GP_HPP
