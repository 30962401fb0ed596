#include "gpcbf/sparse_gp.hpp"

#include <atomic>
#include <cmath>
#include <iostream>
#include <limits>
#include <random>

namespace gpcbf {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;
constexpr double kLogNoiseFloor = -13.815510557964274;  // log(1e-6), relative

std::atomic<std::int64_t> g_variance_clamps{0};

struct BoundWorkspace {
  // Everything the bound and its gradient share for one hyperparameter set.
  Eigen::MatrixXd K_oo, K_oo_inv, K_xo;
  Eigen::VectorXd k_diag;       // k(a_i, a_i) over the window
  Eigen::VectorXd w;            // forgetting weights
  Eigen::MatrixXd C;            // K_xo K_oo^-1 K_ox + s^2 Lambda^-1
  Eigen::LLT<Eigen::MatrixXd> C_llt;
  Eigen::VectorXd alpha;        // C^-1 z
  Eigen::VectorXd z;
  double noise = 0.0;
  double koo_jitter = 0.0;
};

BoundWorkspace build_workspace(const AdpKernel& kernel, double noise_variance,
                               const TrainingWindow& window,
                               const std::vector<AugmentedInput>& inducing,
                               double phi) {
  BoundWorkspace ws;
  const int P = window.size();
  const int M = static_cast<int>(inducing.size());
  ws.noise = noise_variance;
  ws.K_oo = kernel.gram(inducing);
  auto inv = jittered_inverse(ws.K_oo, "K_oo");
  ws.K_oo_inv = inv.inverse;
  ws.koo_jitter = inv.jitter;
  ws.K_xo.resize(P, M);
  ws.k_diag.resize(P);
  ws.z.resize(P);
  for (int i = 0; i < P; ++i) {
    const auto& s = window.samples[i];
    for (int j = 0; j < M; ++j) ws.K_xo(i, j) = kernel.eval(s.input, inducing[j]);
    ws.k_diag(i) = kernel.eval(s.input, s.input);
    ws.z(i) = s.target;
  }
  ws.w = forgetting_weights(phi, P);
  ws.C = ws.K_xo * ws.K_oo_inv * ws.K_xo.transpose();
  ws.C += (noise_variance * ws.w.cwiseInverse()).asDiagonal();
  ws.C = 0.5 * (ws.C + ws.C.transpose().eval());
  ws.C_llt.compute(ws.C);
  if (ws.C_llt.info() != Eigen::Success) {
    throw NumericalError("collapsed_bound: covariance C is not positive definite");
  }
  ws.alpha = ws.C_llt.solve(ws.z);
  return ws;
}

double bound_from_workspace(const BoundWorkspace& ws) {
  const int P = static_cast<int>(ws.z.size());
  double logdet = 0.0;
  const auto& L = ws.C_llt.matrixLLT();
  for (int i = 0; i < P; ++i) logdet += std::log(L(i, i));
  logdet *= 2.0;

  const double log_marginal =
      -0.5 * ws.z.dot(ws.alpha) - 0.5 * logdet - 0.5 * P * std::log(kTwoPi);

  const double s = ws.noise;
  const double const_term =
      -(std::log(kTwoPi * s) / (2.0 * s)) * (ws.w.sum() - P);

  // q_ii = row_i K_oo^-1 row_i^T; the weighted projection-residual sum.
  double trace_term = 0.0;
  for (int i = 0; i < P; ++i) {
    const Eigen::VectorXd row = ws.K_xo.row(i).transpose();
    const double q_ii = row.dot(ws.K_oo_inv * row);
    trace_term += ws.w(i) * (ws.k_diag(i) - q_ii);
  }
  return log_marginal + const_term - trace_term / (2.0 * s);
}

}  // namespace

JitteredInverse jittered_inverse(const Eigen::MatrixXd& A, const std::string& label) {
  if (A.rows() != A.cols()) {
    throw std::invalid_argument("jittered_inverse: " + label + " is not square");
  }
  const Eigen::MatrixXd sym = 0.5 * (A + A.transpose());
  const int n = static_cast<int>(sym.rows());
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(n, n);
  // Escalate from 1e-10 to 1e-4, scaled by the diagonal so the policy is
  // invariant to the problem's units.
  const double scale = std::max(1e-300, sym.diagonal().cwiseAbs().mean());
  for (double jitter = 0.0; jitter <= 1.0001e-4;
       jitter = (jitter == 0.0 ? 1e-10 : jitter * 10.0)) {
    Eigen::LLT<Eigen::MatrixXd> llt(sym + (jitter * scale) * eye);
    if (llt.info() == Eigen::Success) {
      return {llt.solve(eye), jitter * scale};
    }
  }
  throw NumericalError("jittered_inverse: " + label +
                       " not positive definite at max jitter 1e-4");
}

bool TrainingWindow::push(const Sample& s, Sample* evicted) {
  if (s.input.control_bar.size() < 1 || s.input.control_bar(0) != 1.0) {
    throw std::invalid_argument("TrainingWindow: sample control_bar must lead with 1");
  }
  bool did_evict = false;
  if (capacity > 0 && size() == capacity) {
    if (evicted != nullptr) *evicted = samples.front();
    samples.erase(samples.begin());
    did_evict = true;
  }
  samples.push_back(s);
  return did_evict;
}

Eigen::VectorXd forgetting_weights(double phi, int window_size) {
  if (phi <= 0.0 || phi > 1.0) {
    throw std::invalid_argument("forgetting_weights: phi must be in (0, 1]");
  }
  Eigen::VectorXd w(window_size);
  for (int i = 0; i < window_size; ++i) {
    w(i) = std::pow(phi, window_size - 1 - i);
  }
  return w;
}

double Prediction::variance(const Eigen::VectorXd& u_bar) const {
  const double v = u_bar.dot(Sigma * u_bar);
  if (v < 0.0) {
    if (g_variance_clamps.fetch_add(1) == 0) {
      std::cerr << "[gpcbf] warning: negative predicted variance " << v
                << " clamped to 0 (further clamps counted silently)\n";
    }
    return 0.0;
  }
  return v;
}

std::int64_t Prediction::negative_variance_clamps() { return g_variance_clamps.load(); }
void Prediction::reset_clamp_counter() { g_variance_clamps.store(0); }

void ModelState::rebuild_caches() {
  const int P = window.size();
  const int M = inducing_size();
  if (P == 0 || M == 0) {
    throw std::logic_error("ModelState::rebuild_caches: empty window or inducing set");
  }
  K_oo = kernel.gram(inducing);
  K_oo_inv = jittered_inverse(K_oo, "K_oo").inverse;
  K_xo.resize(P, M);
  Eigen::VectorXd z(P);
  for (int i = 0; i < P; ++i) {
    for (int j = 0; j < M; ++j) K_xo(i, j) = kernel.eval(window.samples[i].input, inducing[j]);
    z(i) = window.samples[i].target;
  }
  const Eigen::VectorXd w = weights();
  B_phi_inv = K_oo + (K_xo.transpose() * w.asDiagonal() * K_xo) / noise_variance;
  B_phi_inv = 0.5 * (B_phi_inv + B_phi_inv.transpose().eval());
  B_phi = jittered_inverse(B_phi_inv, "B_phi_inv").inverse;
  zlk = (z.cwiseProduct(w)).transpose() * K_xo;
}

double ModelState::cache_consistency_error() const {
  ModelState fresh = *this;
  fresh.rebuild_caches();
  auto rel = [](const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    const double denom = std::max(1e-300, b.norm());
    return (a - b).norm() / denom;
  };
  double err = rel(B_phi, fresh.B_phi);
  err = std::max(err, rel(K_oo_inv, fresh.K_oo_inv));
  err = std::max(err, rel(Eigen::MatrixXd(zlk), Eigen::MatrixXd(fresh.zlk)));
  err = std::max(err, rel(K_xo, fresh.K_xo));
  return err;
}

double collapsed_bound(const ModelState& state) {
  const auto ws = build_workspace(state.kernel, state.noise_variance, state.window,
                                  state.inducing, state.phi);
  return bound_from_workspace(ws);
}

double collapsed_bound_at(const ModelState& state, const Eigen::VectorXd& theta) {
  const int nk = state.kernel.num_params();
  if (theta.size() != nk + 1) {
    throw std::invalid_argument("collapsed_bound_at: theta must hold kernel params + log noise");
  }
  const AdpKernel k = state.kernel.with_log_params(theta.head(nk));
  const double noise = std::exp(theta(nk));
  const auto ws = build_workspace(k, noise, state.window, state.inducing, state.phi);
  return bound_from_workspace(ws);
}

Eigen::VectorXd collapsed_bound_gradient(const ModelState& state,
                                         const Eigen::VectorXd& theta) {
  const int nk = state.kernel.num_params();
  if (theta.size() != nk + 1) {
    throw std::invalid_argument("collapsed_bound_gradient: bad theta size");
  }
  const AdpKernel kernel = state.kernel.with_log_params(theta.head(nk));
  const double s = std::exp(theta(nk));
  const auto ws = build_workspace(kernel, s, state.window, state.inducing, state.phi);

  const int Pn = state.window.size();
  const int M = state.inducing_size();

  // E = -1/2 (C^-1 - alpha alpha^T) + (1/(2 s)) Lambda collects the
  // derivative of the log-marginal and of the weighted trace correction
  // against dQ, so every kernel hyperparameter shares the same contraction.
  const Eigen::MatrixXd C_inv =
      ws.C_llt.solve(Eigen::MatrixXd::Identity(Pn, Pn));
  Eigen::MatrixXd E = -0.5 * (C_inv - ws.alpha * ws.alpha.transpose());
  E += (ws.w / (2.0 * s)).asDiagonal();

  const Eigen::MatrixXd A = ws.K_oo_inv;
  const Eigen::MatrixXd Gx = 2.0 * (E * ws.K_xo * A);              // vs dK_xo
  const Eigen::MatrixXd Go = -(A * ws.K_xo.transpose() * E * ws.K_xo * A);  // vs dK_oo

  Eigen::VectorXd grad = Eigen::VectorXd::Zero(nk + 1);
  for (int p = 0; p < nk; ++p) {
    double acc = 0.0;
    for (int i = 0; i < Pn; ++i) {
      const auto& ai = state.window.samples[i].input;
      for (int j = 0; j < M; ++j) {
        acc += Gx(i, j) * kernel.eval_grad(ai, state.inducing[j], p);
      }
      acc -= ws.w(i) / (2.0 * s) * kernel.eval_grad(ai, ai, p);
    }
    for (int i = 0; i < M; ++i) {
      for (int j = 0; j < M; ++j) {
        acc += Go(i, j) * kernel.eval_grad(state.inducing[i], state.inducing[j], p);
      }
    }
    grad(p) = acc;
  }

  // log-noise coordinate: dC = s Lambda^-1, plus the two explicit 1/s terms.
  const Eigen::VectorXd winv = ws.w.cwiseInverse();
  const double dlog_marg =
      -0.5 * s * ((C_inv.diagonal().dot(winv)) - ws.alpha.dot(winv.cwiseProduct(ws.alpha)));
  const double Sw = ws.w.sum() - Pn;
  const double dconst = (Sw / (2.0 * s)) * (std::log(kTwoPi * s) - 1.0);
  double trace_sum = 0.0;
  for (int i = 0; i < Pn; ++i) {
    const Eigen::VectorXd row = ws.K_xo.row(i).transpose();
    trace_sum += ws.w(i) * (ws.k_diag(i) - row.dot(A * row));
  }
  const double dtrace = trace_sum / (2.0 * s);
  grad(nk) = dlog_marg + dconst + dtrace;
  return grad;
}

Prediction predict(const ModelState& state, const Eigen::VectorXd& xi_star) {
  const Eigen::MatrixXd cross = state.kernel.cross_vector(xi_star, state.inducing);
  Prediction p;
  p.b_vec = (cross * (state.B_phi * state.zlk.transpose())) / state.noise_variance;
  const Eigen::VectorXd k_star_diag = state.kernel.base_values(xi_star, xi_star);
  Eigen::MatrixXd Sigma = cross * (state.B_phi - state.K_oo_inv) * cross.transpose();
  Sigma += Eigen::MatrixXd(k_star_diag.asDiagonal());
  p.Sigma = 0.5 * (Sigma + Sigma.transpose().eval());
  return p;
}

AdpKernel kernel_init_from_data(const std::vector<Sample>& data, int control_dim,
                                double* noise_init) {
  if (data.empty()) {
    throw std::invalid_argument("kernel_init_from_data: empty data");
  }
  const int d = static_cast<int>(data.front().input.state.size());
  const int slots = control_dim + 1;
  const int n = static_cast<int>(data.size());

  Eigen::VectorXd z(n);
  Eigen::MatrixXd states(n, d);
  Eigen::VectorXd slot_sq = Eigen::VectorXd::Zero(slots);
  for (int i = 0; i < n; ++i) {
    z(i) = data[i].target;
    states.row(i) = data[i].input.state.transpose();
    slot_sq += data[i].input.control_bar.cwiseAbs2();
  }
  slot_sq /= n;
  const double z_var = std::max(
      1e-6, (z.array() - z.mean()).square().sum() / std::max(1, n - 1));

  std::vector<SquaredExponentialKernel> base;
  for (int s = 0; s < slots; ++s) {
    const double sv = std::max(1e-4, z_var / (slots * std::max(slot_sq(s), 1e-2)));
    Eigen::VectorXd ls(d);
    for (int j = 0; j < d; ++j) {
      const Eigen::VectorXd col = states.col(j);
      const double spread =
          std::sqrt((col.array() - col.mean()).square().sum() / std::max(1, n - 1));
      ls(j) = std::max(0.5, spread);
    }
    base.emplace_back(sv, std::move(ls));
  }
  if (noise_init != nullptr) *noise_init = std::max(1e-6, 0.05 * z_var);
  return AdpKernel(std::move(base), control_dim);
}

ModelState fit_offline(const std::vector<Sample>& data, int num_inducing,
                       double phi, const AdpKernel& init_kernel,
                       double init_noise_variance, const FitOptions& opts,
                       FitReport* report) {
  const int P = static_cast<int>(data.size());
  if (P < 1 || num_inducing < 1 || num_inducing > P) {
    throw std::invalid_argument("fit_offline: need data size >= num_inducing >= 1");
  }
  if (phi <= 0.0 || phi > 1.0) {
    throw std::invalid_argument("fit_offline: phi must be in (0, 1]");
  }
  if (init_noise_variance <= 0.0) {
    throw std::invalid_argument("fit_offline: noise variance must be > 0");
  }

  ModelState state;
  state.kernel = init_kernel;
  state.noise_variance = init_noise_variance;
  state.phi = phi;
  state.window.capacity = P;
  state.window.samples = data;
  state.inducing.reserve(num_inducing);
  // Most recent samples first, skipping numerical duplicates (consecutive
  // trajectory samples are nearly identical and would make K_oo singular).
  // The Schur floor mirrors the online insertion guard.
  {
    Eigen::MatrixXd koo_inv;
    for (int i = P - 1; i >= 0 && state.inducing_size() < num_inducing; --i) {
      const AugmentedInput& cand = data[i].input;
      if (state.inducing.empty()) {
        state.inducing.push_back(cand);
        koo_inv = Eigen::MatrixXd::Constant(1, 1, 1.0 / init_kernel.eval(cand, cand));
        continue;
      }
      const int M = state.inducing_size();
      Eigen::VectorXd kvec(M);
      for (int j = 0; j < M; ++j) kvec(j) = init_kernel.eval(cand, state.inducing[j]);
      const double kss = init_kernel.eval(cand, cand);
      const Eigen::VectorXd h = koo_inv * kvec;
      const double schur = kss - kvec.dot(h);
      if (schur <= 1e-4 * std::max(1.0, kss)) continue;
      Eigen::MatrixXd grown(M + 1, M + 1);
      grown.topLeftCorner(M, M) = koo_inv + (h * h.transpose()) / schur;
      grown.topRightCorner(M, 1) = -h / schur;
      grown.bottomLeftCorner(1, M) = -h.transpose() / schur;
      grown(M, M) = 1.0 / schur;
      koo_inv = std::move(grown);
      state.inducing.push_back(cand);
    }
    if (state.inducing_size() < num_inducing) {
      std::cerr << "[gpcbf] fit_offline: only " << state.inducing_size()
                << " numerically distinct inducing points available (asked for "
                << num_inducing << ")\n";
    }
  }

  const int nk = init_kernel.num_params();
  Eigen::VectorXd theta0(nk + 1);
  theta0.head(nk) = init_kernel.log_params();
  theta0(nk) = std::log(init_noise_variance);

  // The noise floor scales with the target variance so heavy-tailed
  // problems do not drive sigma^2 into conditioning hell.
  double z_mean = 0.0, z_var = 0.0;
  for (const auto& s : data) z_mean += s.target;
  z_mean /= P;
  for (const auto& s : data) z_var += (s.target - z_mean) * (s.target - z_mean);
  z_var = P > 1 ? z_var / (P - 1) : 1.0;
  const double log_noise_floor =
      std::max(std::log(1e-8), kLogNoiseFloor + std::log(std::max(1e-2, z_var)));

  auto safe_bound = [&](const Eigen::VectorXd& th) -> double {
    try {
      const double v = collapsed_bound_at(state, th);
      return std::isfinite(v) ? v : -std::numeric_limits<double>::infinity();
    } catch (const NumericalError&) {
      return -std::numeric_limits<double>::infinity();
    } catch (const std::invalid_argument&) {
      // exp() underflow on an aggressive line-search probe.
      return -std::numeric_limits<double>::infinity();
    }
  };

  std::mt19937_64 rng(opts.seed);
  std::uniform_real_distribution<double> jiggle(-0.5, 0.5);

  Eigen::VectorXd best_theta = theta0;
  double best_value = safe_bound(theta0);
  if (!std::isfinite(best_value)) {
    throw NumericalError("fit_offline: bound not finite at the initial hyperparameters");
  }
  FitReport rep;
  rep.restarts_used = std::max(1, opts.restarts);

  // L-BFGS ascent with Armijo backtracking; the limited-memory curvature
  // pairs tame the stiff log-noise direction that defeats plain gradient
  // steps near interpolation regimes.
  constexpr int kMemory = 6;
  for (int restart = 0; restart < std::max(1, opts.restarts); ++restart) {
    Eigen::VectorXd theta = theta0;
    if (restart > 0) {
      for (int i = 0; i < theta.size(); ++i) theta(i) += jiggle(rng);
    }
    double value = safe_bound(theta);
    if (!std::isfinite(value)) continue;

    std::vector<Eigen::VectorXd> s_hist, y_hist;
    Eigen::VectorXd grad;
    try {
      grad = collapsed_bound_gradient(state, theta);
    } catch (const NumericalError&) {
      continue;
    }

    for (int it = 0; it < opts.max_iterations; ++it) {
      if (!grad.allFinite()) break;
      if (grad.lpNorm<Eigen::Infinity>() < opts.gradient_tolerance) {
        rep.converged = true;
        break;
      }

      // Two-loop recursion on the negated objective -> ascent direction.
      Eigen::VectorXd dir = grad;
      const int mem = static_cast<int>(s_hist.size());
      std::vector<double> alpha_coef(mem);
      for (int i = mem - 1; i >= 0; --i) {
        const double rho = 1.0 / y_hist[i].dot(s_hist[i]);
        alpha_coef[i] = rho * s_hist[i].dot(dir);
        dir -= alpha_coef[i] * y_hist[i];
      }
      if (mem > 0) {
        const double gamma =
            s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
        dir *= gamma;
      } else {
        dir *= opts.initial_step;
      }
      for (int i = 0; i < mem; ++i) {
        const double rho = 1.0 / y_hist[i].dot(s_hist[i]);
        const double beta = rho * y_hist[i].dot(dir);
        dir += (alpha_coef[i] - beta) * s_hist[i];
      }
      if (dir.dot(grad) <= 0.0) dir = opts.initial_step * grad;  // safeguard

      const double slope = dir.dot(grad);
      double trial = 1.0;
      bool accepted = false;
      Eigen::VectorXd cand;
      double cand_value = 0.0;
      for (int bt = 0; bt < 50; ++bt) {
        cand = theta + trial * dir;
        cand_value = safe_bound(cand);
        if (cand_value >= value + 1e-4 * trial * slope) {
          accepted = true;
          break;
        }
        trial *= 0.5;
      }
      if (!accepted) break;

      Eigen::VectorXd grad_next;
      try {
        grad_next = collapsed_bound_gradient(state, cand);
      } catch (const NumericalError&) {
        theta = cand;
        value = cand_value;
        break;
      }
      const Eigen::VectorXd s_vec = cand - theta;
      const Eigen::VectorXd y_vec = grad - grad_next;  // curvature of -F
      if (s_vec.dot(y_vec) > 1e-12 * s_vec.norm() * y_vec.norm()) {
        s_hist.push_back(s_vec);
        y_hist.push_back(y_vec);
        if (static_cast<int>(s_hist.size()) > kMemory) {
          s_hist.erase(s_hist.begin());
          y_hist.erase(y_hist.begin());
        }
      }
      theta = cand;
      value = cand_value;
      grad = grad_next;
      // Noise floor: interpolation regimes drive sigma^2 toward zero, which
      // destroys the conditioning of every downstream cache.
      if (theta(nk) < log_noise_floor) {
        theta(nk) = log_noise_floor;
        value = safe_bound(theta);
        s_hist.clear();
        y_hist.clear();
        try {
          grad = collapsed_bound_gradient(state, theta);
        } catch (const NumericalError&) {
          break;
        }
        if (grad(nk) < 0.0) grad(nk) = 0.0;  // pinned at the floor
      }
      ++rep.iterations;
      if (opts.verbose && rep.iterations % 25 == 0) {
        std::cerr << "[gpcbf] fit iter " << rep.iterations << " bound " << value << "\n";
      }
    }
    if (value > best_value) {
      best_value = value;
      best_theta = theta;
    }
  }

  if (!rep.converged) {
    std::cerr << "[gpcbf] fit_offline: optimizer stopped before gradient tolerance; "
                 "keeping best iterate (bound " << best_value << ")\n";
  }
  state.kernel = init_kernel.with_log_params(best_theta.head(nk));
  state.noise_variance = std::exp(best_theta(nk));
  state.rebuild_caches();
  rep.bound = best_value;
  if (report != nullptr) *report = rep;
  return state;
}

}  // namespace gpcbf
