#include "gpcbf/online_adaptation.hpp"

#include <cmath>
#include <limits>

namespace gpcbf {

namespace {

// Geometric duplicate guard for K_oo growth (relative to the kernel scale)
// and a validity floor for the B_phi border. The tighter K_oo floor keeps
// the inducing gram well enough conditioned for the incremental Cholesky
// path to stay the common case on clustered trajectory data.
constexpr double kKooSchurFloor = 1e-4;
constexpr double kBphiSchurFloor = 1e-12;

Eigen::RowVectorXd kernel_row(const ModelState& state, const AugmentedInput& a) {
  Eigen::RowVectorXd row(state.inducing_size());
  for (int j = 0; j < state.inducing_size(); ++j) {
    row(j) = state.kernel.eval(a, state.inducing[j]);
  }
  return row;
}

Eigen::MatrixXd bordered_inverse(const Eigen::MatrixXd& inv, const Eigen::VectorXd& col,
                                 double corner, double* schur_out) {
  const Eigen::VectorXd g = inv * col;
  const double schur = corner - col.dot(g);
  if (schur_out != nullptr) *schur_out = schur;
  if (schur <= 0.0) return {};
  const int n = static_cast<int>(inv.rows());
  Eigen::MatrixXd out(n + 1, n + 1);
  out.topLeftCorner(n, n) = inv + (g * g.transpose()) / schur;
  out.topRightCorner(n, 1) = -g / schur;
  out.bottomLeftCorner(1, n) = -g.transpose() / schur;
  out(n, n) = 1.0 / schur;
  return out;
}

// One Newton-Schulz step X <- X (2I - A X) tightens an approximate inverse
// to near machine precision for O(n^3).
Eigen::MatrixXd refine_inverse(const Eigen::MatrixXd& a, Eigen::MatrixXd x) {
  const int n = static_cast<int>(a.rows());
  x = x * (2.0 * Eigen::MatrixXd::Identity(n, n) - a * x);
  return 0.5 * (x + x.transpose().eval());
}

void drop_row_col(Eigen::MatrixXd& m, int idx) {
  const int n = static_cast<int>(m.rows());
  Eigen::MatrixXd out(n - 1, n - 1);
  int rr = 0;
  for (int r = 0; r < n; ++r) {
    if (r == idx) continue;
    int cc = 0;
    for (int c = 0; c < n; ++c) {
      if (c == idx) continue;
      out(rr, cc++) = m(r, c);
    }
    ++rr;
  }
  m = std::move(out);
}

void drop_col(Eigen::MatrixXd& m, int idx) {
  const int cols = static_cast<int>(m.cols());
  Eigen::MatrixXd out(m.rows(), cols - 1);
  out.leftCols(idx) = m.leftCols(idx);
  out.rightCols(cols - 1 - idx) = m.rightCols(cols - 1 - idx);
  m = std::move(out);
}

}  // namespace

bool ingest_sample(ModelState& state, const Sample& sample) {
  if (!state.window.full()) {
    throw std::logic_error("ingest_sample: window must be at capacity (offline phase fills it)");
  }
  const int P = state.window.size();
  const double s2 = state.noise_variance;
  const double phi_p = std::pow(state.phi, P);

  const Sample oldest = state.window.samples.front();
  const Eigen::RowVectorXd k_old = state.K_xo.row(0);
  const Eigen::RowVectorXd k_new = kernel_row(state, sample.input);

  Sample evicted;
  state.window.push(sample, &evicted);

  // K_xo: shift rows up, newest at the bottom.
  const int M = state.inducing_size();
  state.K_xo.block(0, 0, P - 1, M) = state.K_xo.block(1, 0, P - 1, M).eval();
  state.K_xo.row(P - 1) = k_new;

  state.zlk = state.phi * state.zlk + sample.target * k_new - phi_p * oldest.target * k_old;

  Eigen::MatrixXd b_inv = state.phi * state.B_phi_inv + (1.0 - state.phi) * state.K_oo;
  b_inv.noalias() += (k_new.transpose() * k_new) / s2;
  b_inv.noalias() -= (phi_p / s2) * (k_old.transpose() * k_old);
  b_inv = 0.5 * (b_inv + b_inv.transpose().eval());

  Eigen::LLT<Eigen::MatrixXd> llt(b_inv);
  if (llt.info() == Eigen::Success) {
    // Cheap conditioning proxy from the Cholesky diagonal; a marginally
    // positive-definite update passes the factorization yet inverts to
    // garbage.
    const Eigen::VectorXd diag = llt.matrixLLT().diagonal();
    const double rcond_proxy =
        (diag.minCoeff() * diag.minCoeff()) / (diag.maxCoeff() * diag.maxCoeff());
    if (rcond_proxy > 1e-12) {
      state.B_phi_inv = b_inv;
      state.B_phi = llt.solve(Eigen::MatrixXd::Identity(M, M));
      return false;
    }
  }
  // Incremental update lost positive definiteness; rebuild from the window.
  ++state.fallback_rebuilds;
  state.rebuild_caches();
  return true;
}

NoveltyScores novelty_scores(const ModelState& state) {
  const int P = state.window.size();
  const int M = state.inducing_size();
  const Eigen::VectorXd w = state.weights();
  const Eigen::MatrixXd proj = state.K_xo * state.K_oo_inv;  // P x M

  NoveltyScores scores;
  scores.per_point = Eigen::VectorXd::Zero(M);
  for (int i = 0; i < P; ++i) {
    const auto& a = state.window.samples[i].input;
    const double k_ii = state.kernel.eval(a, a);
    double explained = 0.0;
    for (int m = 0; m < M; ++m) {
      const double part = proj(i, m) * state.K_xo(i, m);
      scores.per_point(m) += w(i) * part;
      explained += part;
    }
    scores.p_th += w(i) * (k_ii - explained);
  }
  return scores;
}

bool add_inducing(ModelState& state, const Sample& sample) {
  const int P = state.window.size();
  const int M = state.inducing_size();
  const double s2 = state.noise_variance;
  const Eigen::VectorXd w = state.weights();

  const Eigen::RowVectorXd kvec = kernel_row(state, sample.input);
  const double kss = state.kernel.eval(sample.input, sample.input);

  // Kernel values between every window sample and the candidate; this is
  // the K_xo column the new point brings with it.
  Eigen::VectorXd c(P);
  for (int i = 0; i < P; ++i) {
    c(i) = state.kernel.eval(state.window.samples[i].input, sample.input);
  }
  const Eigen::VectorXd wc = w.cwiseProduct(c);

  const Eigen::VectorXd b_col = kvec.transpose() + (state.K_xo.transpose() * wc) / s2;
  const double b_corner = kss + c.dot(wc) / s2;

  // Try both bordered inverses before touching the state so a rejected
  // insertion is a clean no-op.
  double schur_k = 0.0, schur_b = 0.0;
  Eigen::MatrixXd new_koo_inv =
      bordered_inverse(state.K_oo_inv, kvec.transpose(), kss, &schur_k);
  Eigen::MatrixXd new_bphi = bordered_inverse(state.B_phi, b_col, b_corner, &schur_b);
  if (schur_k <= kKooSchurFloor * std::max(1.0, kss) ||
      schur_b <= kBphiSchurFloor * std::max(1.0, std::abs(b_corner))) {
    ++state.rejected_insertions;
    return false;
  }

  Eigen::MatrixXd koo(M + 1, M + 1);
  koo.topLeftCorner(M, M) = state.K_oo;
  koo.topRightCorner(M, 1) = kvec.transpose();
  koo.bottomLeftCorner(1, M) = kvec;
  koo(M, M) = kss;
  state.K_oo = std::move(koo);
  state.K_oo_inv = refine_inverse(state.K_oo, std::move(new_koo_inv));

  Eigen::MatrixXd b_inv(M + 1, M + 1);
  b_inv.topLeftCorner(M, M) = state.B_phi_inv;
  b_inv.topRightCorner(M, 1) = b_col;
  b_inv.bottomLeftCorner(1, M) = b_col.transpose();
  b_inv(M, M) = b_corner;
  state.B_phi_inv = std::move(b_inv);
  state.B_phi = refine_inverse(state.B_phi_inv, std::move(new_bphi));

  state.K_xo.conservativeResize(P, M + 1);
  state.K_xo.col(M) = c;

  Eigen::RowVectorXd zlk(M + 1);
  zlk.head(M) = state.zlk;
  zlk(M) = wc.dot(Eigen::VectorXd::NullaryExpr(
      P, [&](Eigen::Index i) { return state.window.samples[i].target; }));
  state.zlk = std::move(zlk);

  state.inducing.push_back(sample.input);
  return true;
}

void remove_inducing(ModelState& state, int index) {
  const int M = state.inducing_size();
  if (M < 2) {
    throw std::invalid_argument("remove_inducing: the model must keep one inducing point");
  }
  if (index < 0 || index >= M) {
    throw std::invalid_argument("remove_inducing: index out of range");
  }
  state.inducing.erase(state.inducing.begin() + index);
  drop_row_col(state.K_oo, index);
  drop_col(state.K_xo, index);
  Eigen::RowVectorXd zlk(M - 1);
  zlk.head(index) = state.zlk.head(index);
  zlk.tail(M - 1 - index) = state.zlk.tail(M - 1 - index);
  state.zlk = std::move(zlk);

  state.K_oo_inv = jittered_inverse(state.K_oo, "K_oo").inverse;
  const Eigen::VectorXd w = state.weights();
  state.B_phi_inv = state.K_oo +
      (state.K_xo.transpose() * w.asDiagonal() * state.K_xo) / state.noise_variance;
  state.B_phi_inv = 0.5 * (state.B_phi_inv + state.B_phi_inv.transpose().eval());
  state.B_phi = jittered_inverse(state.B_phi_inv, "B_phi_inv").inverse;
}

StepEvents step(ModelState& state, const Sample& sample, const AdaptationConfig& config) {
  if (config.epsilon <= 0.0 || config.max_inducing < 2) {
    throw std::invalid_argument("step: need epsilon > 0 and max_inducing >= 2");
  }
  StepEvents events;
  events.fallback_rebuild = ingest_sample(state, sample);

  const NoveltyScores scores = novelty_scores(state);
  events.p_th = scores.p_th;
  if (scores.p_th > config.epsilon) {
    events.inserted = add_inducing(state, sample);
    events.insertion_rejected = !events.inserted;
  }
  if (state.inducing_size() > config.max_inducing) {
    const NoveltyScores post = novelty_scores(state);
    int worst = 0;
    post.per_point.minCoeff(&worst);
    remove_inducing(state, worst);
    events.evicted_index = worst;
  }
  return events;
}

}  // namespace gpcbf
