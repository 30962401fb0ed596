#include <doctest.h>

#include <random>

#include "gpcbf/kernels.hpp"
#include "oracles.hpp"

using namespace gpcbf;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(v.size());
  int i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

AdpKernel unit_kernel(int control_dim, int state_dim) {
  std::vector<SquaredExponentialKernel> base;
  for (int i = 0; i <= control_dim; ++i) {
    base.emplace_back(1.0, Eigen::VectorXd::Ones(state_dim));
  }
  return AdpKernel(std::move(base), control_dim);
}

}  // namespace

TEST_CASE("squared exponential closed form") {
  SquaredExponentialKernel k(2.0, vec({1.0, 1.0}));
  const Eigen::VectorXd x = vec({0.3, -1.2});
  CHECK(k(x, x) == doctest::Approx(2.0).epsilon(1e-15));

  SquaredExponentialKernel k1(1.0, vec({1.0}));
  CHECK(k1(vec({0.0}), vec({1.0})) ==
        doctest::Approx(0.60653065971263342).epsilon(1e-12));
  CHECK(k1(vec({0.0}), vec({60.0})) < 1e-12);  // decay limit

  CHECK_THROWS_AS(k(vec({1.0}), vec({1.0})), std::invalid_argument);
  CHECK_THROWS_AS(SquaredExponentialKernel(-1.0, vec({1.0})), std::invalid_argument);
  CHECK_THROWS_AS(SquaredExponentialKernel(1.0, vec({0.0})), std::invalid_argument);
}

TEST_CASE("se kernel symmetry") {
  std::mt19937_64 rng(7);
  SquaredExponentialKernel k(1.7, vec({0.8, 1.5, 2.0}));
  for (int i = 0; i < 20; ++i) {
    const Eigen::VectorXd a = oracles::random_vector(rng, 3);
    const Eigen::VectorXd b = oracles::random_vector(rng, 3);
    CHECK(k(a, b) == doctest::Approx(k(b, a)).epsilon(1e-15));
  }
}

TEST_CASE("adp kernel reduces to affine dot product for unit base kernels") {
  const AdpKernel k = unit_kernel(2, 2);
  const Eigen::VectorXd xi = vec({0.5, -0.7});  // same state: every k_i = 1
  const AugmentedInput a(xi, vec({1.0, 2.0, -1.0}));
  const AugmentedInput b(xi, vec({1.0, 0.5, 3.0}));
  CHECK(k.eval(a, b) == doctest::Approx(1.0 + 2.0 * 0.5 + (-1.0) * 3.0).epsilon(1e-14));

  // Only the drift slot survives when u = 0.
  const AugmentedInput drift_a(vec({0.1, 0.2}), vec({1.0, 0.0, 0.0}));
  const AugmentedInput drift_b(vec({0.9, -0.3}), vec({1.0, 0.0, 0.0}));
  CHECK(k.eval(drift_a, drift_b) ==
        doctest::Approx(k.base_kernels()[0](drift_a.state, drift_b.state)).epsilon(1e-14));
}

TEST_CASE("adp kernel hand expansion, m = 1") {
  // Base values at (0) vs (1): k1 = 0.5, k2 = 2 by scaling signal variances.
  const double boost = std::exp(0.5);
  std::vector<SquaredExponentialKernel> base;
  base.emplace_back(0.5 * boost, vec({1.0}));
  base.emplace_back(2.0 * boost, vec({1.0}));
  const AdpKernel k(std::move(base), 1);
  const AugmentedInput a(vec({0.0}), vec({1.0, 3.0}));
  const AugmentedInput b(vec({1.0}), vec({1.0, -1.0}));
  CHECK(k.eval(a, b) == doctest::Approx(-5.5).epsilon(1e-12));

  const AugmentedInput bad(vec({1.0}), vec({1.0, 0.0, 0.0}));
  CHECK_THROWS_AS(k.eval(a, bad), std::invalid_argument);
}

TEST_CASE("adp kernel is bilinear in the control slots") {
  std::mt19937_64 rng(11);
  const AdpKernel k = oracles::random_kernel(rng, 3, 2);
  const Eigen::VectorXd xa = oracles::random_vector(rng, 3);
  const Eigen::VectorXd xb = oracles::random_vector(rng, 3);
  for (int trial = 0; trial < 10; ++trial) {
    Eigen::VectorXd u1 = oracles::random_vector(rng, 3);
    Eigen::VectorXd u2 = oracles::random_vector(rng, 3);
    Eigen::VectorXd v = oracles::random_vector(rng, 3);
    const double s = 1.7, t = -0.6;
    // Work with raw slot vectors; bilinearity does not care about the
    // leading-1 convention.
    auto eval_raw = [&](const Eigen::VectorXd& ua, const Eigen::VectorXd& ub) {
      double acc = 0.0;
      for (int i = 0; i < 3; ++i) {
        acc += ua(i) * k.base_kernels()[i](xa, xb) * ub(i);
      }
      return acc;
    };
    CHECK(eval_raw(s * u1 + t * u2, v) ==
          doctest::Approx(s * eval_raw(u1, v) + t * eval_raw(u2, v)).epsilon(1e-12));
  }
}

TEST_CASE("identical base kernels factor the gram value") {
  std::mt19937_64 rng(13);
  SquaredExponentialKernel se(1.3, vec({0.9, 1.1}));
  const AdpKernel k({se, se, se}, 2);
  for (int trial = 0; trial < 10; ++trial) {
    const AugmentedInput a = oracles::random_input(rng, 2, 2);
    const AugmentedInput b = oracles::random_input(rng, 2, 2);
    CHECK(k.eval(a, b) ==
          doctest::Approx(se(a.state, b.state) * a.control_bar.dot(b.control_bar))
              .epsilon(1e-12));
  }
}

TEST_CASE("gram: symmetry, PSD, determinism") {
  std::mt19937_64 rng(17);
  const AdpKernel k = oracles::random_kernel(rng, 3, 2);

  std::vector<AugmentedInput> single{oracles::random_input(rng, 3, 2)};
  const Eigen::MatrixXd g1 = k.gram(single);
  CHECK(g1.rows() == 1);
  CHECK(g1(0, 0) >= 0.0);

  std::vector<AugmentedInput> pts;
  for (int i = 0; i < 3; ++i) pts.push_back(oracles::random_input(rng, 3, 2));
  const Eigen::MatrixXd g3 = k.gram(pts);
  CHECK((g3 - g3.transpose()).lpNorm<Eigen::Infinity>() < 1e-12);

  pts.clear();
  for (int i = 0; i < 8; ++i) pts.push_back(oracles::random_input(rng, 3, 2));
  const Eigen::MatrixXd g8 = k.gram(pts);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(g8);
  CHECK(eig.eigenvalues().minCoeff() >= -1e-9);

  const Eigen::MatrixXd again = k.gram(pts);
  CHECK((g8 - again).lpNorm<Eigen::Infinity>() == 0.0);  // bit-identical

  CHECK_THROWS_AS(k.gram({}), std::invalid_argument);
}

TEST_CASE("adp gram PSD across many random draws") {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    const AdpKernel k = oracles::random_kernel(rng, 2, 1);
    std::vector<AugmentedInput> pts;
    const int n = 2 + static_cast<int>(rng() % 7);
    for (int i = 0; i < n; ++i) pts.push_back(oracles::random_input(rng, 2, 1));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(k.gram(pts));
    CHECK(eig.eigenvalues().minCoeff() >= -1e-9);
  }
}

TEST_CASE("cross_vector structure") {
  // Unit base kernels at a shared state and all-ones inducing slots give the
  // all-ones matrix.
  const AdpKernel k = unit_kernel(1, 2);
  const Eigen::VectorXd xi = vec({0.2, 0.4});
  std::vector<AugmentedInput> inducing{AugmentedInput(xi, vec({1.0, 1.0})),
                                       AugmentedInput(xi, vec({1.0, 1.0}))};
  const Eigen::MatrixXd ones = k.cross_vector(xi, inducing);
  CHECK((ones - Eigen::MatrixXd::Ones(2, 2)).lpNorm<Eigen::Infinity>() < 1e-14);

  // Contraction with u_bar_star reproduces the full kernel against each
  // inducing point.
  std::mt19937_64 rng(29);
  const AdpKernel kr = oracles::random_kernel(rng, 3, 2);
  std::vector<AugmentedInput> ind;
  for (int i = 0; i < 4; ++i) ind.push_back(oracles::random_input(rng, 3, 2));
  const AugmentedInput q = oracles::random_input(rng, 3, 2);
  const Eigen::MatrixXd cross = kr.cross_vector(q.state, ind);
  for (int j = 0; j < 4; ++j) {
    CHECK(q.control_bar.dot(cross.col(j)) ==
          doctest::Approx(kr.eval(q, ind[j])).epsilon(1e-12));
  }

  // Tiny lengthscales: distinct states decouple completely.
  std::vector<SquaredExponentialKernel> tiny;
  for (int i = 0; i < 2; ++i) tiny.emplace_back(1.0, vec({1e-3, 1e-3}));
  const AdpKernel kt(std::move(tiny), 1);
  std::vector<AugmentedInput> far{AugmentedInput(vec({5.0, 5.0}), vec({1.0, 1.0}))};
  CHECK(kt.cross_vector(vec({0.0, 0.0}), far).lpNorm<Eigen::Infinity>() < 1e-300);

  CHECK_THROWS_AS(k.cross_vector(xi, {}), std::invalid_argument);
}

TEST_CASE("log-parameter round trip and eval_grad") {
  std::mt19937_64 rng(31);
  const AdpKernel k = oracles::random_kernel(rng, 2, 1);
  const Eigen::VectorXd theta = k.log_params();
  const AdpKernel k2 = k.with_log_params(theta);
  const AugmentedInput a = oracles::random_input(rng, 2, 1);
  const AugmentedInput b = oracles::random_input(rng, 2, 1);
  CHECK(k.eval(a, b) == doctest::Approx(k2.eval(a, b)).epsilon(1e-15));

  // eval_grad against central differences on each log coordinate.
  for (int p = 0; p < k.num_params(); ++p) {
    const double h = 1e-6;
    Eigen::VectorXd tp = theta, tm = theta;
    tp(p) += h;
    tm(p) -= h;
    const double fd = (k.with_log_params(tp).eval(a, b) -
                       k.with_log_params(tm).eval(a, b)) / (2.0 * h);
    CHECK(k.eval_grad(a, b, p) == doctest::Approx(fd).epsilon(1e-6));
  }
}

TEST_CASE("numerical_gradient on a known objective") {
  // Quadratic bowl: gradient is exact for central differences.
  auto f = [](const Eigen::VectorXd& x) {
    return -(x(0) - 1.5) * (x(0) - 1.5) - 2.0 * (x(1) + 0.5) * (x(1) + 0.5);
  };
  const Eigen::VectorXd at = vec({0.3, 0.4});
  const Eigen::VectorXd g = numerical_gradient(f, at, 1e-5);
  CHECK(g(0) == doctest::Approx(-2.0 * (0.3 - 1.5)).epsilon(1e-8));
  CHECK(g(1) == doctest::Approx(-4.0 * (0.4 + 0.5)).epsilon(1e-8));

  // At the optimum the gradient vanishes.
  const Eigen::VectorXd g0 = numerical_gradient(f, vec({1.5, -0.5}), 1e-5);
  CHECK(g0.norm() < 1e-4);

  auto bad = [](const Eigen::VectorXd& x) { return std::log(x(0)); };
  CHECK_THROWS_AS(numerical_gradient(bad, vec({1e-9}), 1e-5), std::runtime_error);
}

TEST_CASE("augmented input validation") {
  CHECK_THROWS_AS(AugmentedInput(vec({1.0}), vec({0.5, 1.0})), std::invalid_argument);
  const AugmentedInput ok = AugmentedInput::from_control(vec({1.0, 2.0}), vec({3.0}));
  CHECK(ok.control_bar(0) == 1.0);
  CHECK(ok.control_bar(1) == 3.0);
}
