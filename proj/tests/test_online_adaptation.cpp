#include <doctest.h>

#include <chrono>
#include <random>

#include "gpcbf/online_adaptation.hpp"
#include "oracles.hpp"

using namespace gpcbf;

namespace {

ModelState seeded_state(std::mt19937_64& rng, int P, int M, double phi,
                        double noise = 0.02, int state_dim = 2, int control_dim = 1) {
  const AdpKernel kernel = oracles::random_kernel(rng, state_dim, control_dim);
  ModelState st;
  st.kernel = kernel;
  st.noise_variance = noise;
  st.phi = phi;
  st.window.capacity = P;
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int i = 0; i < P; ++i) {
    AugmentedInput in = oracles::random_input(rng, state_dim, control_dim);
    st.window.samples.push_back({in, 0.5 * gauss(rng)});
  }
  for (int i = P - M; i < P; ++i) st.inducing.push_back(st.window.samples[i].input);
  st.rebuild_caches();
  return st;
}

Sample random_sample(std::mt19937_64& rng, int state_dim = 2, int control_dim = 1) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  return {oracles::random_input(rng, state_dim, control_dim), 0.5 * gauss(rng)};
}

double max_cache_error(const ModelState& st) {
  const auto oracle = oracles::batch_caches(st.kernel, st.noise_variance, st.phi,
                                            st.window.samples, st.inducing);
  double err = oracles::rel_frobenius(st.B_phi, oracle.B_phi);
  err = std::max(err, oracles::rel_frobenius(st.K_oo_inv, oracle.K_oo_inv));
  err = std::max(err, oracles::rel_frobenius(Eigen::MatrixXd(st.zlk),
                                             Eigen::MatrixXd(oracle.zlk)));
  return err;
}

Eigen::VectorXd probe_predictions(const ModelState& st, std::mt19937_64& rng,
                                  int n = 10) {
  Eigen::VectorXd out(n);
  std::mt19937_64 local(12345);  // fixed probes
  for (int i = 0; i < n; ++i) {
    const AugmentedInput q = oracles::random_input(local, st.kernel.state_dim(),
                                                   st.kernel.control_dim());
    out(i) = predict(st, q.state).mean(q.control_bar);
  }
  (void)rng;
  return out;
}

}  // namespace

TEST_CASE("ingest keeps caches batch-equivalent") {
  std::mt19937_64 rng(101);
  ModelState st = seeded_state(rng, 20, 6, 0.95);
  for (int step_i = 0; step_i < 30; ++step_i) {
    ingest_sample(st, random_sample(rng));
    CHECK(max_cache_error(st) < 1e-8);
  }
  CHECK(st.fallback_rebuilds == 0);
}

TEST_CASE("re-ingesting the oldest sample at phi = 1 is a no-op") {
  std::mt19937_64 rng(103);
  ModelState st = seeded_state(rng, 12, 5, 1.0);
  const Eigen::VectorXd before = probe_predictions(st, rng);
  const Sample oldest = st.window.samples.front();
  ingest_sample(st, oldest);
  const Eigen::VectorXd after = probe_predictions(st, rng);
  CHECK((before - after).lpNorm<Eigen::Infinity>() < 1e-8);
}

TEST_CASE("ingest requires a full window") {
  std::mt19937_64 rng(105);
  ModelState st = seeded_state(rng, 10, 4, 0.9);
  st.window.capacity = 20;  // pretend it never filled
  CHECK_THROWS_AS(ingest_sample(st, random_sample(rng)), std::logic_error);
}

TEST_CASE("novelty scores: residual and decomposition identities") {
  std::mt19937_64 rng(107);
  ModelState st = seeded_state(rng, 15, 5, 0.92);

  const NoveltyScores sc = novelty_scores(st);
  CHECK(sc.p_th >= -1e-8);

  // p_th + sum_m per_point = phi-weighted prior energy, both sides computed
  // independently.
  const Eigen::VectorXd w = st.weights();
  double energy = 0.0;
  for (int i = 0; i < st.window.size(); ++i) {
    const auto& a = st.window.samples[i].input;
    energy += w(i) * st.kernel.eval(a, a);
  }
  CHECK(sc.p_th + sc.per_point.sum() == doctest::Approx(energy).epsilon(1e-6));
}

TEST_CASE("window fully spanned by inducing points has zero residual") {
  std::mt19937_64 rng(109);
  ModelState st = seeded_state(rng, 10, 10, 1.0);
  const NoveltyScores sc = novelty_scores(st);
  CHECK(std::abs(sc.p_th) < 1e-8);
}

TEST_CASE("candidate equal to an inducing point contributes zero residual") {
  std::mt19937_64 rng(111);
  ModelState st = seeded_state(rng, 10, 4, 1.0);
  // Ingest a copy of an existing inducing point; its own projection residual
  // must vanish (exact representation).
  const Sample dup{st.inducing.back(), 0.3};
  ingest_sample(st, dup);
  const int newest = st.window.size() - 1;
  const Eigen::VectorXd row = st.K_xo.row(newest).transpose();
  const double residual =
      st.kernel.eval(dup.input, dup.input) - row.dot(st.K_oo_inv * row);
  CHECK(std::abs(residual) < 1e-8);
}

TEST_CASE("add_inducing matches direct inversion of the grown system") {
  std::mt19937_64 rng(113);
  for (int trial = 0; trial < 20; ++trial) {
    ModelState st = seeded_state(rng, 12, 4, 0.9);
    const Sample s = random_sample(rng);
    ingest_sample(st, s);
    REQUIRE(add_inducing(st, s));
    CHECK(max_cache_error(st) < 1e-8);  // direct-inversion oracle
  }
}

TEST_CASE("insert-then-evict round trip leaves predictions unchanged") {
  std::mt19937_64 rng(115);
  ModelState st = seeded_state(rng, 12, 4, 0.93);
  const Sample s = random_sample(rng);
  ingest_sample(st, s);
  const Eigen::VectorXd before = probe_predictions(st, rng);
  REQUIRE(add_inducing(st, s));
  remove_inducing(st, st.inducing_size() - 1);
  const Eigen::VectorXd after = probe_predictions(st, rng);
  CHECK((before - after).lpNorm<Eigen::Infinity>() < 1e-6);
}

TEST_CASE("insertion shrinks the predictive variance at the new point") {
  std::mt19937_64 rng(117);
  ModelState st = seeded_state(rng, 12, 4, 1.0);
  const Sample s = random_sample(rng);
  ingest_sample(st, s);
  const double var_before = predict(st, s.input.state).variance(s.input.control_bar);
  REQUIRE(add_inducing(st, s));
  const double var_after = predict(st, s.input.state).variance(s.input.control_bar);
  CHECK(var_after <= var_before + 1e-10);
}

TEST_CASE("duplicate inducing insertion is rejected cleanly") {
  std::mt19937_64 rng(119);
  ModelState st = seeded_state(rng, 12, 4, 1.0);
  const ModelState before = st;
  const Sample dup{st.inducing.back(), 0.1};
  CHECK_FALSE(add_inducing(st, dup));
  CHECK(st.rejected_insertions == 1);
  CHECK(st.inducing_size() == before.inducing_size());
  CHECK(oracles::rel_frobenius(st.B_phi, before.B_phi) == 0.0);
}

TEST_CASE("remove_inducing rebuilds exactly and guards the last point") {
  std::mt19937_64 rng(121);
  ModelState st = seeded_state(rng, 14, 5, 0.9);
  remove_inducing(st, 2);
  CHECK(st.inducing_size() == 4);
  CHECK(max_cache_error(st) < 1e-8);
  CHECK_THROWS_AS(remove_inducing(st, 7), std::invalid_argument);

  ModelState tiny = seeded_state(rng, 6, 1, 1.0);
  CHECK_THROWS_AS(remove_inducing(tiny, 0), std::invalid_argument);
}

TEST_CASE("removing a negligible-score point barely moves predictions") {
  std::mt19937_64 rng(123);
  ModelState st = seeded_state(rng, 14, 5, 1.0);
  // Add an inducing point far away from every window sample: it explains
  // nothing, so its per-point score is ~0 and dropping it is harmless.
  Eigen::VectorXd far_state = Eigen::VectorXd::Constant(2, 60.0);
  Eigen::VectorXd u_bar(2);
  u_bar << 1.0, 0.5;
  const Sample far{AugmentedInput(far_state, u_bar), 0.0};
  REQUIRE(add_inducing(st, far));

  const NoveltyScores sc = novelty_scores(st);
  int argmin = 0;
  sc.per_point.minCoeff(&argmin);
  CHECK(argmin == st.inducing_size() - 1);
  CHECK(sc.per_point(argmin) < 1e-3);

  const Eigen::VectorXd before = probe_predictions(st, rng);
  remove_inducing(st, argmin);
  const Eigen::VectorXd after = probe_predictions(st, rng);
  for (int i = 0; i < before.size(); ++i) {
    CHECK(std::abs(before(i) - after(i)) <=
          1e-3 * std::max(1.0, std::abs(before(i))));
  }
}

TEST_CASE("M = 2 removal equals a fresh single-point build") {
  std::mt19937_64 rng(125);
  ModelState st = seeded_state(rng, 8, 2, 0.97);
  remove_inducing(st, 0);

  ModelState fresh;
  fresh.kernel = st.kernel;
  fresh.noise_variance = st.noise_variance;
  fresh.phi = st.phi;
  fresh.window = st.window;
  fresh.inducing = st.inducing;
  fresh.rebuild_caches();
  CHECK(oracles::rel_frobenius(st.B_phi, fresh.B_phi) < 1e-8);
  CHECK(oracles::rel_frobenius(st.K_oo_inv, fresh.K_oo_inv) < 1e-8);
}

TEST_CASE("step: novelty exhaustion on a repeated sample") {
  std::mt19937_64 rng(127);
  ModelState st = seeded_state(rng, 10, 2, 1.0);
  const Sample s = random_sample(rng);
  AdaptationConfig cfg{0.05, 8};
  int inserts = 0;
  for (int i = 0; i < 25; ++i) {
    const StepEvents ev = step(st, s, cfg);
    if (ev.inserted) ++inserts;
  }
  CHECK(inserts <= 1);  // the first copy may be novel, the rest are not
  CHECK(st.inducing_size() <= 3);
}

TEST_CASE("step: inducing size never exceeds the cap") {
  std::mt19937_64 rng(129);
  ModelState st = seeded_state(rng, 15, 4, 0.9);
  AdaptationConfig cfg{1e-4, 6};  // aggressive insertion
  for (int i = 0; i < 300; ++i) {
    step(st, random_sample(rng), cfg);
    CHECK(st.inducing_size() <= 6);
  }
}

TEST_CASE("step config validation") {
  std::mt19937_64 rng(131);
  ModelState st = seeded_state(rng, 8, 3, 1.0);
  CHECK_THROWS_AS(step(st, random_sample(rng), {0.0, 5}), std::invalid_argument);
  CHECK_THROWS_AS(step(st, random_sample(rng), {0.1, 1}), std::invalid_argument);
}

TEST_CASE("master invariant: 200-step randomized stream stays batch-equivalent") {
  std::mt19937_64 rng(133);
  ModelState st = seeded_state(rng, 30, 8, 0.98);
  AdaptationConfig cfg{0.02, 10};
  int inserts = 0, evictions = 0;
  for (int i = 0; i < 200; ++i) {
    const StepEvents ev = step(st, random_sample(rng), cfg);
    inserts += ev.inserted ? 1 : 0;
    evictions += ev.evicted_index >= 0 ? 1 : 0;
    CHECK(max_cache_error(st) < 1e-8);
  }
  // The stream must actually exercise the churn paths.
  CHECK(inserts > 5);
  CHECK(evictions > 0);
}

TEST_CASE("deterministic updates") {
  std::mt19937_64 rng_a(135), rng_b(135);
  ModelState a = seeded_state(rng_a, 12, 4, 0.95);
  ModelState b = seeded_state(rng_b, 12, 4, 0.95);
  AdaptationConfig cfg{0.05, 6};
  for (int i = 0; i < 40; ++i) {
    const Sample sa = random_sample(rng_a);
    const Sample sb = random_sample(rng_b);
    step(a, sa, cfg);
    step(b, sb, cfg);
  }
  CHECK((a.B_phi - b.B_phi).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK((a.zlk - b.zlk).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("regime switch: forgetting beats phi = 1 after the change") {
  // Shared stream whose target coefficients flip at t = 500; the same
  // adaptive model is run with and without forgetting.
  auto make_stream = [](int n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<Sample> out;
    for (int i = 0; i < n; ++i) {
      const double t = 0.05 * i;
      Eigen::VectorXd xi(2);
      xi << 1.3 * std::sin(0.9 * t), 1.3 * std::cos(1.3 * t);
      Eigen::VectorXd u_bar(2);
      u_bar << 1.0, 1.1 * std::sin(0.7 * t);
      const bool post = i >= 500;
      const double a0 = post ? -0.9 * std::sin(xi(0)) + 0.4 : 0.8 * std::sin(xi(0));
      const double a1 = post ? -0.6 + 0.2 * xi(1) : 0.5 + 0.3 * xi(1);
      out.push_back({AugmentedInput(xi, u_bar), a0 + a1 * u_bar(1) + 0.01 * gauss(rng)});
    }
    return out;
  };
  const auto samples = make_stream(1000, 77);
  const int P = 200, M = 12;

  auto run = [&](double phi) {
    std::vector<Sample> offline(samples.begin(), samples.begin() + P);
    std::vector<SquaredExponentialKernel> base;
    for (int i = 0; i < 2; ++i) base.emplace_back(1.0, Eigen::VectorXd::Ones(2));
    FitOptions fopts;
    fopts.max_iterations = 80;
    ModelState st = fit_offline(offline, M, phi, AdpKernel(std::move(base), 1),
                                1e-2, fopts);
    AdaptationConfig cfg{0.05, 18};
    double se = 0.0;
    int n = 0;
    for (int i = P; i < 1000; ++i) {
      const Sample& s = samples[i];
      if (i >= 600) {
        const double err =
            predict(st, s.input.state).mean(s.input.control_bar) - s.target;
        se += err * err;
        ++n;
      }
      step(st, s, cfg);
    }
    return se / n;
  };

  const double mse_forget = run(0.99);
  const double mse_static = run(1.0);
  CHECK(mse_forget < mse_static);
}

TEST_CASE("per-step cost is independent of stream length") {
  std::mt19937_64 rng(137);
  ModelState st = seeded_state(rng, 40, 10, 0.97);
  AdaptationConfig cfg{0.05, 12};

  auto mean_step_seconds = [&](int n) {
    // Warm up before timing.
    for (int i = 0; i < 100; ++i) step(st, random_sample(rng), cfg);
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < n; ++i) step(st, random_sample(rng), cfg);
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
               .count() / n;
  };

  const double at_1k = mean_step_seconds(1000);
  const double at_10k = mean_step_seconds(10000);
  const double ratio = at_10k / at_1k;
  CHECK(ratio > 0.5);
  CHECK(ratio < 2.0);
}
