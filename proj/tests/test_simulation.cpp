#include <doctest.h>

#include <random>

#include "gpcbf/cli_io.hpp"
#include "gpcbf/simulation.hpp"
#include "oracles.hpp"

using namespace gpcbf;

namespace {

ModelState trained_for(const LoopScenario& sc, std::uint64_t seed, int P = 100,
                       int M = 15, double phi = 0.98) {
  auto offline = collect_offline_data(sc, P, seed, 1e-3);
  double noise_init = 1e-2;
  const AdpKernel init =
      kernel_init_from_data(offline, sc.plant.control_dim, &noise_init);
  FitOptions opts;
  opts.max_iterations = 120;
  opts.seed = seed;
  return fit_offline(offline, M, phi, init, noise_init, opts);
}

}  // namespace

TEST_CASE("rk4 is fourth order on the smooth double integrator") {
  DoubleIntegratorParams p;
  p.bias << 0.3, -0.4;
  p.drag = 0.5;
  const PlantPair plant = make_double_integrator(p);
  Eigen::VectorXd x0(4);
  x0 << 0.2, -0.1, 0.6, 0.4;
  Eigen::VectorXd u(2);
  u << 0.5, -0.2;

  auto integrate = [&](double dt, int steps) {
    Eigen::VectorXd x = x0;
    for (int i = 0; i < steps; ++i) x = rk4_step(plant.true_dyn, x, u, dt);
    return x;
  };
  // Reference at a very fine step.
  const Eigen::VectorXd ref = integrate(1.0 / 4096, 4096);
  const double e1 = (integrate(1.0 / 8, 8) - ref).norm();
  const double e2 = (integrate(1.0 / 16, 16) - ref).norm();
  const double e3 = (integrate(1.0 / 32, 32) - ref).norm();
  CHECK(e1 / e2 >= 6.0);  // nominal 16x for 4th order
  CHECK(e2 / e3 >= 6.0);
}

TEST_CASE("dissipative plant stays bounded under zero control") {
  DoubleIntegratorParams p;
  p.drag = 0.6;
  p.bias << 0.0, 0.0;
  const PlantPair plant = make_double_integrator(p);
  Eigen::VectorXd x(4);
  x << 1.0, -2.0, 3.0, 2.0;
  const Eigen::VectorXd u = Eigen::VectorXd::Zero(2);
  double max_norm = 0.0;
  for (int i = 0; i < 5000; ++i) {
    x = rk4_step(plant.true_dyn, x, u, 0.01);
    max_norm = std::max(max_norm, x.norm());
  }
  CHECK(max_norm < 20.0);
  CHECK(x.tail(2).norm() < 1e-6);  // velocities decay
}

TEST_CASE("bundled double integrator barrier has relative degree 2") {
  const auto obs = ObstacleMotion::fixed({2.0, 0.0});
  const BarrierSpec spec = make_distance_barrier_di(obs, 0.5, 1.0, 1.0);
  Eigen::VectorXd x(4);
  x << 0.3, 0.4, -0.2, 0.5;
  // L_g h = 0: h depends only on position, the input only moves velocity.
  // L_g L_f h = 2(p - c)^T != 0 away from the center.
  const Eigen::RowVectorXd row = spec.control_row(x, 0.0);
  CHECK(row.norm() > 1e-6);
  const Eigen::Vector2d rel = x.head(2) - Eigen::Vector2d(2.0, 0.0);
  CHECK((row.transpose() - 2.0 * rel).norm() < 1e-14);
}

TEST_CASE("bundled plants are locally Lipschitz (bounded Jacobian probes)") {
  std::mt19937_64 rng(401);
  const PlantPair di = make_double_integrator(
      DoubleIntegratorParams{Eigen::Matrix2d::Identity(), {0.1, -0.2}, 0.3});
  TwoLinkParams arm_true, arm_nom;
  arm_nom.m1 = 0.8;
  const PlantPair arm = make_two_link_arm(arm_true, arm_nom);

  for (const PlantPair* plant : {&di, &arm}) {
    for (int trial = 0; trial < 20; ++trial) {
      const Eigen::VectorXd x = oracles::random_vector(rng, 4, 1.0);
      const Eigen::VectorXd u = oracles::random_vector(rng, 2, 1.0);
      const double h = 1e-6;
      for (const auto* dyn : {&plant->true_dyn, &plant->nominal_dyn}) {
        for (int d = 0; d < 4; ++d) {
          Eigen::VectorXd xp = x, xm = x;
          xp(d) += h;
          xm(d) -= h;
          const Eigen::VectorXd col = (dyn->rate(xp, u) - dyn->rate(xm, u)) / (2 * h);
          CHECK(col.allFinite());
          CHECK(col.norm() < 1e3);
        }
      }
    }
  }
}

TEST_CASE("exact nominal model keeps the episode safe with beta = 0") {
  LoopScenario sc = make_scenario("di_exact_static");
  EpisodeOptions opt;
  opt.method = LearnMethod::none;
  opt.beta = 0.0;
  const EpisodeResult res = run_episode(sc, nullptr, opt);
  CHECK_FALSE(res.summary.diverged);
  CHECK(res.summary.min_h >= 0.0);
  CHECK(res.summary.violation_steps == 0);
  CHECK(res.summary.steps == 1000);
}

TEST_CASE("mismatched plant: baseline violates, learning filter stays safe") {
  LoopScenario sc = make_scenario("di_mismatch_dynamic");

  EpisodeOptions baseline;
  baseline.method = LearnMethod::none;
  baseline.beta = 0.0;
  baseline.seed = 1;
  const EpisodeResult none_res = run_episode(sc, nullptr, baseline);
  CHECK(none_res.summary.min_h < 0.0);
  CHECK(none_res.summary.violation_steps > 0);

  ModelState model = trained_for(sc, 1);
  EpisodeOptions learn;
  learn.method = LearnMethod::afvsgp;
  learn.beta = 2.0;
  learn.seed = 1;
  learn.adapt = {0.05, 25};
  const EpisodeResult learn_res = run_episode(sc, &model, learn);
  CHECK(learn_res.summary.min_h >= 0.0);
  CHECK(learn_res.summary.violation_steps == 0);
}

TEST_CASE("obstacle at infinity: filter never activates") {
  LoopScenario sc = make_scenario("di_exact_static");
  const auto far = ObstacleMotion::fixed({1e5, 1e5});
  sc.barrier = make_distance_barrier_di(far, 0.6, 2.0, 2.0);
  sc.features = [far](const Eigen::VectorXd& x, double t) {
    Eigen::VectorXd xi(4);
    xi.head(2) = x.head(2) - Eigen::VectorXd(far.center(t));
    xi.tail(2) = x.tail(2);
    return xi;
  };
  EpisodeOptions opt;
  opt.method = LearnMethod::none;
  const EpisodeResult res = run_episode(sc, nullptr, opt);

  // Every step passes the nominal control through...
  for (const auto& r : res.trace) {
    REQUIRE(r.solver_status == FilterStatus::interior);
    REQUIRE((r.u - r.u_nom).norm() == 0.0);
  }
  // ...so the trajectory equals the raw PD rollout.
  Eigen::VectorXd x = sc.x0;
  for (const auto& r : res.trace) {
    REQUIRE((r.x - x).lpNorm<Eigen::Infinity>() == 0.0);
    x = rk4_step(sc.plant.true_dyn, x, sc.nominal_control(x, r.t), sc.dt);
  }
}

TEST_CASE("regime switch: forgetting wins after the reference change") {
  LoopScenario sc = make_scenario("di_regime_switch");
  REQUIRE(sc.switch_time > 0.0);
  auto post_switch_mse = [&](double phi) {
    ModelState model = trained_for(sc, 1, 100, 15, phi);
    EpisodeOptions opt;
    opt.method = LearnMethod::afvsgp;
    opt.beta = 2.0;
    opt.seed = 1;
    opt.adapt = {0.05, 25};
    const EpisodeResult res = run_episode(sc, &model, opt);
    double se = 0.0;
    int n = 0;
    for (const auto& r : res.trace) {
      if (r.t < sc.switch_time) continue;
      se += (r.pred_mean - r.z) * (r.pred_mean - r.z);
      ++n;
    }
    REQUIRE(n > 0);
    return se / n;
  };
  CHECK(post_switch_mse(0.98) < post_switch_mse(1.0));
}

TEST_CASE("two-link arm with exact nominal has O(dt^2) discrepancies") {
  TwoLinkParams params;
  const PlantPair plant = make_two_link_arm(params, params);
  const BarrierSpec barrier =
      make_distance_barrier_arm(params, {1.35, 1.05}, 0.25, 3.0, 3.0);
  Eigen::VectorXd x(4);
  x << 0.3, 0.4, 0.1, -0.2;
  double z_max = 0.0;
  for (int i = 0; i < 200; ++i) {
    const double t = i * 0.005;
    Eigen::VectorXd tau = params.gravity_torque(x.head(2));
    tau(0) += 0.5 * std::sin(0.25 * t);
    tau(1) += 0.3 * std::cos(0.35 * t);
    Eigen::VectorXd xn = x;
    for (int k = 0; k < 8; ++k) xn = rk4_step(plant.true_dyn, xn, tau, 0.005 / 8);
    z_max = std::max(z_max,
                     std::abs(measure_discrepancy(barrier, x, xn, tau, t, 0.005).z));
    x = xn;
  }
  CHECK(z_max < 1e-3);
}

TEST_CASE("arm scenario runs the closed loop without violation") {
  LoopScenario sc = make_scenario("arm_static");
  sc.duration = 4.0;  // keep the test quick
  EpisodeOptions opt;
  opt.method = LearnMethod::none;
  opt.beta = 0.0;
  const EpisodeResult res = run_episode(sc, nullptr, opt);
  CHECK_FALSE(res.summary.diverged);
  CHECK(res.summary.min_h > 0.0);
}

TEST_CASE("episodes are bit-reproducible under a fixed seed") {
  LoopScenario sc = make_scenario("di_mismatch_static");
  sc.duration = 3.0;
  ModelState model = trained_for(sc, 7, 60, 10);
  EpisodeOptions opt;
  opt.method = LearnMethod::afvsgp;
  opt.beta = 2.0;
  opt.seed = 7;
  opt.adapt = {0.05, 20};

  ModelState m1 = model, m2 = model;
  const EpisodeResult a = run_episode(sc, &m1, opt);
  const EpisodeResult b = run_episode(sc, &m2, opt);
  REQUIRE(a.trace.size() == b.trace.size());
  for (std::size_t i = 0; i < a.trace.size(); ++i) {
    REQUIRE((a.trace[i].x - b.trace[i].x).lpNorm<Eigen::Infinity>() == 0.0);
    REQUIRE((a.trace[i].u - b.trace[i].u).lpNorm<Eigen::Infinity>() == 0.0);
    REQUIRE(a.trace[i].z == b.trace[i].z);
    REQUIRE(a.trace[i].pred_mean == b.trace[i].pred_mean);
    // step_ms is wall time and intentionally exempt.
  }
}

TEST_CASE("initial state outside the safe set is rejected") {
  LoopScenario sc = make_scenario("di_exact_static");
  sc.x0 << 3.0, 0.45, 0.0, 0.0;  // obstacle center
  EpisodeOptions opt;
  opt.method = LearnMethod::none;
  CHECK_THROWS_AS(run_episode(sc, nullptr, opt), std::invalid_argument);
}

TEST_CASE("offline data collection is deterministic and sized") {
  const LoopScenario sc = make_scenario("di_mismatch_static");
  const auto a = collect_offline_data(sc, 40, 3, 1e-3);
  const auto b = collect_offline_data(sc, 40, 3, 1e-3);
  REQUIRE(a.size() == 40);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].target == b[i].target);
    CHECK((a[i].input.state - b[i].input.state).norm() == 0.0);
  }
}

TEST_CASE("stream comparison reproduces the method ordering") {
  CompareOptions opt;
  opt.seed = 0;
  const auto reports = compare_methods(make_regime_switch_stream(1e-2), opt);
  REQUIRE(reports.size() == 4);
  auto get = [&](const std::string& name) {
    for (const auto& r : reports) {
      if (r.model == name) return r;
    }
    FAIL("missing ", name);
    return reports[0];
  };
  const auto afvsgp = get("AFVSGP");
  const auto vsgp = get("VSGP");
  const auto gp = get("GP");
  CHECK(afvsgp.mse < vsgp.mse);
  CHECK(vsgp.mse < gp.mse);
  CHECK(afvsgp.mean_update_ms < vsgp.mean_update_ms);
  CHECK(std::isnan(afvsgp.min_h));  // no closed loop in the stream kind
}

TEST_CASE("loop comparison: no-learning collects the most violations") {
  CompareOptions opt;
  opt.seed = 1;
  const auto reports = compare_methods(make_scenario("di_mismatch_dynamic"), opt);
  REQUIRE(reports.size() == 4);
  int none_viol = -1, max_other = 0;
  for (const auto& r : reports) {
    if (r.model == "NoLearning") {
      none_viol = r.violation_steps;
    } else {
      max_other = std::max(max_other, r.violation_steps);
    }
    CHECK(std::isfinite(r.min_h));
  }
  CHECK(none_viol > 0);
  CHECK(none_viol > max_other);
}

TEST_CASE("scenario catalog") {
  for (const auto& name : scenario_names()) {
    if (is_stream_scenario(name)) continue;
    const LoopScenario sc = make_scenario(name);
    CHECK(sc.plant.state_dim > 0);
    CHECK(sc.x0.size() == sc.plant.state_dim);
  }
  CHECK_THROWS_AS(make_scenario("not_a_scenario"), std::invalid_argument);
  CHECK(is_stream_scenario("regime_switch_stream"));
  CHECK_FALSE(is_stream_scenario("di_exact_static"));
}
