#include "gpcbf/simulation.hpp"

#include <chrono>
#include <cmath>
#include <iostream>

namespace gpcbf {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

/// Per-method update policy around a ModelState.
struct Learner {
  LearnMethod method = LearnMethod::none;
  ModelState* model = nullptr;
  AdaptationConfig adapt;

  Prediction predict_at(const Eigen::VectorXd& xi, int slots) const {
    if (method == LearnMethod::none || model == nullptr) return zero_prediction(slots);
    return predict(*model, xi);
  }

  StepEvents observe(const Sample& s) {
    StepEvents ev;
    switch (method) {
      case LearnMethod::afvsgp:
        ev = step(*model, s, adapt);
        break;
      case LearnMethod::vsgp:
        // The no-incremental-update baseline: slide the window and refit the
        // caches from scratch, inducing set untouched.
        model->window.push(s);
        model->rebuild_caches();
        break;
      case LearnMethod::dense_gp:
      case LearnMethod::none:
        break;
    }
    return ev;
  }
};

}  // namespace

std::string to_string(LearnMethod m) {
  switch (m) {
    case LearnMethod::afvsgp: return "AFVSGP";
    case LearnMethod::vsgp: return "VSGP";
    case LearnMethod::dense_gp: return "GP";
    case LearnMethod::none: return "NoLearning";
  }
  return "unknown";
}

EpisodeResult run_episode(const LoopScenario& scenario, ModelState* model,
                          const EpisodeOptions& options) {
  if (options.method != LearnMethod::none && model == nullptr) {
    throw std::invalid_argument("run_episode: learning method needs a trained model");
  }
  const int m = scenario.barrier.relative_degree;
  {
    const Eigen::VectorXd psi0 = psi_chain(scenario.barrier, scenario.x0, 0.0);
    for (int i = 0; i < m; ++i) {
      if (psi0(i) <= 0.0) {
        throw std::invalid_argument(
            "run_episode: initial state is not strictly inside the safe-set intersection");
      }
    }
  }

  Learner learner{options.method, model, options.adapt};
  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  const int steps = static_cast<int>(std::llround(scenario.duration / scenario.dt));
  const int slots = scenario.plant.control_dim + 1;

  EpisodeResult result;
  result.trace.reserve(steps);
  auto& sum = result.summary;
  sum.min_h = std::numeric_limits<double>::infinity();
  double se_acc = 0.0, step_ms_acc = 0.0, update_ms_acc = 0.0;

  Eigen::VectorXd x = scenario.x0;
  for (int k = 0; k < steps; ++k) {
    const auto tic = Clock::now();
    const double t = k * scenario.dt;
    const Eigen::VectorXd u_nom = scenario.nominal_control(x, t);

    FilterResult fres;
    if (options.method == LearnMethod::none) {
      const ConstraintRow row = nominal_constraint(scenario.barrier, x, t);
      const auto c = assemble_uncertain_constraint(row, zero_prediction(slots), 0.0);
      fres = solve(SafetyProblem(u_nom, c));
    } else {
      fres = filter_control(*model, scenario.barrier, x,
                            t, scenario.features(x, t), u_nom, options.beta);
    }
    if (fres.status == FilterStatus::infeasible_relaxed) ++sum.infeasible_steps;

    const Eigen::VectorXd x_next = rk4_step(scenario.plant.true_dyn, x, fres.u, scenario.dt);
    if (!x_next.allFinite()) {
      sum.diverged = true;
      std::cerr << "[gpcbf] episode '" << scenario.name << "' diverged at t=" << t << "\n";
      break;
    }

    DiscrepancySample ds =
        measure_discrepancy(scenario.barrier, x, x_next, fres.u, t, scenario.dt);
    const double z = ds.z + scenario.measurement_noise * gauss(rng);
    const Eigen::VectorXd xi = scenario.features(ds.mid_state, ds.mid_time);
    const Sample sample{AugmentedInput(xi, ds.u_bar), z};

    // One-step-ahead prediction at the measurement input, before the update.
    const Prediction pred = learner.predict_at(xi, slots);
    const double pred_mean = pred.mean(ds.u_bar);
    const double pred_var = pred.variance(ds.u_bar);
    se_acc += (pred_mean - z) * (pred_mean - z);

    const auto update_tic = Clock::now();
    const StepEvents ev = learner.observe(sample);
    const double update_ms = ms_since(update_tic);
    update_ms_acc += update_ms;
    if (ev.inserted) ++sum.inserts;
    if (ev.evicted_index >= 0) ++sum.evictions;
    if (ev.fallback_rebuild) ++sum.fallbacks;
    if (ev.insertion_rejected) ++sum.rejected_insertions;

    TraceRecord rec;
    rec.t = t;
    rec.x = x;
    rec.u_nom = u_nom;
    rec.u = fres.u;
    rec.psi = psi_chain(scenario.barrier, x, t);
    rec.h = rec.psi(0);
    rec.z = z;
    rec.pred_mean = pred_mean;
    rec.pred_var = pred_var;
    rec.p_th = ev.p_th;
    rec.inducing_size = (model != nullptr) ? model->inducing_size() : 0;
    rec.solver_status = fres.status;
    rec.step_ms = ms_since(tic);

    sum.min_h = std::min(sum.min_h, rec.h);
    if (rec.h < 0.0) ++sum.violation_steps;
    step_ms_acc += rec.step_ms;
    sum.max_step_ms = std::max(sum.max_step_ms, rec.step_ms);
    result.trace.push_back(std::move(rec));

    x = x_next;
  }

  sum.steps = static_cast<int>(result.trace.size());
  if (sum.steps > 0) {
    sum.mse = se_acc / sum.steps;
    sum.mean_step_ms = step_ms_acc / sum.steps;
    sum.mean_update_ms = update_ms_acc / sum.steps;
    // Close the episode with the final state's barrier value.
    const double t_end = sum.steps * scenario.dt;
    sum.min_h = std::min(sum.min_h, scenario.barrier.h(x, t_end));
  }
  return result;
}

std::vector<Sample> collect_offline_data(const LoopScenario& scenario, int count,
                                         std::uint64_t seed, double noise_std) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<Sample> data;
  data.reserve(count);

  Eigen::VectorXd x = scenario.x0;
  const int mc = scenario.plant.control_dim;
  for (int k = 0; k < count; ++k) {
    const double t = k * scenario.dt;
    Eigen::VectorXd u = scenario.nominal_control(x, t);
    for (int j = 0; j < mc; ++j) {
      u(j) += 1.1 * std::sin(1.7 * t + 0.9 * j) + 0.6 * std::cos(2.9 * t + 0.4 * j) +
              0.4 * std::sin(5.3 * t + 1.7 * j);
    }
    const Eigen::VectorXd x_next = rk4_step(scenario.plant.true_dyn, x, u, scenario.dt);
    DiscrepancySample ds =
        measure_discrepancy(scenario.barrier, x, x_next, u, t, scenario.dt);
    const double z = ds.z + noise_std * gauss(rng);
    const Eigen::VectorXd xi = scenario.features(ds.mid_state, ds.mid_time);
    data.push_back({AugmentedInput(xi, ds.u_bar), z});
    x = x_next;
  }
  return data;
}

std::vector<Sample> stream_samples(const StreamScenario& scenario, int count,
                                   std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Sample> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) out.push_back(scenario.emit(i, rng));
  return out;
}

namespace {

AdpKernel default_kernel(int control_dim, int feature_dim, double sv, double ell) {
  std::vector<SquaredExponentialKernel> base;
  for (int i = 0; i <= control_dim; ++i) {
    base.emplace_back(sv, Eigen::VectorXd::Constant(feature_dim, ell));
  }
  return AdpKernel(std::move(base), control_dim);
}

AdpKernel init_kernel_for(const CompareOptions& opt, const std::vector<Sample>& data,
                          int control_dim, int feature_dim, double* noise) {
  if (opt.init_signal_variance > 0.0) {
    if (noise != nullptr) {
      *noise = opt.init_noise_variance > 0.0 ? opt.init_noise_variance : 1e-2;
    }
    return default_kernel(control_dim, feature_dim, opt.init_signal_variance,
                          opt.init_lengthscale);
  }
  double auto_noise = 1e-2;
  AdpKernel k = kernel_init_from_data(data, control_dim, &auto_noise);
  if (noise != nullptr) {
    *noise = opt.init_noise_variance > 0.0 ? opt.init_noise_variance : auto_noise;
  }
  return k;
}

ModelState make_state(const AdpKernel& kernel, double noise, double phi,
                      const std::vector<Sample>& data, int num_inducing) {
  ModelState st;
  st.kernel = kernel;
  st.noise_variance = noise;
  st.phi = phi;
  st.window.capacity = static_cast<int>(data.size());
  st.window.samples = data;
  for (std::size_t i = data.size() - num_inducing; i < data.size(); ++i) {
    st.inducing.push_back(data[i].input);
  }
  st.rebuild_caches();
  return st;
}

struct StreamRunner {
  std::string name;
  Learner learner;
  double se = 0.0;
  int se_count = 0;
  double update_ms = 0.0;
  int update_count = 0;
};

}  // namespace

std::vector<MethodReport> compare_methods(const StreamScenario& scenario,
                                          const CompareOptions& opt) {
  const auto samples = stream_samples(scenario, scenario.total_steps, opt.seed);
  if (opt.window >= scenario.switch_step) {
    throw std::invalid_argument("compare_methods: offline window must end before the switch");
  }
  const std::vector<Sample> offline(samples.begin(), samples.begin() + opt.window);

  FitOptions fit_opts;
  fit_opts.max_iterations = opt.fit_iterations;
  fit_opts.seed = opt.seed;
  double noise_init = 1e-2;
  const AdpKernel init = init_kernel_for(opt, offline, scenario.control_dim,
                                         scenario.feature_dim, &noise_init);
  ModelState trained =
      fit_offline(offline, opt.inducing, opt.phi, init, noise_init, fit_opts);

  // All methods share the trained hyperparameters; only the adaptation
  // scheme differs.
  ModelState afvsgp = trained;
  ModelState vsgp = make_state(trained.kernel, trained.noise_variance, 1.0, offline,
                               opt.inducing);
  ModelState dense = make_state(trained.kernel, trained.noise_variance, 1.0, offline,
                                opt.window);

  std::vector<StreamRunner> runners;
  runners.push_back({"AFVSGP",
                     {LearnMethod::afvsgp, &afvsgp, {opt.epsilon, opt.max_inducing}}});
  runners.push_back({"VSGP", {LearnMethod::vsgp, &vsgp, {}}});
  runners.push_back({"GP", {LearnMethod::dense_gp, &dense, {}}});
  runners.push_back({"NoLearning", {LearnMethod::none, nullptr, {}}});

  const int slots = scenario.control_dim + 1;
  for (int i = opt.window; i < scenario.total_steps; ++i) {
    const Sample& s = samples[i];
    for (auto& r : runners) {
      const Prediction pred = r.learner.predict_at(s.input.state, slots);
      if (i >= scenario.eval_start) {
        const double err = pred.mean(s.input.control_bar) - s.target;
        r.se += err * err;
        ++r.se_count;
      }
      const auto tic = Clock::now();
      r.learner.observe(s);
      r.update_ms += ms_since(tic);
      ++r.update_count;
    }
  }

  std::vector<MethodReport> reports;
  for (const auto& r : runners) {
    MethodReport rep;
    rep.model = r.name;
    rep.mse = r.se_count > 0 ? r.se / r.se_count : 0.0;
    rep.mean_update_ms = r.update_count > 0 ? r.update_ms / r.update_count : 0.0;
    reports.push_back(rep);
  }
  return reports;
}

std::vector<MethodReport> compare_methods(const LoopScenario& scenario,
                                          const CompareOptions& opt) {
  const auto offline =
      collect_offline_data(scenario, opt.window, opt.seed, opt.noise_std);

  FitOptions fit_opts;
  fit_opts.max_iterations = opt.fit_iterations;
  fit_opts.seed = opt.seed;
  double noise_init = 1e-2;
  const AdpKernel init = init_kernel_for(opt, offline, scenario.plant.control_dim,
                                         scenario.feature_dim, &noise_init);
  ModelState trained =
      fit_offline(offline, opt.inducing, opt.phi, init, noise_init, fit_opts);

  std::vector<MethodReport> reports;
  for (const LearnMethod method : {LearnMethod::afvsgp, LearnMethod::vsgp,
                                   LearnMethod::dense_gp, LearnMethod::none}) {
    ModelState state;
    switch (method) {
      case LearnMethod::afvsgp: state = trained; break;
      case LearnMethod::vsgp:
        state = make_state(trained.kernel, trained.noise_variance, 1.0, offline,
                           opt.inducing);
        break;
      case LearnMethod::dense_gp:
        state = make_state(trained.kernel, trained.noise_variance, 1.0, offline,
                           opt.window);
        break;
      case LearnMethod::none: break;
    }

    EpisodeOptions eopts;
    eopts.method = method;
    eopts.adapt = {opt.epsilon, opt.max_inducing};
    eopts.beta = method == LearnMethod::none ? 0.0 : opt.beta;
    eopts.seed = opt.seed;
    const EpisodeResult res = run_episode(
        scenario, method == LearnMethod::none ? nullptr : &state, eopts);

    MethodReport rep;
    rep.model = to_string(method);
    rep.mean_update_ms = res.summary.mean_update_ms;
    rep.min_h = res.summary.min_h;
    rep.violation_steps = res.summary.violation_steps;
    // Post-switch MSE when the scenario switches, whole-episode otherwise.
    double se = 0.0;
    int n = 0;
    for (const auto& rec : res.trace) {
      if (scenario.switch_time >= 0.0 && rec.t < scenario.switch_time) continue;
      const double err = rec.pred_mean - rec.z;
      se += err * err;
      ++n;
    }
    rep.mse = n > 0 ? se / n : res.summary.mse;
    reports.push_back(rep);
  }
  return reports;
}

// ---------------------------------------------------------------------------
// Scenario catalog
// ---------------------------------------------------------------------------

namespace {

DoubleIntegratorParams mismatch_params() {
  DoubleIntegratorParams p;
  p.gain << 0.50, 0.08, -0.05, 0.54;
  p.bias << 0.0, -1.3;
  p.drag = 0.45;
  return p;
}

std::function<Eigen::VectorXd(const Eigen::VectorXd&, double)> di_features(
    const ObstacleMotion& obstacle) {
  return [obstacle](const Eigen::VectorXd& x, double t) {
    Eigen::VectorXd xi(4);
    xi.head(2) = x.head(2) - Eigen::VectorXd(obstacle.center(t));
    xi.tail(2) = x.tail(2);
    return xi;
  };
}

std::function<Eigen::VectorXd(const Eigen::VectorXd&, double)> di_goal_pd(
    const Eigen::Vector2d& goal, double kp, double kd) {
  return [goal, kp, kd](const Eigen::VectorXd& x, double) {
    Eigen::VectorXd u(2);
    u = kp * (goal - x.head(2)) - kd * x.tail(2);
    return u;
  };
}

LoopScenario di_base(const std::string& name, const DoubleIntegratorParams& params,
                     const ObstacleMotion& obstacle, double radius) {
  LoopScenario sc;
  sc.name = name;
  sc.plant = make_double_integrator(params);
  sc.barrier = make_distance_barrier_di(obstacle, radius, 2.0, 2.0);
  sc.features = di_features(obstacle);
  sc.feature_dim = 4;
  sc.x0 = Eigen::VectorXd::Zero(4);
  sc.dt = 0.01;
  sc.duration = 10.0;
  return sc;
}

LoopScenario make_arm_scenario() {
  TwoLinkParams true_params;
  true_params.m1 = 1.3;
  true_params.m2 = 1.1;
  TwoLinkParams nominal_params;  // lighter links than reality
  nominal_params.m1 = 1.0;
  nominal_params.m2 = 0.8;

  const Eigen::Vector2d obstacle(1.35, 1.05);
  const double radius = 0.25;

  LoopScenario sc;
  sc.name = "arm_static";
  sc.plant = make_two_link_arm(true_params, nominal_params);
  sc.barrier = make_distance_barrier_arm(nominal_params, obstacle, radius, 3.0, 3.0);
  sc.feature_dim = 4;
  sc.features = [](const Eigen::VectorXd& x, double) { return x; };
  // Joint-space PD with nominal gravity compensation, swinging the
  // end effector past the obstacle.
  sc.nominal_control = [nominal_params](const Eigen::VectorXd& x, double t) {
    const Eigen::Vector2d q = x.head(2);
    const Eigen::Vector2d dq = x.tail(2);
    Eigen::Vector2d q_ref(0.9 + 0.6 * std::sin(0.7 * t), 0.5 + 0.4 * std::cos(0.5 * t));
    Eigen::VectorXd tau =
        12.0 * (q_ref - q) - 4.0 * dq + nominal_params.gravity_torque(q);
    return tau;
  };
  sc.x0 = Eigen::VectorXd::Zero(4);
  sc.x0 << 0.3, 0.4, 0.0, 0.0;
  sc.dt = 0.005;
  sc.duration = 8.0;
  return sc;
}

}  // namespace

LoopScenario make_scenario(const std::string& name) {
  if (name == "di_exact_static") {
    DoubleIntegratorParams exact;  // true == nominal
    auto sc = di_base(name, exact, ObstacleMotion::fixed({3.0, 0.45}), 0.6);
    sc.nominal_control = di_goal_pd({6.0, 0.0}, 1.0, 1.6);
    return sc;
  }
  if (name == "di_mismatch_static") {
    auto sc = di_base(name, mismatch_params(), ObstacleMotion::fixed({3.0, 0.45}), 0.6);
    sc.nominal_control = di_goal_pd({6.0, 0.0}, 1.0, 1.6);
    return sc;
  }
  if (name == "di_mismatch_dynamic") {
    // Obstacle sweeps left through the corridor the biased plant actually
    // travels (the drift pins the trajectory near y = -1).
    auto sc = di_base(name, mismatch_params(),
                      ObstacleMotion::linear({5.5, -1.35}, {-1.0, 0.0}), 0.6);
    sc.nominal_control = di_goal_pd({6.0, 0.0}, 1.0, 1.6);
    return sc;
  }
  if (name == "di_zero_nominal") {
    // Fully-unknown-parameters setting: the nominal acceleration estimates
    // are zero, so F_row's input column vanishes and every acceleration
    // effect must be learned. The kinematic D-chain survives (velocities
    // are measured).
    auto sc = di_base(name, mismatch_params(), ObstacleMotion::fixed({3.0, 0.45}), 0.6);
    sc.plant = make_double_integrator(mismatch_params(), /*zero_nominal=*/true);
    sc.barrier.control_row = [](const Eigen::VectorXd&, double) {
      return Eigen::RowVectorXd(Eigen::RowVectorXd::Zero(2));
    };
    sc.nominal_control = di_goal_pd({6.0, 0.0}, 1.0, 1.6);
    return sc;
  }
  if (name == "di_regime_switch") {
    auto sc = di_base(name, mismatch_params(), ObstacleMotion::fixed({0.0, 3.2}), 0.5);
    sc.duration = 16.0;
    sc.switch_time = 8.0;
    const double sw = sc.switch_time;
    // Reference oscillates along the x axis, then switches to the y axis.
    sc.nominal_control = [sw](const Eigen::VectorXd& x, double t) {
      Eigen::Vector2d p_ref, v_ref;
      const double a = 1.4, w = 0.8;
      if (t < sw) {
        p_ref << a * std::sin(w * t), 0.0;
        v_ref << a * w * std::cos(w * t), 0.0;
      } else {
        p_ref << 0.0, a * std::sin(w * (t - sw));
        v_ref << 0.0, a * w * std::cos(w * (t - sw));
      }
      Eigen::VectorXd u(2);
      u = 2.2 * (p_ref - x.head(2)) + 1.8 * (v_ref - x.tail(2));
      return u;
    };
    return sc;
  }
  if (name == "arm_static") return make_arm_scenario();
  throw std::invalid_argument("make_scenario: unknown scenario '" + name + "'");
}

StreamScenario make_regime_switch_stream(double noise_std) {
  StreamScenario sc;
  sc.name = "regime_switch_stream";
  sc.feature_dim = 2;
  sc.control_dim = 1;
  sc.total_steps = 1000;
  sc.switch_step = 500;
  sc.eval_start = 600;
  sc.emit = [noise_std, sw = sc.switch_step](int i, std::mt19937_64& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    const bool post = i >= sw;
    const double t = 0.05 * i;
    // Feature path drifts to a partially overlapping region after the
    // switch; the target coefficients change as well.
    Eigen::VectorXd xi(2);
    const double shift = post ? 1.8 : 0.0;
    xi << shift + 1.4 * std::sin(0.9 * t), shift + 1.4 * std::cos(1.3 * t);
    const double u = 1.2 * std::sin(0.7 * t + 0.3);
    Eigen::VectorXd a(2);
    if (!post) {
      a << 0.8 * std::sin(xi(0)) + 0.3 * xi(1), 0.6 + 0.25 * xi(0);
    } else {
      a << -0.9 * std::sin(xi(0)) - 0.4 * xi(1) + 0.5, -0.5 + 0.3 * xi(1);
    }
    Eigen::VectorXd u_bar(2);
    u_bar << 1.0, u;
    const double z = a.dot(u_bar) + noise_std * gauss(rng);
    return Sample{AugmentedInput(xi, u_bar), z};
  };
  return sc;
}

bool is_stream_scenario(const std::string& name) {
  return name == "regime_switch_stream";
}

std::vector<std::string> scenario_names() {
  return {"di_exact_static", "di_mismatch_static", "di_mismatch_dynamic",
          "di_zero_nominal", "di_regime_switch", "arm_static",
          "regime_switch_stream"};
}

}  // namespace gpcbf
