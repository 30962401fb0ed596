#ifndef GPCBF_SIMULATION_HPP
#define GPCBF_SIMULATION_HPP

#include <random>
#include <string>
#include <vector>

#include "gpcbf/online_adaptation.hpp"
#include "gpcbf/plants.hpp"
#include "gpcbf/safety_filter.hpp"

namespace gpcbf {

/// Closed-loop experiment description: plant pair, barrier, nominal policy,
/// learner feature map, horizon. Reference/obstacle switches are baked into
/// the time-dependent callables.
struct LoopScenario {
  std::string name;
  PlantPair plant;
  BarrierSpec barrier;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&, double)> features;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&, double)> nominal_control;
  Eigen::VectorXd x0;
  double dt = 0.01;
  double duration = 10.0;
  double measurement_noise = 1e-3;
  int feature_dim = 4;
  double switch_time = -1.0;  // < 0: no regime switch
};

/// Open-loop sample stream for learning-only experiments (method comparisons
/// on identical data).
struct StreamScenario {
  std::string name;
  int feature_dim = 2;
  int control_dim = 1;
  int total_steps = 1000;
  int switch_step = 500;
  int eval_start = 600;
  std::function<Sample(int, std::mt19937_64&)> emit;
};

enum class LearnMethod { afvsgp, vsgp, dense_gp, none };
std::string to_string(LearnMethod m);

struct TraceRecord {
  double t = 0.0;
  Eigen::VectorXd x, u_nom, u;
  double h = 0.0;
  Eigen::VectorXd psi;
  double z = 0.0;
  double pred_mean = 0.0, pred_var = 0.0;
  double p_th = 0.0;
  int inducing_size = 0;
  FilterStatus solver_status = FilterStatus::interior;
  double step_ms = 0.0;
};

struct EpisodeSummary {
  double min_h = 0.0;
  double mse = 0.0;  // one-step-ahead Delta B prediction MSE
  double mean_step_ms = 0.0, max_step_ms = 0.0, mean_update_ms = 0.0;
  int steps = 0;
  int inserts = 0, evictions = 0, fallbacks = 0;
  int rejected_insertions = 0, infeasible_steps = 0;
  int violation_steps = 0;  // steps with h(x) < 0
  bool diverged = false;
};

struct EpisodeResult {
  std::vector<TraceRecord> trace;
  EpisodeSummary summary;
};

struct EpisodeOptions {
  LearnMethod method = LearnMethod::afvsgp;
  AdaptationConfig adapt;
  double beta = 2.0;
  std::uint64_t seed = 0;
};

/// Algorithm-per-step loop: nominal control -> safety filter -> RK4 on the
/// true plant -> discrepancy measurement -> model update. `model` may be
/// nullptr only for LearnMethod::none. Divergence aborts with the partial
/// trace and summary.diverged set.
EpisodeResult run_episode(const LoopScenario& scenario, ModelState* model,
                          const EpisodeOptions& options);

/// Unfiltered warm-up run collecting discrepancy samples for offline
/// training (nominal policy plus a deterministic dither).
std::vector<Sample> collect_offline_data(const LoopScenario& scenario, int count,
                                         std::uint64_t seed, double noise_std);

/// First `count` samples of a stream under the given seed.
std::vector<Sample> stream_samples(const StreamScenario& scenario, int count,
                                   std::uint64_t seed);

struct MethodReport {
  std::string model;          // method name, Table-style
  double mse = 0.0;           // post-switch one-step prediction MSE
  double mean_update_ms = 0.0;
  double min_h = std::numeric_limits<double>::quiet_NaN();  // loop scenarios only
  int violation_steps = 0;
};

struct CompareOptions {
  int window = 100;       // P
  int inducing = 15;      // M
  int max_inducing = 25;  // M_max
  double phi = 0.98;      // forgetting factor of the adaptive method
  double epsilon = 0.05;
  double beta = 2.0;
  double noise_std = 1e-2;
  std::uint64_t seed = 0;
  // <= 0 means data-driven initialization (kernel_init_from_data).
  double init_signal_variance = 0.0;
  double init_lengthscale = 1.0;
  double init_noise_variance = 0.0;
  int fit_iterations = 120;
};

/// Identical stream through AFVSGP / VSGP(phi=1, fixed inducing, full refit
/// per step) / frozen dense GP / no-learning; hyperparameters are shared
/// (trained once offline) so the comparison isolates the adaptation scheme.
std::vector<MethodReport> compare_methods(const StreamScenario& scenario,
                                          const CompareOptions& options);

/// Per-method closed-loop episodes on the same scenario and seed.
std::vector<MethodReport> compare_methods(const LoopScenario& scenario,
                                          const CompareOptions& options);

/// Named desk-scale scenarios; throws std::invalid_argument for unknown names.
/// Loop scenarios: di_exact_static, di_mismatch_static, di_mismatch_dynamic,
/// di_regime_switch, di_zero_nominal, arm_static.
LoopScenario make_scenario(const std::string& name);
StreamScenario make_regime_switch_stream(double noise_std = 1e-2);
bool is_stream_scenario(const std::string& name);
std::vector<std::string> scenario_names();

}  // namespace gpcbf

#endif  // GPCBF_SIMULATION_HPP
