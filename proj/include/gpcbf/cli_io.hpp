#ifndef GPCBF_CLI_IO_HPP
#define GPCBF_CLI_IO_HPP

#include <limits>
#include <optional>
#include <string>

#include "gpcbf/simulation.hpp"

namespace gpcbf {

// Command exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfigError = 2;
inline constexpr int kExitNumericalError = 3;
inline constexpr int kExitAssertionFailure = 4;

/// Flat key = value run configuration ('#' comments, blank lines ignored).
struct RunConfig {
  std::string scenario = "di_mismatch_dynamic";
  int window = 100;        // P
  int inducing = 15;       // M
  int max_inducing = 25;   // M_max
  double phi = 0.98;
  double epsilon = 0.05;
  double dt = 0.01;
  double duration = 10.0;
  double noise_std = 1e-3;
  std::uint64_t seed = 0;

  // Safety-filter confidence scale: a fixed practical beta by default, or
  // the theoretical formula from (delta, rkhs_bound, kappa).
  std::string beta_mode = "fixed";
  double beta = 2.0;
  BetaConfig beta_config;

  std::string method = "afvsgp";
  // Optional compare-mode regression bound; NaN disables the check.
  double expect_max_afvsgp_mse = std::numeric_limits<double>::quiet_NaN();
  // 0 selects data-driven initialization.
  double init_signal_variance = 0.0;
  double init_lengthscale = 0.0;
  double init_noise_variance = 0.0;
  int fit_iterations = 150;

  LearnMethod learn_method() const;
  /// beta actually applied per beta_mode (theoretical uses window size P).
  double effective_beta() const;
  void validate() const;  // throws std::invalid_argument
};

RunConfig parse_config_text(const std::string& text);
RunConfig load_config(const std::string& path);

/// Snapshot persistence: versioned JSON with hyperparameters, phi, window
/// and inducing points; caches are excluded and rebuilt on load.
void save_snapshot(const ModelState& state, const std::string& path);
ModelState load_snapshot(const std::string& path);

/// Trace file: one header row, then one comma-separated record per control
/// step in the documented column order.
void write_trace(const std::vector<TraceRecord>& trace, const std::string& path);
void write_summary(const EpisodeSummary& summary, double beta_used,
                   double beta_theoretical, const std::string& path);

std::string render_method_table(const std::vector<MethodReport>& reports);

struct CommandPaths {
  std::string config;
  std::string snapshot;
  std::string out_dir = ".";
  std::optional<std::uint64_t> seed_override;
  bool strict = false;
};

// Subcommand entry points; return process exit codes.
int cmd_train(const CommandPaths& paths);
int cmd_run(const CommandPaths& paths);
int cmd_compare(const CommandPaths& paths);

}  // namespace gpcbf

#endif  // GPCBF_CLI_IO_HPP
