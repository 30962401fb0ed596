#include "gpcbf/cli_io.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <json.hpp>

namespace gpcbf {

namespace {

using nlohmann::json;

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

json vec_to_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

Eigen::VectorXd vec_from_json(const json& a) {
  Eigen::VectorXd v(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) v(i) = a[i].get<double>();
  return v;
}

}  // namespace

LearnMethod RunConfig::learn_method() const {
  if (method == "afvsgp") return LearnMethod::afvsgp;
  if (method == "vsgp") return LearnMethod::vsgp;
  if (method == "dense_gp" || method == "gp") return LearnMethod::dense_gp;
  if (method == "none") return LearnMethod::none;
  throw std::invalid_argument("config: unknown method '" + method + "'");
}

double RunConfig::effective_beta() const {
  if (beta_mode == "fixed") return beta;
  return compute_beta(beta_config, window);
}

void RunConfig::validate() const {
  if (phi <= 0.0 || phi > 1.0) throw std::invalid_argument("config: phi must be in (0, 1]");
  if (epsilon <= 0.0) throw std::invalid_argument("config: epsilon must be > 0");
  if (!(window >= inducing && inducing >= 1)) {
    throw std::invalid_argument("config: need P >= M >= 1");
  }
  if (max_inducing < 2) throw std::invalid_argument("config: M_max must be >= 2");
  if (dt <= 0.0) throw std::invalid_argument("config: dt must be > 0");
  if (duration <= 0.0) throw std::invalid_argument("config: duration must be > 0");
  if (noise_std < 0.0) throw std::invalid_argument("config: noise_std must be >= 0");
  if (init_signal_variance < 0.0 || init_lengthscale < 0.0 || init_noise_variance < 0.0) {
    throw std::invalid_argument(
        "config: kernel/noise initializers must be > 0 (or 0 for data-driven)");
  }
  if (beta_mode != "fixed" && beta_mode != "theoretical") {
    throw std::invalid_argument("config: beta_mode must be fixed or theoretical");
  }
  if (beta_mode == "fixed" && beta < 0.0) {
    throw std::invalid_argument("config: beta must be >= 0");
  }
  if (beta_mode == "theoretical" &&
      (beta_config.delta <= 0.0 || beta_config.delta >= 1.0)) {
    throw std::invalid_argument("config: delta must be in (0, 1)");
  }
  learn_method();  // validates the method string
  bool known = false;
  for (const auto& n : scenario_names()) known = known || n == scenario;
  if (!known) throw std::invalid_argument("config: unknown scenario '" + scenario + "'");
}

RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      if (key == "scenario") cfg.scenario = value;
      else if (key == "P") cfg.window = std::stoi(value);
      else if (key == "M") cfg.inducing = std::stoi(value);
      else if (key == "M_max") cfg.max_inducing = std::stoi(value);
      else if (key == "phi") cfg.phi = std::stod(value);
      else if (key == "epsilon") cfg.epsilon = std::stod(value);
      else if (key == "beta") cfg.beta = std::stod(value);
      else if (key == "beta_mode") cfg.beta_mode = value;
      else if (key == "delta") cfg.beta_config.delta = std::stod(value);
      else if (key == "rkhs_bound") cfg.beta_config.rkhs_bound = std::stod(value);
      else if (key == "kappa") cfg.beta_config.kappa = std::stod(value);
      else if (key == "dt") cfg.dt = std::stod(value);
      else if (key == "duration") cfg.duration = std::stod(value);
      else if (key == "noise_std") cfg.noise_std = std::stod(value);
      else if (key == "seed") cfg.seed = std::stoull(value);
      else if (key == "method") cfg.method = value;
      else if (key == "sv_init") cfg.init_signal_variance = std::stod(value);
      else if (key == "ell_init") cfg.init_lengthscale = std::stod(value);
      else if (key == "noise_init") cfg.init_noise_variance = std::stod(value);
      else if (key == "fit_iterations") cfg.fit_iterations = std::stoi(value);
      else if (key == "expect_max_afvsgp_mse") cfg.expect_max_afvsgp_mse = std::stod(value);
      else throw std::invalid_argument("unknown key '" + key + "'");
    } catch (const std::invalid_argument&) {
      throw;
    } catch (const std::exception&) {
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": bad value for '" + key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

void save_snapshot(const ModelState& state, const std::string& path) {
  json doc;
  doc["format_version"] = 1;
  doc["control_dim"] = state.kernel.control_dim();
  doc["state_dim"] = state.kernel.state_dim();
  doc["phi"] = state.phi;
  doc["noise_variance"] = state.noise_variance;
  doc["window_capacity"] = state.window.capacity;
  json kernels = json::array();
  for (const auto& k : state.kernel.base_kernels()) {
    kernels.push_back({{"signal_variance", k.signal_variance()},
                       {"lengthscales", vec_to_json(k.lengthscales())}});
  }
  doc["kernel"] = kernels;
  json window = json::array();
  for (const auto& s : state.window.samples) {
    window.push_back({{"state", vec_to_json(s.input.state)},
                      {"u_bar", vec_to_json(s.input.control_bar)},
                      {"target", s.target}});
  }
  doc["window"] = window;
  json inducing = json::array();
  for (const auto& o : state.inducing) {
    inducing.push_back({{"state", vec_to_json(o.state)},
                        {"u_bar", vec_to_json(o.control_bar)}});
  }
  doc["inducing"] = inducing;

  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write snapshot '" + path + "'");
  out << doc.dump(2) << "\n";
}

ModelState load_snapshot(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open snapshot '" + path + "'");
  json doc = json::parse(in);
  if (doc.value("format_version", -1) != 1) {
    throw std::invalid_argument("snapshot '" + path + "': unsupported format version");
  }
  const int control_dim = doc.at("control_dim").get<int>();
  std::vector<SquaredExponentialKernel> base;
  for (const auto& k : doc.at("kernel")) {
    base.emplace_back(k.at("signal_variance").get<double>(),
                      vec_from_json(k.at("lengthscales")));
  }
  ModelState state;
  state.kernel = AdpKernel(std::move(base), control_dim);
  state.phi = doc.at("phi").get<double>();
  state.noise_variance = doc.at("noise_variance").get<double>();
  state.window.capacity = doc.at("window_capacity").get<int>();
  for (const auto& s : doc.at("window")) {
    state.window.samples.push_back(
        {AugmentedInput(vec_from_json(s.at("state")), vec_from_json(s.at("u_bar"))),
         s.at("target").get<double>()});
  }
  for (const auto& o : doc.at("inducing")) {
    state.inducing.emplace_back(vec_from_json(o.at("state")),
                                vec_from_json(o.at("u_bar")));
  }
  state.rebuild_caches();  // caches are derived state, never persisted
  return state;
}

void write_trace(const std::vector<TraceRecord>& trace, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write trace '" + path + "'");
  out << std::setprecision(17);
  if (trace.empty()) {
    out << "t\n";
    return;
  }
  const auto& first = trace.front();
  out << "t";
  for (int i = 0; i < first.x.size(); ++i) out << ",x" << i;
  for (int i = 0; i < first.u_nom.size(); ++i) out << ",u_nom" << i;
  for (int i = 0; i < first.u.size(); ++i) out << ",u" << i;
  out << ",h";
  for (int i = 0; i < first.psi.size(); ++i) out << ",psi" << i;
  out << ",z,pred_mean,pred_var,P_th,M_size,solver_status,step_ms\n";
  for (const auto& r : trace) {
    out << r.t;
    for (int i = 0; i < r.x.size(); ++i) out << "," << r.x(i);
    for (int i = 0; i < r.u_nom.size(); ++i) out << "," << r.u_nom(i);
    for (int i = 0; i < r.u.size(); ++i) out << "," << r.u(i);
    out << "," << r.h;
    for (int i = 0; i < r.psi.size(); ++i) out << "," << r.psi(i);
    out << "," << r.z << "," << r.pred_mean << "," << r.pred_var << "," << r.p_th
        << "," << r.inducing_size << "," << to_string(r.solver_status) << ","
        << r.step_ms << "\n";
  }
}

void write_summary(const EpisodeSummary& s, double beta_used, double beta_theoretical,
                   const std::string& path) {
  json doc;
  doc["steps"] = s.steps;
  doc["min_h"] = s.min_h;
  doc["mse"] = s.mse;
  doc["mean_step_ms"] = s.mean_step_ms;
  doc["max_step_ms"] = s.max_step_ms;
  doc["mean_update_ms"] = s.mean_update_ms;
  doc["inserts"] = s.inserts;
  doc["evictions"] = s.evictions;
  doc["fallback_rebuilds"] = s.fallbacks;
  doc["rejected_insertions"] = s.rejected_insertions;
  doc["infeasible_steps"] = s.infeasible_steps;
  doc["violation_steps"] = s.violation_steps;
  doc["diverged"] = s.diverged;
  doc["beta_used"] = beta_used;
  doc["beta_theoretical"] = beta_theoretical;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write summary '" + path + "'");
  out << doc.dump(2) << "\n";
}

std::string render_method_table(const std::vector<MethodReport>& reports) {
  std::ostringstream out;
  out << "Model | MSE | Update-Time(ms)\n";
  for (const auto& r : reports) {
    out << r.model << " | " << std::setprecision(6) << r.mse << " | ";
    if (r.model == "GP" || r.model == "NoLearning") {
      out << "/";
    } else {
      out << std::setprecision(6) << r.mean_update_ms;
    }
    if (!std::isnan(r.min_h)) {
      out << " | min_h " << std::setprecision(6) << r.min_h << " | violations "
          << r.violation_steps;
    }
    out << "\n";
  }
  return out.str();
}

namespace {

int guarded(const std::function<int()>& body) {
  try {
    return body();
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitNumericalError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumericalError;
  }
}

RunConfig config_for(const CommandPaths& paths) {
  RunConfig cfg = paths.config.empty() ? RunConfig{} : load_config(paths.config);
  if (paths.seed_override) cfg.seed = *paths.seed_override;
  cfg.validate();
  return cfg;
}

AdpKernel config_kernel(const RunConfig& cfg, const std::vector<Sample>& data,
                        int control_dim, int feature_dim, double* noise_init) {
  if (cfg.init_signal_variance > 0.0) {
    *noise_init = cfg.init_noise_variance > 0.0 ? cfg.init_noise_variance : 1e-2;
    std::vector<SquaredExponentialKernel> base;
    const double ell = cfg.init_lengthscale > 0.0 ? cfg.init_lengthscale : 1.0;
    for (int i = 0; i <= control_dim; ++i) {
      base.emplace_back(cfg.init_signal_variance,
                        Eigen::VectorXd::Constant(feature_dim, ell));
    }
    return AdpKernel(std::move(base), control_dim);
  }
  double auto_noise = 1e-2;
  AdpKernel k = kernel_init_from_data(data, control_dim, &auto_noise);
  *noise_init = cfg.init_noise_variance > 0.0 ? cfg.init_noise_variance : auto_noise;
  return k;
}

std::vector<Sample> offline_samples(const RunConfig& cfg) {
  if (is_stream_scenario(cfg.scenario)) {
    const auto stream = make_regime_switch_stream(cfg.noise_std);
    return stream_samples(stream, cfg.window, cfg.seed);
  }
  LoopScenario sc = make_scenario(cfg.scenario);
  sc.dt = cfg.dt;
  return collect_offline_data(sc, cfg.window, cfg.seed, cfg.noise_std);
}

}  // namespace

int cmd_train(const CommandPaths& paths) {
  return guarded([&]() -> int {
    const RunConfig cfg = config_for(paths);
    const auto data = offline_samples(cfg);

    int control_dim = 0, feature_dim = 0;
    if (is_stream_scenario(cfg.scenario)) {
      const auto stream = make_regime_switch_stream(cfg.noise_std);
      control_dim = stream.control_dim;
      feature_dim = stream.feature_dim;
    } else {
      const LoopScenario sc = make_scenario(cfg.scenario);
      control_dim = sc.plant.control_dim;
      feature_dim = sc.feature_dim;
    }

    FitOptions fopts;
    fopts.max_iterations = cfg.fit_iterations;
    fopts.seed = cfg.seed;
    FitReport report;
    double noise_init = 1e-2;
    const AdpKernel init = config_kernel(cfg, data, control_dim, feature_dim, &noise_init);
    ModelState state =
        fit_offline(data, cfg.inducing, cfg.phi, init, noise_init, fopts, &report);

    std::filesystem::create_directories(paths.out_dir);
    const std::string snap = paths.snapshot.empty()
                                 ? paths.out_dir + "/snapshot.json"
                                 : paths.snapshot;
    save_snapshot(state, snap);

    std::cout << "trained scenario=" << cfg.scenario << " P=" << cfg.window
              << " M=" << cfg.inducing << " phi=" << cfg.phi << "\n";
    std::cout << "collapsed bound: " << std::setprecision(10) << report.bound << "\n";
    std::cout << "noise_variance: " << state.noise_variance << "\n";
    for (std::size_t i = 0; i < state.kernel.base_kernels().size(); ++i) {
      const auto& k = state.kernel.base_kernels()[i];
      std::cout << "kernel[" << i << "]: sv=" << k.signal_variance()
                << " ell=" << k.lengthscales().transpose() << "\n";
    }
    std::cout << "snapshot: " << snap << "\n";
    return kExitOk;
  });
}

int cmd_run(const CommandPaths& paths) {
  return guarded([&]() -> int {
    const RunConfig cfg = config_for(paths);
    if (is_stream_scenario(cfg.scenario)) {
      throw std::invalid_argument("cmd_run needs a closed-loop scenario; '" +
                                  cfg.scenario + "' is a stream");
    }
    if (paths.snapshot.empty() && cfg.learn_method() != LearnMethod::none) {
      throw std::invalid_argument("cmd_run: --snapshot required unless method = none");
    }

    LoopScenario sc = make_scenario(cfg.scenario);
    sc.dt = cfg.dt;
    sc.duration = cfg.duration;
    sc.measurement_noise = cfg.noise_std;

    ModelState state;
    ModelState* model = nullptr;
    if (cfg.learn_method() != LearnMethod::none) {
      state = load_snapshot(paths.snapshot);
      model = &state;
    }

    EpisodeOptions eopts;
    eopts.method = cfg.learn_method();
    eopts.adapt = {cfg.epsilon, cfg.max_inducing};
    eopts.beta = cfg.effective_beta();
    eopts.seed = cfg.seed;
    const EpisodeResult res = run_episode(sc, model, eopts);

    std::filesystem::create_directories(paths.out_dir);
    write_trace(res.trace, paths.out_dir + "/trace.csv");
    const double beta_theory = compute_beta(cfg.beta_config, cfg.window);
    write_summary(res.summary, eopts.beta, beta_theory, paths.out_dir + "/summary.json");

    std::cout << "episode " << cfg.scenario << ": steps=" << res.summary.steps
              << " min_h=" << std::setprecision(6) << res.summary.min_h
              << " mse=" << res.summary.mse
              << " mean_step_ms=" << res.summary.mean_step_ms
              << " infeasible=" << res.summary.infeasible_steps
              << (res.summary.diverged ? " DIVERGED" : "") << "\n";
    return res.summary.diverged ? kExitNumericalError : kExitOk;
  });
}

int cmd_compare(const CommandPaths& paths) {
  return guarded([&]() -> int {
    RunConfig cfg = paths.config.empty() ? RunConfig{} : load_config(paths.config);
    if (paths.config.empty()) cfg.scenario = "regime_switch_stream";
    if (paths.seed_override) cfg.seed = *paths.seed_override;
    cfg.validate();

    CompareOptions copt;
    copt.window = cfg.window;
    copt.inducing = cfg.inducing;
    copt.max_inducing = cfg.max_inducing;
    copt.phi = cfg.phi;
    copt.epsilon = cfg.epsilon;
    copt.beta = cfg.effective_beta();
    copt.noise_std = cfg.noise_std;
    copt.seed = cfg.seed;
    copt.init_signal_variance = cfg.init_signal_variance;
    copt.init_lengthscale = cfg.init_lengthscale;
    copt.init_noise_variance = cfg.init_noise_variance;
    copt.fit_iterations = cfg.fit_iterations;

    std::vector<MethodReport> reports;
    if (is_stream_scenario(cfg.scenario)) {
      reports = compare_methods(make_regime_switch_stream(cfg.noise_std), copt);
    } else {
      LoopScenario sc = make_scenario(cfg.scenario);
      sc.dt = cfg.dt;
      sc.measurement_noise = cfg.noise_std;
      reports = compare_methods(sc, copt);
    }

    const std::string table = render_method_table(reports);
    std::cout << table;
    std::filesystem::create_directories(paths.out_dir);
    std::ofstream out(paths.out_dir + "/compare.txt");
    out << table;

    auto find = [&](const std::string& name) -> const MethodReport& {
      for (const auto& r : reports) {
        if (r.model == name) return r;
      }
      throw std::runtime_error("missing method report " + name);
    };
    const auto& afvsgp = find("AFVSGP");
    const auto& vsgp = find("VSGP");
    const auto& gp = find("GP");

    bool ok = true;
    auto check = [&](bool cond, const std::string& what) {
      std::cout << (cond ? "[pass] " : "[FAIL] ") << what << "\n";
      ok = ok && cond;
    };
    check(afvsgp.mse < vsgp.mse, "AFVSGP MSE < VSGP MSE");
    check(vsgp.mse < gp.mse, "VSGP MSE < frozen GP MSE");
    check(afvsgp.mean_update_ms < vsgp.mean_update_ms,
          "AFVSGP update time < VSGP full-refit time");
    if (!std::isnan(cfg.expect_max_afvsgp_mse)) {
      check(afvsgp.mse <= cfg.expect_max_afvsgp_mse,
            "AFVSGP MSE <= configured bound");
    }
    if (!ok && paths.strict) return kExitAssertionFailure;
    return kExitOk;
  });
}

}  // namespace gpcbf
