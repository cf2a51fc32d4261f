#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "spotkit/analysis.hpp"
#include "spotkit/design.hpp"
#include "spotkit/detail/io.hpp"
#include "spotkit/evalharness.hpp"
#include "spotkit/searchspace.hpp"
#include "spotkit/surrogate.hpp"
#include "spotkit/toynet.hpp"
#include "spotkit/tuner.hpp"

namespace spotkit::experiment {

namespace fs = std::filesystem;

/// Bad input: missing files, malformed or invalid configuration. Exit code 1.
class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitRuntime = 2;

// --- built-in objectives --------------------------------------------------

namespace builtin {

/// Sum of squares of every numeric parameter in natural units.
inline EvalResult sphere(const Config &c) {
  double s = 0.0;
  for (const auto &[name, v] : c)
    if (!std::holds_alternative<std::string>(v)) s += as_double(v) * as_double(v);
  return EvalResult::success(s, std::numeric_limits<double>::quiet_NaN());
}

inline constexpr const char *kMixedHyperDict = R"({
  "Mixed4": {
    "x1": {"type": "float", "default": 0.0, "transform": "None", "lower": -5.0, "upper": 5.0},
    "x2": {"type": "float", "default": 0.0, "transform": "None", "lower": -5.0, "upper": 5.0},
    "width": {"type": "int", "default": 3, "transform": "transform_power_2_int", "lower": 1, "upper": 7},
    "kind": {"levels": ["a", "b", "c", "d"], "type": "factor", "default": "a",
             "transform": "None", "core_model_parameter_type": "str", "lower": 0, "upper": 3}
  }
})";

inline SearchSpace mixed_space() { return parse_hyper_dict(kMixedHyperDict, "Mixed4"); }

/// Separable quadratic over two floats, log2 of a power-of-two width and a
/// level penalty that prefers "b". Minimum 0 at x1=1.5, x2=-2, width=16, "b".
inline EvalResult mixed(const Config &c) {
  auto num = [&](const char *k) {
    auto it = c.find(k);
    if (it == c.end()) throw std::invalid_argument(std::string("mixed: missing ") + k);
    return as_double(it->second);
  };
  const auto it = c.find("kind");
  if (it == c.end() || !std::holds_alternative<std::string>(it->second))
    throw std::invalid_argument("mixed: missing kind");
  const std::string &kind = std::get<std::string>(it->second);
  double penalty = 0.0;
  if (kind == "a") penalty = 2.0;
  else if (kind == "b") penalty = 0.0;
  else if (kind == "c") penalty = 1.0;
  else if (kind == "d") penalty = 3.0;
  else throw std::invalid_argument("mixed: unknown level " + kind);
  const double x1 = num("x1"), x2 = num("x2"), lw = std::log2(num("width"));
  const double y = (x1 - 1.5) * (x1 - 1.5) + (x2 + 2.0) * (x2 + 2.0) +
                   0.5 * (lw - 4.0) * (lw - 4.0) + penalty;
  return EvalResult::success(y, std::numeric_limits<double>::quiet_NaN());
}

} // namespace builtin

// --- experiment configuration ---------------------------------------------

struct ToyControl {
  std::size_t n = 1000;
  std::size_t input_dim = 20;
  std::uint64_t data_seed = 7;
  bool shuffle = true;
};

struct ExperimentConfig {
  fs::path hyper_dict;
  std::string model;
  json modifications = json::object();
  std::string objective = "toynet";
  harness::EvalSetting eval = harness::EvalSetting::TrainHoldOut;
  std::uint64_t seed = 123;
  bool x_start_default = true;
  TunerConfig tuner;
  DesignControl design;
  SurrogateControl surrogate;
  ToyControl toy;
  double external_timeout_seconds = 600.0;
  int contour_grid = 20;
  double importance_threshold = 0.025;
  json raw; // the document as read, with hyper_dict made absolute
};

namespace detail {

inline json load_json_file(const fs::path &path, const char *what) {
  if (!fs::exists(path)) throw ConfigError(std::string(what) + " not found: " + path.string());
  try {
    return json::parse(spotkit::detail::read_file(path));
  } catch (const json::exception &e) {
    throw ConfigError(std::string("cannot parse ") + what + " " + path.string() + ": " + e.what());
  } catch (const std::exception &e) {
    throw ConfigError(std::string("cannot read ") + what + " " + path.string() + ": " + e.what());
  }
}

template <typename T> void read_opt(const json &j, const char *key, T &out) {
  if (auto it = j.find(key); it != j.end() && !it->is_null()) out = it->get<T>();
}

inline double read_budget(const json &j, const char *key, double fallback) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return fallback;
  if (it->is_string() && (*it == "inf" || *it == "infinity"))
    return std::numeric_limits<double>::infinity();
  return it->get<double>();
}

} // namespace detail

inline ExperimentConfig parse_experiment(const json &doc, const fs::path &base_dir) {
  ExperimentConfig c;
  try {
    c.hyper_dict = doc.at("hyper_dict").get<std::string>();
    if (c.hyper_dict.is_relative()) c.hyper_dict = fs::absolute(base_dir / c.hyper_dict);
    c.model = doc.at("model").get<std::string>();
    detail::read_opt(doc, "modifications", c.modifications);
    detail::read_opt(doc, "objective", c.objective);
    if (auto it = doc.find("eval"); it != doc.end())
      c.eval = harness::parse_setting(it->get<std::string>());
    detail::read_opt(doc, "seed", c.seed);
    if (auto it = doc.find("x_start"); it != doc.end())
      c.x_start_default = it->is_string() && *it == "default";
    if (auto it = doc.find("tuner"); it != doc.end()) {
      const auto &t = *it;
      c.tuner.fun_evals = detail::read_budget(t, "fun_evals", c.tuner.fun_evals);
      c.tuner.max_time = detail::read_budget(t, "max_time", c.tuner.max_time);
      detail::read_opt(t, "fun_repeats", c.tuner.fun_repeats);
      detail::read_opt(t, "noise", c.tuner.noise);
      detail::read_opt(t, "tolerance_x", c.tuner.tolerance_x);
      detail::read_opt(t, "infill_criterion", c.tuner.infill_criterion);
      detail::read_opt(t, "n_points", c.tuner.n_points);
      detail::read_opt(t, "infill_budget", c.tuner.infill_budget);
    }
    if (auto it = doc.find("design"); it != doc.end()) {
      detail::read_opt(*it, "init_size", c.design.init_size);
      detail::read_opt(*it, "repeats", c.design.repeats);
    }
    if (auto it = doc.find("surrogate"); it != doc.end()) {
      const auto &s = *it;
      detail::read_opt(s, "noise", c.surrogate.noise);
      detail::read_opt(s, "cod_type", c.surrogate.cod_type);
      detail::read_opt(s, "min_theta", c.surrogate.min_theta);
      detail::read_opt(s, "max_theta", c.surrogate.max_theta);
      detail::read_opt(s, "n_theta", c.surrogate.n_theta);
      detail::read_opt(s, "model_fun_evals", c.surrogate.model_fun_evals);
      detail::read_opt(s, "log_level", c.surrogate.log_level);
    }
    if (auto it = doc.find("toynet"); it != doc.end()) {
      detail::read_opt(*it, "n", c.toy.n);
      detail::read_opt(*it, "input_dim", c.toy.input_dim);
      detail::read_opt(*it, "data_seed", c.toy.data_seed);
      detail::read_opt(*it, "shuffle", c.toy.shuffle);
    }
    detail::read_opt(doc, "external_timeout_seconds", c.external_timeout_seconds);
    detail::read_opt(doc, "contour_grid", c.contour_grid);
    detail::read_opt(doc, "importance_threshold", c.importance_threshold);
  } catch (const json::exception &e) {
    throw ConfigError(std::string("invalid experiment config: ") + e.what());
  } catch (const std::invalid_argument &e) {
    throw ConfigError(std::string("invalid experiment config: ") + e.what());
  }
  const bool known = c.objective == "toynet" || c.objective == "builtin:sphere" ||
                     c.objective == "builtin:mixed" ||
                     (c.objective.rfind("external:", 0) == 0 && c.objective.size() > 9);
  if (!known) throw ConfigError("unknown objective '" + c.objective + "'");
  try {
    c.tuner.validate();
  } catch (const TunerError &e) {
    throw ConfigError(e.what());
  }
  if (c.design.init_size < 1 || c.design.repeats < 1)
    throw ConfigError("design init_size and repeats must be >= 1");
  if (c.contour_grid < 2) throw ConfigError("contour_grid must be >= 2");
  if (c.toy.n < 20 || c.toy.input_dim < 1) throw ConfigError("toynet n must be >= 20");
  c.raw = doc;
  c.raw["hyper_dict"] = c.hyper_dict.string();
  return c;
}

inline ExperimentConfig load_experiment(const fs::path &path) {
  const auto doc = detail::load_json_file(path, "experiment config");
  return parse_experiment(doc, path.parent_path());
}

/// Search space from the hyper-dict file with the configured bound and level
/// modifications applied.
inline SearchSpace build_space(const ExperimentConfig &c) {
  if (!fs::exists(c.hyper_dict))
    throw ConfigError("hyper-dict file not found: " + c.hyper_dict.string());
  try {
    auto space = parse_hyper_dict(spotkit::detail::read_file(c.hyper_dict), c.model);
    if (auto it = c.modifications.find("bounds"); it != c.modifications.end())
      for (const auto &[name, b] : it->items())
        space = modify_bounds(space, name, b.at(0).get<double>(), b.at(1).get<double>());
    if (auto it = c.modifications.find("levels"); it != c.modifications.end())
      for (const auto &[name, l] : it->items())
        space = modify_levels(space, name, l.get<std::vector<std::string>>());
    if (space.active_dims() == 0) throw ConfigError("every parameter is fixed");
    return space;
  } catch (const SpaceError &e) {
    throw ConfigError(std::string("hyper-dict ") + c.hyper_dict.string() + ": " + e.what());
  } catch (const json::exception &e) {
    throw ConfigError(std::string("invalid modifications: ") + e.what());
  }
}

/// Objective for the configured selector. The toy dataset is generated once.
inline Objective make_objective(const ExperimentConfig &c) {
  if (c.objective == "builtin:sphere") return builtin::sphere;
  if (c.objective == "builtin:mixed") return builtin::mixed;
  if (c.objective.rfind("external:", 0) == 0) {
    const std::string cmd = c.objective.substr(9);
    const auto timeout = std::chrono::milliseconds(
        static_cast<std::int64_t>(c.external_timeout_seconds * 1000.0));
    return [cmd, timeout](const Config &config) {
      return harness::external_evaluate(cmd, to_json(config), timeout);
    };
  }
  auto data = std::make_shared<toynet::DatasetSplit>(
      toynet::generate_dataset(c.toy.n, c.toy.input_dim, c.toy.data_seed));
  const auto setting = c.eval;
  const bool shuffle = c.toy.shuffle;
  const auto seed = spotkit::detail::derive_seed(c.seed, 0x70);
  return [data, setting, shuffle, seed](const Config &config) {
    try {
      const auto h = harness::HyperConfig::from_config(config);
      return harness::evaluate(h, setting, data->train, data->test, shuffle, seed);
    } catch (const std::exception &e) {
      return EvalResult::failure(e.what());
    }
  };
}

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<double> max_time;
  std::optional<double> fun_evals;
  std::optional<std::size_t> stop_after;
  Clock clock; // empty: wall clock
};

/// SPOTKIT_SEED overrides the config seed; an explicit --seed overrides both.
inline void apply_overrides(ExperimentConfig &c, const Overrides &o) {
  if (const char *env = std::getenv("SPOTKIT_SEED"); env && *env) {
    try {
      std::size_t pos = 0;
      c.seed = std::stoull(env, &pos);
      if (env[pos] != '\0') throw std::invalid_argument("trailing characters");
    } catch (const std::exception &) {
      throw ConfigError(std::string("SPOTKIT_SEED is not an unsigned integer: ") + env);
    }
  }
  if (o.seed) c.seed = *o.seed;
  if (o.max_time) c.tuner.max_time = *o.max_time;
  if (o.fun_evals) c.tuner.fun_evals = *o.fun_evals;
  try {
    c.tuner.validate();
  } catch (const TunerError &e) {
    throw ConfigError(e.what());
  }
  c.tuner.seed = c.seed;
  c.design.seed = spotkit::detail::derive_seed(c.seed, 0xd5);
  c.raw["seed"] = c.seed;
  json t = c.raw.value("tuner", json::object());
  if (std::isfinite(c.tuner.max_time)) t["max_time"] = c.tuner.max_time;
  else t["max_time"] = "inf";
  if (std::isfinite(c.tuner.fun_evals)) t["fun_evals"] = c.tuner.fun_evals;
  else t["fun_evals"] = "inf";
  c.raw["tuner"] = t;
}

/// A clock that advances one millisecond per reading; gives reproducible
/// elapsed-time columns.
inline Clock logical_clock() {
  auto ticks = std::make_shared<std::uint64_t>(0);
  return [ticks] { return static_cast<double>((*ticks)++) * 1e-3; };
}

// --- reporting ------------------------------------------------------------

struct Report {
  KrigingModel model;
  analysis::ImportanceReport importance;
  std::vector<std::pair<std::string, std::string>> pairs;
};

inline Report write_outputs(const ExperimentConfig &c, const SearchSpace &space,
                            const RunState &state, const fs::path &out) {
  using spotkit::detail::atomic_write;
  atomic_write(out / "run_state.json", to_json(state).dump(1));
  atomic_write(out / "events.csv", events_csv(state));

  const auto active = space.active_indices();
  std::vector<std::vector<double>> Z;
  for (const auto &x : state.X) Z.push_back(spotkit::detail::project(x, active));
  SurrogateControl sc = c.surrogate;
  sc.noise = sc.noise || c.tuner.noise || c.tuner.fun_repeats > 1 || c.design.repeats > 1;
  Report r;
  r.model = fit(Z, state.y, sc, spotkit::detail::derive_seed(c.seed, 0x8000));
  r.importance = analysis::importance(r.model, space);

  const auto cols = analysis::result_columns(state, r.importance);
  const auto table = gen_design_table(space, cols);
  atomic_write(out / "results.csv", design_table_csv(table, true));
  atomic_write(out / "results.txt", design_table_text(table, true));
  atomic_write(out / "importance.csv", analysis::importance_csv(r.importance));
  atomic_write(out / "progress.csv", analysis::progress_csv(analysis::export_progress(state)));
  atomic_write(out / "parallel.csv",
               analysis::parallel_csv(analysis::export_parallel(state, space), space));

  r.pairs = analysis::select_important_pairs(r.importance, c.importance_threshold);
  if (r.pairs.empty() && active.size() >= 2) {
    // Fall back to the two most important active parameters.
    std::vector<std::size_t> order(active.begin(), active.end());
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return r.importance[a].importance > r.importance[b].importance;
    });
    std::size_t a = std::min(order[0], order[1]), b = std::max(order[0], order[1]);
    r.pairs.emplace_back(space[a].name, space[b].name);
  }
  for (const auto &[a, b] : r.pairs) {
    const auto grid = analysis::export_contour(r.model, space, a, b, c.contour_grid,
                                               state.X[state.best_index]);
    atomic_write(out / ("contour_" + a + "_" + b + ".csv"), analysis::contour_csv(grid));
  }
  return r;
}

// --- commands -------------------------------------------------------------

namespace detail {

inline RunState run_experiment(const ExperimentConfig &c, const SearchSpace &space,
                               const fs::path &out, const Overrides &o, RunState state,
                               std::ostream &log) {
  const auto objective = make_objective(c);
  RunOptions opts;
  opts.clock = o.clock;
  opts.stop_after = o.stop_after;
  opts.on_eval = [&](const RunState &s) {
    spotkit::detail::atomic_write(out / "run_state.json", to_json(s).dump(1));
    spotkit::detail::atomic_write(out / "events.csv", events_csv(s));
    const auto &h = s.history.back();
    log << "eval " << h.iteration << " [" << to_string(h.phase) << "] y="
        << spotkit::detail::shortest(h.y) << " best="
        << spotkit::detail::shortest(s.y[s.best_index])
        << (h.ok ? "" : " (failed: " + h.error + ")") << '\n';
  };
  std::optional<Config> x_start;
  if (c.x_start_default) x_start = from_internal(space, space.default_internal());
  return run(objective, space, c.tuner, c.design, c.surrogate, x_start, opts, std::move(state));
}

inline void print_summary(const SearchSpace &space, const RunState &state, std::ostream &log) {
  const auto [cfg, y] = best(state, space);
  log << "best loss " << spotkit::detail::shortest(y) << " after " << state.size()
      << " evaluations: " << to_json(cfg).dump() << '\n';
}

} // namespace detail

inline int cmd_tune(const fs::path &config_path, const fs::path &out, const Overrides &o = {},
                    std::ostream &log = std::cout, std::ostream &err = std::cerr) {
  ExperimentConfig c;
  SearchSpace space;
  try {
    c = load_experiment(config_path);
    apply_overrides(c, o);
    space = build_space(c);
    fs::create_directories(out);
    spotkit::detail::atomic_write(out / "experiment.json", c.raw.dump(2));
  } catch (const ConfigError &e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception &e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  try {
    log << design_table_text(gen_design_table(space), false);
    const auto state = detail::run_experiment(c, space, out, o, RunState{}, log);
    if (state.empty()) return kExitOk;
    const auto report = write_outputs(c, space, state, out);
    log << design_table_text(gen_design_table(space, analysis::result_columns(state, report.importance)), true);
    detail::print_summary(space, state, log);
    return kExitOk;
  } catch (const std::exception &e) {
    err << "runtime error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

inline int cmd_resume(const fs::path &out, const Overrides &o = {},
                      std::ostream &log = std::cout, std::ostream &err = std::cerr) {
  ExperimentConfig c;
  SearchSpace space;
  RunState state;
  try {
    if (!fs::is_directory(out)) throw ConfigError("output directory not found: " + out.string());
    const auto doc = detail::load_json_file(out / "experiment.json", "experiment record");
    c = parse_experiment(doc, out);
    Overrides keep;
    keep.seed = c.seed;
    apply_overrides(c, keep);
    space = build_space(c);
    try {
      state = run_state_from_json(detail::load_json_file(out / "run_state.json", "run state"));
    } catch (const TunerError &e) {
      throw ConfigError(std::string("corrupt run state: ") + e.what());
    }
    for (const auto &x : state.X)
      if (x.size() != space.size()) throw ConfigError("run state does not match the search space");
  } catch (const ConfigError &e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception &e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  try {
    const auto before = state.size();
    Overrides run_o = o;
    run_o.seed.reset();
    state = detail::run_experiment(c, space, out, run_o, std::move(state), log);
    if (state.empty()) return kExitOk;
    if (state.size() == before) log << "nothing to resume: budget exhausted\n";
    write_outputs(c, space, state, out);
    detail::print_summary(space, state, log);
    return kExitOk;
  } catch (const std::exception &e) {
    err << "runtime error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

// --- benchmark ------------------------------------------------------------

/// Quantile with linear interpolation between order statistics.
inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) throw std::invalid_argument("quantile of empty sample");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

struct MethodSummary {
  std::string method;
  std::vector<double> best_y;
  std::vector<std::size_t> evaluations;
  double median = 0.0, iqr = 0.0;
};

struct BenchResult {
  std::size_t budget = 0;
  MethodSummary spot, random;
  std::size_t spot_wins = 0; // seeds where SPOT's best <= random's best
};

inline void summarize(MethodSummary &m) {
  m.median = quantile(m.best_y, 0.5);
  m.iqr = quantile(m.best_y, 0.75) - quantile(m.best_y, 0.25);
}

/// SPOT versus uniform random search at an equal evaluation budget over
/// `reps` seeds (seed, seed+1, ...).
inline BenchResult benchmark(const Objective &objective, const SearchSpace &space,
                             TunerConfig tuner, DesignControl design,
                             const SurrogateControl &surrogate, std::size_t reps,
                             std::uint64_t seed) {
  if (reps < 1) throw ConfigError("repetitions must be >= 1");
  if (!std::isfinite(tuner.fun_evals)) throw ConfigError("bench needs a finite fun_evals budget");
  BenchResult b;
  b.budget = static_cast<std::size_t>(tuner.fun_evals);
  b.spot.method = "spot";
  b.random.method = "random";
  tuner.max_time = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < reps; ++r) {
    const auto s = seed + r;
    tuner.seed = s;
    design.seed = spotkit::detail::derive_seed(s, 0xd5);
    RunOptions opts;
    opts.clock = logical_clock();
    const auto a = run(objective, space, tuner, design, surrogate, std::nullopt, opts);
    RunOptions ropts;
    ropts.clock = logical_clock();
    const auto z = random_search(objective, space, b.budget, spotkit::detail::derive_seed(s, 0xabc),
                                 ropts);
    b.spot.best_y.push_back(a.y[a.best_index]);
    b.spot.evaluations.push_back(a.size());
    b.random.best_y.push_back(z.y[z.best_index]);
    b.random.evaluations.push_back(z.size());
    if (a.y[a.best_index] <= z.y[z.best_index]) ++b.spot_wins;
  }
  summarize(b.spot);
  summarize(b.random);
  return b;
}

inline std::string bench_table(const BenchResult &b) {
  std::string out = spotkit::detail::csv_row({"method", "budget", "reps", "median", "iqr", "wins"});
  const auto reps = b.spot.best_y.size();
  out += spotkit::detail::csv_row({"spot", std::to_string(b.budget), std::to_string(reps),
                                   spotkit::detail::shortest(b.spot.median),
                                   spotkit::detail::shortest(b.spot.iqr),
                                   std::to_string(b.spot_wins)});
  out += spotkit::detail::csv_row({"random", std::to_string(b.budget), std::to_string(reps),
                                   spotkit::detail::shortest(b.random.median),
                                   spotkit::detail::shortest(b.random.iqr),
                                   std::to_string(reps - b.spot_wins)});
  return out;
}

inline int cmd_bench(const fs::path &config_path, std::size_t reps,
                     const std::optional<fs::path> &out = std::nullopt, const Overrides &o = {},
                     std::ostream &log = std::cout, std::ostream &err = std::cerr) {
  ExperimentConfig c;
  SearchSpace space;
  try {
    c = load_experiment(config_path);
    apply_overrides(c, o);
    space = build_space(c);
    if (reps < 1) throw ConfigError("repetitions must be >= 1");
    if (!std::isfinite(c.tuner.fun_evals))
      throw ConfigError("bench needs a finite tuner.fun_evals budget");
  } catch (const ConfigError &e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception &e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  try {
    const auto b = benchmark(make_objective(c), space, c.tuner, c.design, c.surrogate, reps, c.seed);
    const auto table = bench_table(b);
    log << table;
    if (out) {
      fs::create_directories(*out);
      spotkit::detail::atomic_write(*out / "bench.csv", table);
    }
    return kExitOk;
  } catch (const std::exception &e) {
    err << "runtime error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

} // namespace spotkit::experiment
