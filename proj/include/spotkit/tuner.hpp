#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "spotkit/design.hpp"
#include "spotkit/detail/io.hpp"
#include "spotkit/detail/random.hpp"
#include "spotkit/eval_result.hpp"
#include "spotkit/searchspace.hpp"
#include "spotkit/surrogate.hpp"

namespace spotkit {

class TunerError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct TunerConfig {
  double fun_evals = std::numeric_limits<double>::infinity();
  int fun_repeats = 1;
  double max_time = std::numeric_limits<double>::infinity(); // minutes
  bool noise = false;
  double tolerance_x = std::sqrt(std::numeric_limits<double>::epsilon());
  std::string infill_criterion = "y";
  int n_points = 1;
  std::uint64_t seed = 123;
  int infill_budget = 1000; // surrogate predictions per proposal

  void validate() const {
    if (!(fun_evals > 0)) throw TunerError("fun_evals must be positive");
    if (fun_repeats < 1) throw TunerError("fun_repeats must be >= 1");
    if (!(max_time > 0)) throw TunerError("max_time must be positive");
    if (!(tolerance_x >= 0)) throw TunerError("tolerance_x must be >= 0");
    if (infill_criterion != "y")
      throw TunerError("unsupported infill criterion '" + infill_criterion + "'");
    if (n_points < 1) throw TunerError("n_points must be >= 1");
    if (infill_budget < 4) throw TunerError("infill_budget must be >= 4");
  }
};

enum class Phase { Initial, Sequential, Random };

inline std::string to_string(Phase p) {
  switch (p) {
  case Phase::Initial: return "initial";
  case Phase::Sequential: return "sequential";
  case Phase::Random: return "random";
  }
  return "?";
}

inline Phase parse_phase(std::string_view s) {
  if (s == "initial") return Phase::Initial;
  if (s == "sequential") return Phase::Sequential;
  if (s == "random") return Phase::Random;
  throw TunerError("unknown phase '" + std::string(s) + "'");
}

struct HistoryRecord {
  int iteration = 0; // 1-based evaluation count
  double elapsed = 0.0; // seconds since the run started
  double y = 0.0;
  double metric = std::numeric_limits<double>::quiet_NaN();
  json config;
  Phase phase = Phase::Initial;
  bool ok = true;
  std::string error;
};

struct RunState {
  std::vector<std::vector<double>> X; // full internal vectors, spec order
  std::vector<double> y;
  std::vector<double> metrics;
  std::size_t best_index = 0;
  std::vector<HistoryRecord> history;
  std::size_t n_initial = 0; // planned size of the initial phase
  int sequential_iterations = 0;
  double elapsed = 0.0;

  bool empty() const { return y.empty(); }
  std::size_t size() const { return y.size(); }
};

using Objective = std::function<EvalResult(const Config &)>;
using Clock = std::function<double()>; // seconds, monotone

struct RunOptions {
  Clock clock;                                         // default: steady clock
  std::function<void(const RunState &)> on_eval;       // after every evaluation
  std::optional<std::size_t> stop_after;               // evaluations in this call
  const std::atomic<bool> *stop_flag = nullptr;
};

namespace detail {

inline Clock steady_clock_seconds() {
  const auto start = std::chrono::steady_clock::now();
  return [start] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  };
}

inline double max_norm_distance(std::span<const double> a, std::span<const double> b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

inline bool is_duplicate(std::span<const double> x, const std::vector<std::vector<double>> &rows,
                         double tol) {
  for (const auto &r : rows)
    if (max_norm_distance(x, r) <= tol) return true;
  return false;
}

/// Loss recorded for a failed evaluation: ten times the largest finite
/// observation (shifted when that is not positive), 1e12 without data.
inline double worst_sentinel(std::span<const double> y) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : y)
    if (std::isfinite(v)) mx = std::max(mx, v);
  if (!std::isfinite(mx)) return 1e12;
  if (mx > 0) return 10.0 * mx;
  return mx + 10.0 * std::max(1.0, std::abs(mx));
}

inline std::vector<double> random_internal(const SearchSpace &space, Rng &rng) {
  std::vector<double> u(space.active_dims());
  for (auto &v : u) v = unit_uniform(rng);
  return unit_to_internal(space, u);
}

inline std::vector<double> project(std::span<const double> x,
                                   std::span<const std::size_t> active) {
  std::vector<double> out;
  out.reserve(active.size());
  for (auto i : active) out.push_back(x[i]);
  return out;
}

/// Bounded Nelder-Mead: coordinates are clamped into [lo, hi] before each
/// evaluation. Stops after `budget` evaluations.
template <typename F>
std::pair<std::vector<double>, double> nelder_mead(F &&f, std::vector<double> x0,
                                                   const std::vector<double> &lo,
                                                   const std::vector<double> &hi, int budget) {
  const std::size_t d = x0.size();
  int used = 0;
  auto clamp = [&](std::vector<double> x) {
    for (std::size_t k = 0; k < d; ++k) x[k] = std::clamp(x[k], lo[k], hi[k]);
    return x;
  };
  auto eval = [&](const std::vector<double> &x) {
    ++used;
    return f(x);
  };
  std::vector<std::vector<double>> simplex{clamp(x0)};
  for (std::size_t k = 0; k < d; ++k) {
    auto x = simplex[0];
    const double step = 0.1 * (hi[k] - lo[k]);
    x[k] = x[k] + step <= hi[k] ? x[k] + step : x[k] - step;
    simplex.push_back(clamp(x));
  }
  std::vector<double> fv;
  for (const auto &x : simplex) fv.push_back(eval(x));

  std::vector<std::size_t> order(d + 1);
  while (used + 2 <= budget) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return fv[a] < fv[b]; });
    const auto best = order.front(), worst = order.back(), second = order[d - 1];
    std::vector<double> centroid(d, 0.0);
    for (std::size_t i = 0; i + 1 < order.size(); ++i)
      for (std::size_t k = 0; k < d; ++k) centroid[k] += simplex[order[i]][k] / static_cast<double>(d);
    auto along = [&](double t) {
      std::vector<double> x(d);
      for (std::size_t k = 0; k < d; ++k)
        x[k] = centroid[k] + t * (simplex[worst][k] - centroid[k]);
      return clamp(x);
    };
    auto xr = along(-1.0);
    const double fr = eval(xr);
    if (fr < fv[best]) {
      auto xe = along(-2.0);
      const double fe = eval(xe);
      if (fe < fr) {
        simplex[worst] = xe;
        fv[worst] = fe;
      } else {
        simplex[worst] = xr;
        fv[worst] = fr;
      }
    } else if (fr < fv[second]) {
      simplex[worst] = xr;
      fv[worst] = fr;
    } else {
      auto xc = fr < fv[worst] ? along(-0.5) : along(0.5);
      const double fc = eval(xc);
      if (fc < std::min(fr, fv[worst])) {
        simplex[worst] = xc;
        fv[worst] = fc;
      } else {
        for (std::size_t i = 0; i < simplex.size(); ++i) {
          if (i == best) continue;
          for (std::size_t k = 0; k < d; ++k)
            simplex[i][k] = simplex[best][k] + 0.5 * (simplex[i][k] - simplex[best][k]);
          if (used >= budget) break;
          fv[i] = eval(simplex[i]);
        }
      }
    }
  }
  const auto it = std::min_element(fv.begin(), fv.end());
  return {simplex[static_cast<std::size_t>(it - fv.begin())], *it};
}

inline void update_best(RunState &s) {
  std::size_t b = 0;
  for (std::size_t i = 1; i < s.y.size(); ++i)
    if (s.y[i] < s.y[b]) b = i;
  s.best_index = b;
}

} // namespace detail

/// Proposes `n_points` internal vectors minimizing the surrogate mean.
/// Uniform probes take half the budget; the best probes seed bounded
/// Nelder-Mead refinements on the continuous relaxation, and integral
/// dimensions are rounded afterwards.
inline std::vector<std::vector<double>>
suggest_next(const RunState &state, const KrigingModel &model, const SearchSpace &space,
             int n_points, int budget, std::uint64_t seed,
             double tolerance_x = std::sqrt(std::numeric_limits<double>::epsilon())) {
  const auto active = space.active_indices();
  if (active.empty()) throw TunerError("search space has no active dimension");
  if (model.dims() != active.size()) throw TunerError("model dimension does not match space");
  const std::size_t d = active.size();
  std::vector<double> lo, hi;
  for (auto i : active) {
    lo.push_back(space[i].lower);
    hi.push_back(space[i].upper);
  }
  auto mean = [&](const std::vector<double> &z) { return predict(model, z).mean; };

  detail::Rng rng(seed);
  const int n_probe = std::max(1, budget / 2);
  std::vector<std::pair<double, std::vector<double>>> probes;
  if (!state.empty()) {
    auto z = detail::project(state.X[state.best_index], active);
    probes.emplace_back(mean(z), z);
  }
  while (static_cast<int>(probes.size()) < n_probe) {
    std::vector<double> z(d);
    for (std::size_t k = 0; k < d; ++k) z[k] = detail::uniform(rng, lo[k], hi[k]);
    probes.emplace_back(mean(z), std::move(z));
  }
  std::stable_sort(probes.begin(), probes.end(),
                   [](const auto &a, const auto &b) { return a.first < b.first; });

  const auto fixed_base = space.default_internal();
  auto expand = [&](const std::vector<double> &z) {
    std::vector<double> x = state.empty() ? fixed_base : state.X.front();
    for (std::size_t i = 0; i < space.size(); ++i)
      if (space[i].is_fixed()) x[i] = space[i].lower;
    for (std::size_t k = 0; k < d; ++k) x[active[k]] = z[k];
    snap_to_lattice(space, x);
    return x;
  };

  const int refine_budget = std::max(2 * static_cast<int>(d) + 4,
                                     (budget - n_probe) / std::max(1, n_points));
  std::vector<std::vector<double>> out;
  std::size_t next_probe = 0;
  while (static_cast<int>(out.size()) < n_points) {
    std::vector<double> x;
    if (next_probe < probes.size()) {
      auto [z, fz] = detail::nelder_mead(mean, probes[next_probe++].second, lo, hi, refine_budget);
      x = expand(z);
    } else {
      x = detail::random_internal(space, rng);
    }
    for (int attempt = 0; attempt < 100 && detail::is_duplicate(x, out, tolerance_x); ++attempt)
      x = detail::random_internal(space, rng);
    out.push_back(std::move(x));
  }
  return out;
}

/// Earliest argmin of y, decoded to natural units.
inline std::pair<Config, double> best(const RunState &state, const SearchSpace &space) {
  if (state.empty()) throw TunerError("best: empty run state");
  std::size_t b = 0;
  for (std::size_t i = 1; i < state.y.size(); ++i)
    if (state.y[i] < state.y[b]) b = i;
  return {from_internal(space, state.X[b]), state.y[b]};
}

namespace detail {

struct Evaluator {
  const Objective &objective;
  const SearchSpace &space;
  RunState &state;
  RunOptions &options;
  double elapsed_base;
  std::size_t evaluated_here = 0;

  double now() const { return elapsed_base + options.clock(); }

  bool interrupted() const {
    if (options.stop_after && evaluated_here >= *options.stop_after) return true;
    return options.stop_flag && options.stop_flag->load();
  }

  void operator()(const std::vector<double> &x, Phase phase) {
    const Config config = from_internal(space, x);
    EvalResult r;
    try {
      r = objective(config);
    } catch (const std::exception &e) {
      r = EvalResult::failure(e.what());
    }
    const bool ok = r.ok && std::isfinite(r.loss);
    HistoryRecord h;
    h.y = ok ? r.loss : worst_sentinel(state.y);
    h.metric = ok ? r.metric : std::numeric_limits<double>::quiet_NaN();
    h.ok = ok;
    h.error = ok ? std::string() : (r.error.empty() ? "non-finite loss" : r.error);
    h.config = to_json(config);
    h.phase = phase;
    h.iteration = static_cast<int>(state.y.size()) + 1;
    state.X.push_back(x);
    state.y.push_back(h.y);
    state.metrics.push_back(h.metric);
    h.elapsed = now();
    state.elapsed = h.elapsed;
    state.history.push_back(std::move(h));
    update_best(state);
    ++evaluated_here;
    if (options.on_eval) options.on_eval(state);
  }
};

/// Initial-phase points: X_start (when given) followed by the design rows.
inline std::vector<std::vector<double>> initial_points(const SearchSpace &space,
                                                       const DesignControl &design,
                                                       const TunerConfig &tuner,
                                                       const std::optional<Config> &x_start) {
  std::vector<std::vector<double>> pts;
  if (x_start) {
    auto x = to_internal(space, *x_start);
    snap_to_lattice(space, x);
    pts.push_back(std::move(x));
  }
  for (const auto &u : latin_hypercube(design, static_cast<int>(space.active_dims())))
    pts.push_back(unit_to_internal(space, u));

  // Repeated rows are intentional; otherwise lattice collisions get fresh
  // random replacements.
  if (design.repeats == 1 && tuner.fun_repeats == 1 && tuner.tolerance_x > 0) {
    Rng rng(derive_seed(tuner.seed, 0x1d1));
    std::vector<std::vector<double>> kept;
    for (auto &x : pts) {
      for (int attempt = 0; attempt < 100 && is_duplicate(x, kept, tuner.tolerance_x); ++attempt)
        x = random_internal(space, rng);
      kept.push_back(x);
    }
    pts = std::move(kept);
  }
  return pts;
}

} // namespace detail

/// The sequential loop. Passing a non-empty `state` resumes it: evaluated
/// initial points are skipped and the loop continues under the same budgets.
inline RunState run(const Objective &objective, const SearchSpace &space,
                    const TunerConfig &tuner, const DesignControl &design,
                    const SurrogateControl &surrogate_control,
                    const std::optional<Config> &x_start = std::nullopt,
                    RunOptions options = {}, RunState state = {}) {
  tuner.validate();
  const auto active = space.active_indices();
  if (active.empty()) throw TunerError("search space has no active dimension");
  if (!options.clock) options.clock = detail::steady_clock_seconds();

  detail::Evaluator eval{objective, space, state, options, state.elapsed};
  const auto initial = detail::initial_points(space, design, tuner, x_start);
  state.n_initial = initial.size();

  for (std::size_t i = state.size(); i < initial.size(); ++i) {
    if (eval.interrupted()) return state;
    eval(initial[i], Phase::Initial);
  }

  const double max_seconds = tuner.max_time * 60.0;
  auto budget_left = [&] {
    return static_cast<double>(state.size()) < tuner.fun_evals && eval.now() < max_seconds;
  };

  SurrogateControl sc = surrogate_control;
  sc.noise = sc.noise || tuner.noise || tuner.fun_repeats > 1 || design.repeats > 1;
  while (budget_left() && !eval.interrupted()) {
    const int iter = state.sequential_iterations + 1;
    std::vector<std::vector<double>> Z;
    Z.reserve(state.size());
    for (const auto &x : state.X) Z.push_back(detail::project(x, active));
    const auto model = fit(Z, state.y, sc, detail::derive_seed(tuner.seed, 0x5000 + iter));
    auto cands = suggest_next(state, model, space, tuner.n_points, tuner.infill_budget,
                              detail::derive_seed(tuner.seed, 0x6000 + iter), tuner.tolerance_x);
    if (tuner.fun_repeats == 1 && tuner.tolerance_x > 0) {
      detail::Rng rng(detail::derive_seed(tuner.seed, 0x7000 + iter));
      for (std::size_t c = 0; c < cands.size(); ++c) {
        auto seen = state.X;
        seen.insert(seen.end(), cands.begin(), cands.begin() + static_cast<long>(c));
        for (int attempt = 0;
             attempt < 100 && detail::is_duplicate(cands[c], seen, tuner.tolerance_x); ++attempt)
          cands[c] = detail::random_internal(space, rng);
      }
    }
    state.sequential_iterations = iter;
    for (const auto &x : cands)
      for (int r = 0; r < tuner.fun_repeats; ++r) {
        if (!budget_left() || eval.interrupted()) return state;
        eval(x, Phase::Sequential);
      }
  }
  return state;
}

/// Baseline: `budget` uniform random configurations.
inline RunState random_search(const Objective &objective, const SearchSpace &space,
                              std::size_t budget, std::uint64_t seed, RunOptions options = {}) {
  if (space.active_dims() == 0) throw TunerError("search space has no active dimension");
  if (!options.clock) options.clock = detail::steady_clock_seconds();
  RunState state;
  detail::Evaluator eval{objective, space, state, options, 0.0};
  detail::Rng rng(seed);
  for (std::size_t i = 0; i < budget; ++i) eval(detail::random_internal(space, rng), Phase::Random);
  return state;
}

// --- persistence ----------------------------------------------------------

inline json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline double number_from(const json &j) {
  return j.is_number() ? j.get<double>() : std::numeric_limits<double>::quiet_NaN();
}

inline json to_json(const RunState &s) {
  json j;
  j["format"] = "spotkit-run-state";
  j["X"] = s.X;
  j["y"] = s.y;
  json m = json::array();
  for (double v : s.metrics) m.push_back(number_or_null(v));
  j["metrics"] = m;
  j["best_index"] = s.best_index;
  j["n_initial"] = s.n_initial;
  j["sequential_iterations"] = s.sequential_iterations;
  j["elapsed"] = s.elapsed;
  json h = json::array();
  for (const auto &r : s.history)
    h.push_back({{"iteration", r.iteration},
                 {"elapsed", r.elapsed},
                 {"y", r.y},
                 {"metric", number_or_null(r.metric)},
                 {"config", r.config},
                 {"phase", to_string(r.phase)},
                 {"ok", r.ok},
                 {"error", r.error}});
  j["history"] = h;
  return j;
}

inline RunState run_state_from_json(const json &j) {
  try {
    if (j.at("format") != "spotkit-run-state") throw TunerError("not a run state document");
    RunState s;
    s.X = j.at("X").get<std::vector<std::vector<double>>>();
    s.y = j.at("y").get<std::vector<double>>();
    for (const auto &v : j.at("metrics")) s.metrics.push_back(number_from(v));
    s.best_index = j.at("best_index").get<std::size_t>();
    s.n_initial = j.at("n_initial").get<std::size_t>();
    s.sequential_iterations = j.at("sequential_iterations").get<int>();
    s.elapsed = j.at("elapsed").get<double>();
    for (const auto &r : j.at("history")) {
      HistoryRecord h;
      h.iteration = r.at("iteration").get<int>();
      h.elapsed = r.at("elapsed").get<double>();
      h.y = r.at("y").get<double>();
      h.metric = number_from(r.at("metric"));
      h.config = r.at("config");
      h.phase = parse_phase(r.at("phase").get<std::string>());
      h.ok = r.at("ok").get<bool>();
      h.error = r.at("error").get<std::string>();
      s.history.push_back(std::move(h));
    }
    if (s.X.size() != s.y.size() || s.metrics.size() != s.y.size() ||
        s.history.size() != s.y.size())
      throw TunerError("run state arrays have inconsistent lengths");
    if (!s.y.empty() && s.best_index >= s.y.size()) throw TunerError("best_index out of range");
    return s;
  } catch (const json::exception &e) {
    throw TunerError(std::string("malformed run state: ") + e.what());
  }
}

/// iteration,elapsed_seconds,loss,metric,config
inline std::string events_csv(const RunState &s) {
  std::string out =
      detail::csv_row({"iteration", "elapsed_seconds", "loss", "metric", "config"});
  for (const auto &h : s.history)
    out += detail::csv_row({std::to_string(h.iteration), detail::shortest(h.elapsed),
                            detail::shortest(h.y),
                            std::isfinite(h.metric) ? detail::shortest(h.metric) : "",
                            h.config.dump()});
  return out;
}

} // namespace spotkit
