#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "spotkit/detail/io.hpp"
#include "spotkit/tuner.hpp"

using namespace spotkit;

namespace {

SearchSpace floats(int d, double lo = -5.0, double hi = 5.0) {
  json dict;
  for (int i = 1; i <= d; ++i)
    dict["F"]["x" + std::to_string(i)] = {{"type", "float"}, {"default", 0.5 * (lo + hi)},
                                          {"transform", "None"}, {"lower", lo}, {"upper", hi}};
  return parse_hyper_dict(dict.dump(), "F");
}

EvalResult sphere(const Config &c) {
  double s = 0.0;
  for (const auto &[k, v] : c) s += as_double(v) * as_double(v);
  return EvalResult::success(s, 0.0);
}

// One tick per reading, so elapsed times do not depend on the machine.
Clock counter_clock() {
  auto t = std::make_shared<double>(0.0);
  return [t] { return *t += 1e-3; };
}

TunerConfig budget(double evals) {
  TunerConfig t;
  t.fun_evals = evals;
  t.seed = 42;
  return t;
}

SurrogateControl quick_surrogate() {
  SurrogateControl s;
  s.model_fun_evals = 2000;
  return s;
}

double best_y(const RunState &s) { return *std::min_element(s.y.begin(), s.y.end()); }

} // namespace

TEST(Run, SphereBeatsRandomSearchMedian) {
  const auto space = floats(2);
  DesignControl design;
  auto state = run(sphere, space, budget(50), design, quick_surrogate());
  ASSERT_EQ(state.size(), 50u);
  EXPECT_LT(best_y(state), 1e-2);

  std::vector<double> rnd;
  for (std::uint64_t s = 1; s <= 20; ++s) rnd.push_back(best_y(random_search(sphere, space, 50, s)));
  std::sort(rnd.begin(), rnd.end());
  const double median = 0.5 * (rnd[9] + rnd[10]);
  EXPECT_LE(best_y(state), median);
}

TEST(Run, BudgetEqualToDesignHasNoSequentialPhase) {
  const auto space = floats(3);
  DesignControl design;
  design.init_size = 8;
  auto state = run(sphere, space, budget(8), design, quick_surrogate());
  EXPECT_EQ(state.size(), 8u);
  EXPECT_EQ(state.sequential_iterations, 0);
  for (const auto &h : state.history) EXPECT_EQ(h.phase, Phase::Initial);
  EXPECT_EQ(state.y[state.best_index], best_y(state));
}

TEST(Run, StartPointComesFirst) {
  const auto space = floats(2);
  DesignControl design;
  design.init_size = 5;
  Config start{{"x1", 1.25}, {"x2", -0.5}};
  auto state = run(sphere, space, budget(7), design, quick_surrogate(), start);
  ASSERT_EQ(state.size(), 7u);
  EXPECT_EQ(state.n_initial, 6u);
  EXPECT_EQ(state.X[0], (std::vector<double>{1.25, -0.5}));
  EXPECT_EQ(state.history[5].phase, Phase::Initial);
  EXPECT_EQ(state.history[6].phase, Phase::Sequential);
}

TEST(Run, InvariantsHold) {
  const auto space = floats(3);
  DesignControl design;
  auto tuner = budget(30);
  auto state = run(sphere, space, tuner, design, quick_surrogate());
  ASSERT_EQ(state.X.size(), state.y.size());
  ASSERT_EQ(state.history.size(), state.y.size());
  double running = INFINITY;
  for (std::size_t i = 0; i < state.size(); ++i) {
    EXPECT_EQ(state.history[i].iteration, static_cast<int>(i) + 1);
    const double next = std::min(running, state.y[i]);
    EXPECT_LE(next, running);
    running = next;
    for (std::size_t k = 0; k < 3; ++k) {
      EXPECT_GE(state.X[i][k], space[k].lower);
      EXPECT_LE(state.X[i][k], space[k].upper);
    }
    for (std::size_t j = 0; j < i; ++j)
      EXPECT_GT(detail::max_norm_distance(state.X[i], state.X[j]), tuner.tolerance_x);
  }
  EXPECT_EQ(state.y[state.best_index], running);
}

TEST(Run, DuplicatesAreReplaced) {
  // A single integer dimension: the surrogate keeps pointing at the optimum.
  json dict;
  dict["I"]["n"] = {{"type", "int"}, {"default", 0}, {"transform", "None"},
                    {"lower", 0}, {"upper", 30}};
  const auto space = parse_hyper_dict(dict.dump(), "I");
  auto f = [](const Config &c) {
    const double n = as_double(c.at("n"));
    return EvalResult::success((n - 10) * (n - 10), 0.0);
  };
  DesignControl design;
  design.init_size = 5;
  auto state = run(f, space, budget(20), design, quick_surrogate());
  ASSERT_EQ(state.size(), 20u);
  for (std::size_t i = 0; i < state.size(); ++i)
    for (std::size_t j = 0; j < i; ++j) EXPECT_NE(state.X[i][0], state.X[j][0]);
  EXPECT_EQ(best_y(state), 0.0);
}

TEST(Run, FixedDimensionsNeverMove) {
  auto space = floats(3);
  space = modify_bounds(space, "x2", 1.5, 1.5);
  space = modify_bounds(space, "x3", -2.0, -2.0);
  ASSERT_EQ(space.active_dims(), 1u);
  DesignControl design;
  design.init_size = 5;
  auto state = run(sphere, space, budget(12), design, quick_surrogate());
  ASSERT_EQ(state.size(), 12u);
  for (const auto &x : state.X) {
    EXPECT_EQ(x[1], 1.5);
    EXPECT_EQ(x[2], -2.0);
  }
  EXPECT_LT(std::abs(state.X[state.best_index][0]), 0.1);
}

TEST(Run, NoActiveDimensionIsAnError) {
  auto space = floats(1);
  space = modify_bounds(space, "x1", 0.0, 0.0);
  EXPECT_THROW(run(sphere, space, budget(5), DesignControl{}, quick_surrogate()), TunerError);
}

TEST(Run, InvalidConfigRejected) {
  auto t = budget(5);
  t.n_points = 0;
  EXPECT_THROW(run(sphere, floats(2), t, DesignControl{}, quick_surrogate()), std::exception);
}

TEST(Run, ReproducibleUnderFixedSeed) {
  const auto space = floats(2);
  DesignControl design;
  RunOptions a, b;
  a.clock = counter_clock();
  b.clock = counter_clock();
  const auto s1 = run(sphere, space, budget(20), design, quick_surrogate(), std::nullopt, a);
  const auto s2 = run(sphere, space, budget(20), design, quick_surrogate(), std::nullopt, b);
  EXPECT_EQ(s1.X, s2.X);
  EXPECT_EQ(s1.y, s2.y);
  EXPECT_EQ(events_csv(s1), events_csv(s2));
  auto t = budget(20);
  t.seed = 43;
  const auto s3 = run(sphere, space, t, design, quick_surrogate());
  EXPECT_NE(s1.X, s3.X);
}

TEST(Run, ResumeMatchesOneShot) {
  const auto space = floats(2);
  DesignControl design;
  design.init_size = 6;
  const auto full = run(sphere, space, budget(16), design, quick_surrogate());

  RunOptions first;
  first.stop_after = 4; // inside the initial design
  auto part = run(sphere, space, budget(16), design, quick_surrogate(), std::nullopt, first);
  ASSERT_EQ(part.size(), 4u);
  RunOptions second;
  second.stop_after = 5;
  part = run(sphere, space, budget(16), design, quick_surrogate(), std::nullopt, second, part);
  ASSERT_EQ(part.size(), 9u);
  // Round-trip through JSON between sessions.
  part = run_state_from_json(json::parse(to_json(part).dump()));
  part = run(sphere, space, budget(16), design, quick_surrogate(), std::nullopt, {}, part);
  EXPECT_EQ(part.X, full.X);
  EXPECT_EQ(part.y, full.y);
  EXPECT_EQ(part.sequential_iterations, full.sequential_iterations);
}

TEST(Run, FailedEvaluationsGetWorstSentinel) {
  const auto space = floats(2);
  int calls = 0;
  auto f = [&](const Config &c) {
    ++calls;
    if (calls % 4 == 0) return EvalResult::failure("boom");
    if (calls % 7 == 0) throw std::runtime_error("thrown");
    return sphere(c);
  };
  DesignControl design;
  auto state = run(f, space, budget(25), design, quick_surrogate());
  ASSERT_EQ(state.size(), 25u);
  int failed = 0;
  for (std::size_t i = 0; i < state.size(); ++i) {
    EXPECT_TRUE(std::isfinite(state.y[i]));
    if (!state.history[i].ok) {
      ++failed;
      EXPECT_FALSE(state.history[i].error.empty());
      double mx = -INFINITY;
      for (std::size_t j = 0; j < i; ++j) mx = std::max(mx, state.y[j]);
      EXPECT_EQ(state.y[i], i == 0 ? 1e12 : 10.0 * mx);
    }
  }
  EXPECT_GE(failed, 6);
  EXPECT_TRUE(state.history[state.best_index].ok);
}

TEST(Run, WorstSentinelFormula) {
  EXPECT_EQ(detail::worst_sentinel(std::vector<double>{}), 1e12);
  EXPECT_EQ(detail::worst_sentinel(std::vector<double>{1.0, 2.5}), 25.0);
  // Non-positive maxima still produce a strictly larger value.
  EXPECT_GT(detail::worst_sentinel(std::vector<double>{-3.0, -1.0}), -1.0);
  EXPECT_GT(detail::worst_sentinel(std::vector<double>{0.0}), 0.0);
}

TEST(Run, InitialDesignIgnoresTimeLimit) {
  const auto space = floats(2);
  DesignControl design;
  auto t = budget(INFINITY);
  t.max_time = 1.0; // minutes
  RunOptions o;
  auto now = std::make_shared<double>(0.0);
  o.clock = [now] { return *now += 30.0; };
  auto state = run(sphere, space, t, design, quick_surrogate(), std::nullopt, o);
  EXPECT_EQ(state.size(), 10u);
  EXPECT_EQ(state.sequential_iterations, 0);
}

TEST(Suggest, QuadraticMinimumAgreesWithGridOracle) {
  const auto space = floats(1, 0.0, 1.0);
  RunState state;
  for (double x : {0.0, 0.15, 0.3, 0.45, 0.6, 0.75, 0.9, 1.0}) {
    state.X.push_back({x});
    state.y.push_back((x - 0.7) * (x - 0.7));
  }
  detail::update_best(state);
  const auto model = fit(state.X, state.y, SurrogateControl{}, 1);
  const auto cand = suggest_next(state, model, space, 1, 1000, 5);
  ASSERT_EQ(cand.size(), 1u);

  double grid_arg = 0.0, grid_min = INFINITY;
  for (int i = 0; i <= 10000; ++i) {
    const double x = i / 10000.0;
    const double m = predict(model, std::vector<double>{x}).mean;
    if (m < grid_min) {
      grid_min = m;
      grid_arg = x;
    }
  }
  EXPECT_NEAR(cand[0][0], grid_arg, 1e-3);
  EXPECT_NEAR(cand[0][0], 0.7, 0.05);
}

TEST(Suggest, SeveralPointsAreDistinct) {
  const auto space = floats(2);
  DesignControl design;
  auto state = run(sphere, space, budget(10), design, quick_surrogate());
  const auto model = fit(state.X, state.y, quick_surrogate(), 3);
  const auto cands = suggest_next(state, model, space, 3, 600, 9);
  ASSERT_EQ(cands.size(), 3u);
  const double tol = TunerConfig{}.tolerance_x;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < i; ++j)
      EXPECT_GT(detail::max_norm_distance(cands[i], cands[j]), tol);
}

TEST(Suggest, OnlyActiveDimensionVaries) {
  auto space = floats(3);
  space = modify_bounds(space, "x1", 2.0, 2.0);
  space = modify_bounds(space, "x3", 4.0, 4.0);
  RunState state;
  for (double v : {-4.0, -1.0, 0.5, 3.0, 4.5}) {
    state.X.push_back({2.0, v, 4.0});
    state.y.push_back(v * v);
  }
  detail::update_best(state);
  std::vector<std::vector<double>> Z;
  for (const auto &x : state.X) Z.push_back({x[1]});
  const auto model = fit(Z, state.y, SurrogateControl{}, 2);
  for (const auto &c : suggest_next(state, model, space, 4, 400, 1)) {
    EXPECT_EQ(c[0], 2.0);
    EXPECT_EQ(c[2], 4.0);
  }
}

TEST(Best, ArgminAndEarliestTie) {
  const auto space = floats(1);
  RunState s;
  s.X = {{1.0}, {2.0}, {3.0}};
  s.y = {3.0, 1.0, 2.0};
  auto [c, y] = best(s, space);
  EXPECT_EQ(y, 1.0);
  EXPECT_EQ(as_double(c.at("x1")), 2.0);
  s.X = {{-1.0}, {-2.0}};
  s.y = {1.0, 1.0};
  EXPECT_EQ(as_double(best(s, space).first.at("x1")), -1.0);
  EXPECT_THROW(best(RunState{}, space), TunerError);
}

TEST(Best, TunedNetworkVectorDecodes) {
  auto space = parse_hyper_dict(
      detail::read_file(std::string(SPOTKIT_SOURCE_DIR) + "/configs/torch_hyper_dict.json"),
      "Net_CIFAR10");
  space = modify_bounds(space, "epochs", 3, 4);
  space = modify_bounds(space, "k_folds", 0, 0);
  space = modify_bounds(space, "patience", 3, 3);
  space = modify_bounds(space, "sgd_momentum", 0.9, 0.9);
  RunState s;
  s.X = {space.default_internal(), {7, 3, 1.0, 4, 4, 0, 3, 3, 0.9}};
  s.y = {2.0, 1.0};
  const auto c = best(s, space).first;
  EXPECT_EQ(std::get<std::int64_t>(c.at("l1")), 128);
  EXPECT_EQ(std::get<std::int64_t>(c.at("l2")), 8);
  EXPECT_EQ(std::get<std::int64_t>(c.at("epochs")), 16);
}

TEST(Persistence, JsonRoundTrip) {
  const auto space = floats(2);
  int calls = 0;
  auto f = [&](const Config &c) {
    auto r = sphere(c);
    if (++calls == 3) r = EvalResult::failure("x");
    if (calls == 5) r.metric = std::nan("");
    return r;
  };
  RunOptions o;
  o.clock = counter_clock();
  auto state = run(f, space, budget(14), DesignControl{}, quick_surrogate(), std::nullopt, o);
  const auto j = to_json(state);
  EXPECT_EQ(j["format"], "spotkit-run-state");
  const auto back = run_state_from_json(json::parse(j.dump()));
  EXPECT_EQ(back.X, state.X);
  EXPECT_EQ(back.y, state.y);
  EXPECT_EQ(back.best_index, state.best_index);
  EXPECT_EQ(back.n_initial, state.n_initial);
  EXPECT_EQ(back.sequential_iterations, state.sequential_iterations);
  EXPECT_TRUE(std::isnan(back.metrics[2]));
  EXPECT_TRUE(std::isnan(back.metrics[4]));
  EXPECT_FALSE(back.history[2].ok);
  EXPECT_EQ(to_json(back), j);
  EXPECT_EQ(events_csv(back), events_csv(state));
  EXPECT_THROW(run_state_from_json(json{{"format", "other"}}), std::exception);
}

TEST(Persistence, EventsCsvShape) {
  RunOptions o;
  o.clock = counter_clock();
  auto state = run(sphere, floats(2), budget(12), DesignControl{}, quick_surrogate(),
                   std::nullopt, o);
  const auto csv = events_csv(state);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "iteration,elapsed_seconds,loss,metric,config");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 13);
}

TEST(Phases, NamesRoundTrip) {
  for (auto p : {Phase::Initial, Phase::Sequential, Phase::Random})
    EXPECT_EQ(parse_phase(to_string(p)), p);
  EXPECT_THROW(parse_phase("later"), std::exception);
}
