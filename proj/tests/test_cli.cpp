#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <sstream>
#include <sys/wait.h>

#include "spotkit/detail/io.hpp"
#include "spotkit/experiment.hpp"

using namespace spotkit;
namespace ex = spotkit::experiment;
namespace fs = std::filesystem;

namespace {

const fs::path kConfigs = fs::path(SPOTKIT_SOURCE_DIR) / "configs";

fs::path fresh_dir(const std::string &name) {
  const auto p = fs::temp_directory_path() / ("spotkit_cli_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path &p) { return spotkit::detail::read_file(p); }

// Writes a copy of `base` with `patch` merged in; relative paths keep
// resolving against the configs directory.
fs::path patched_config(const fs::path &dir, const std::string &base, const json &patch) {
  auto doc = json::parse(slurp(kConfigs / base));
  doc["hyper_dict"] = (kConfigs / doc["hyper_dict"].get<std::string>()).string();
  doc.merge_patch(patch);
  fs::create_directories(dir);
  const auto path = dir / "config.json";
  spotkit::detail::atomic_write(path, doc.dump(2));
  return path;
}

ex::Overrides logical() {
  ex::Overrides o;
  o.clock = ex::logical_clock();
  return o;
}

int shell(const std::string &cmd) {
  const int status = std::system((cmd + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

const std::string kCli = SPOTKIT_CLI;

} // namespace

TEST(Tune, ToyNetworkWritesAllOutputs) {
  const auto out = fresh_dir("toy");
  std::ostringstream log, err;
  ASSERT_EQ(ex::cmd_tune(kConfigs / "toynet.json", out, logical(), log, err), ex::kExitOk)
      << err.str();
  for (const char *f : {"run_state.json", "events.csv", "results.csv", "results.txt",
                        "importance.csv", "progress.csv", "parallel.csv", "experiment.json"})
    EXPECT_TRUE(fs::exists(out / f)) << f;
  bool contour = false;
  for (const auto &e : fs::directory_iterator(out)) {
    contour = contour || e.path().filename().string().rfind("contour_", 0) == 0;
    EXPECT_NE(e.path().extension(), ".tmp") << "leftover temporary " << e.path();
  }
  EXPECT_TRUE(contour);
  const auto state = run_state_from_json(json::parse(slurp(out / "run_state.json")));
  EXPECT_EQ(state.size(), 31u);
  EXPECT_EQ(state.n_initial, 11u);
  // The design table preview is printed before the first evaluation.
  const auto text = log.str();
  EXPECT_LT(text.find("name"), text.find("eval 1 "));
}

TEST(Tune, MissingHyperDictIsConfigError) {
  const auto dir = fresh_dir("missing");
  const auto cfg = patched_config(dir, "sphere.json", {{"hyper_dict", "no_such_dict.json"}});
  std::ostringstream log, err;
  EXPECT_EQ(ex::cmd_tune(cfg, dir / "out", {}, log, err), ex::kExitConfig);
  EXPECT_NE(err.str().find("no_such_dict.json"), std::string::npos) << err.str();
  EXPECT_EQ(ex::cmd_tune(dir / "absent.json", dir / "out", {}, log, err), ex::kExitConfig);
}

TEST(Tune, InvalidControlBlocksAreConfigErrors) {
  const auto dir = fresh_dir("invalid");
  std::ostringstream log, err;
  auto cfg = patched_config(dir, "sphere.json", {{"tuner", {{"n_points", 0}}}});
  EXPECT_EQ(ex::cmd_tune(cfg, dir / "a", {}, log, err), ex::kExitConfig);
  cfg = patched_config(dir, "sphere.json", {{"model", "NoSuchModel"}});
  EXPECT_EQ(ex::cmd_tune(cfg, dir / "b", {}, log, err), ex::kExitConfig);
  cfg = patched_config(dir, "sphere.json", {{"eval", "train_sometimes"}});
  EXPECT_EQ(ex::cmd_tune(cfg, dir / "c", {}, log, err), ex::kExitConfig);
  spotkit::detail::atomic_write(dir / "broken.json", "{ not json");
  EXPECT_EQ(ex::cmd_tune(dir / "broken.json", dir / "d", {}, log, err), ex::kExitConfig);
}

TEST(Tune, SameSeedSameResultsTable) {
  const auto a = fresh_dir("seed_a"), b = fresh_dir("seed_b");
  std::ostringstream log, err;
  ASSERT_EQ(ex::cmd_tune(kConfigs / "mixed.json", a, logical(), log, err), 0) << err.str();
  ASSERT_EQ(ex::cmd_tune(kConfigs / "mixed.json", b, logical(), log, err), 0) << err.str();
  EXPECT_EQ(slurp(a / "results.csv"), slurp(b / "results.csv"));
  EXPECT_EQ(slurp(a / "events.csv"), slurp(b / "events.csv"));
}

TEST(Tune, SeedPrecedence) {
  const auto env = fresh_dir("env"), flag = fresh_dir("flag"), both = fresh_dir("both");
  std::ostringstream log, err;
  ::setenv("SPOTKIT_SEED", "777", 1);
  ASSERT_EQ(ex::cmd_tune(kConfigs / "sphere.json", env, logical(), log, err), 0);
  auto o = logical();
  o.seed = 5;
  ASSERT_EQ(ex::cmd_tune(kConfigs / "sphere.json", both, o, log, err), 0);
  ::unsetenv("SPOTKIT_SEED");
  auto o2 = logical();
  o2.seed = 777;
  ASSERT_EQ(ex::cmd_tune(kConfigs / "sphere.json", flag, o2, log, err), 0);
  EXPECT_EQ(slurp(env / "events.csv"), slurp(flag / "events.csv"));
  EXPECT_NE(slurp(both / "events.csv"), slurp(flag / "events.csv"));
  EXPECT_EQ(json::parse(slurp(both / "experiment.json"))["seed"], 5);
}

TEST(Resume, InterruptedRunMatchesOneShot) {
  const auto once = fresh_dir("once"), split = fresh_dir("split");
  std::ostringstream log, err;
  ASSERT_EQ(ex::cmd_tune(kConfigs / "sphere.json", once, logical(), log, err), 0);
  auto o = logical();
  o.stop_after = 10; // end of the initial design
  ASSERT_EQ(ex::cmd_tune(kConfigs / "sphere.json", split, o, log, err), 0);
  const auto partial = run_state_from_json(json::parse(slurp(split / "run_state.json")));
  ASSERT_EQ(partial.size(), 10u);
  o.stop_after = 7;
  ASSERT_EQ(ex::cmd_resume(split, o, log, err), 0) << err.str();
  ASSERT_EQ(ex::cmd_resume(split, logical(), log, err), 0) << err.str();
  const auto a = run_state_from_json(json::parse(slurp(once / "run_state.json")));
  const auto b = run_state_from_json(json::parse(slurp(split / "run_state.json")));
  EXPECT_EQ(b.size(), a.size());
  EXPECT_EQ(b.X, a.X);
  EXPECT_EQ(b.y, a.y);
  // The persisted prefix survives unchanged.
  for (std::size_t i = 0; i < partial.size(); ++i) EXPECT_EQ(b.X[i], partial.X[i]);
  EXPECT_EQ(slurp(once / "results.csv"), slurp(split / "results.csv"));
}

TEST(Resume, CompletedRunIsNoOp) {
  const auto dir = fresh_dir("done");
  std::ostringstream log, err;
  ASSERT_EQ(ex::cmd_tune(kConfigs / "sphere.json", dir, logical(), log, err), 0);
  const auto before = slurp(dir / "run_state.json");
  std::ostringstream log2;
  EXPECT_EQ(ex::cmd_resume(dir, logical(), log2, err), 0);
  EXPECT_NE(log2.str().find("nothing to resume"), std::string::npos);
  const auto after = run_state_from_json(json::parse(slurp(dir / "run_state.json")));
  EXPECT_EQ(after.y, run_state_from_json(json::parse(before)).y);
}

TEST(Resume, MissingOrCorruptState) {
  std::ostringstream log, err;
  EXPECT_EQ(ex::cmd_resume(fresh_dir("nowhere"), {}, log, err), ex::kExitConfig);
  const auto dir = fresh_dir("corrupt");
  auto o = logical();
  o.stop_after = 3;
  ASSERT_EQ(ex::cmd_tune(kConfigs / "sphere.json", dir, o, log, err), 0);
  spotkit::detail::atomic_write(dir / "run_state.json", "{\"format\": \"spotkit-run-state\", \"X\": [");
  EXPECT_EQ(ex::cmd_resume(dir, {}, log, err), ex::kExitConfig);
  spotkit::detail::atomic_write(dir / "run_state.json", "{\"format\": \"something-else\"}");
  EXPECT_EQ(ex::cmd_resume(dir, {}, log, err), ex::kExitConfig);
}

TEST(Bench, SingleRepHasZeroIqrAndEqualBudgets) {
  auto c = ex::load_experiment(kConfigs / "sphere.json");
  const auto space = ex::build_space(c);
  c.tuner.fun_evals = 15;
  const auto b = ex::benchmark(ex::builtin::sphere, space, c.tuner, c.design, c.surrogate, 1, 3);
  EXPECT_EQ(b.spot.iqr, 0.0);
  EXPECT_EQ(b.random.iqr, 0.0);
  EXPECT_EQ(b.budget, 15u);
  EXPECT_EQ(b.spot.evaluations, std::vector<std::size_t>{15});
  EXPECT_EQ(b.random.evaluations, std::vector<std::size_t>{15});
  EXPECT_EQ(b.spot.median, b.spot.best_y[0]);
}

TEST(Bench, SphereSpotMedianBeatsRandom) {
  const auto out = fresh_dir("bench");
  std::ostringstream log, err;
  ASSERT_EQ(ex::cmd_bench(kConfigs / "sphere.json", 20, out, {}, log, err), 0) << err.str();
  const auto table = slurp(out / "bench.csv");
  EXPECT_EQ(table, log.str());
  std::istringstream in(table);
  std::string header, spot, rnd;
  std::getline(in, header);
  std::getline(in, spot);
  std::getline(in, rnd);
  EXPECT_EQ(header, "method,budget,reps,median,iqr,wins");
  auto field = [](const std::string &row, int k) {
    std::istringstream r(row);
    std::string f;
    for (int i = 0; i <= k; ++i) std::getline(r, f, ',');
    return f;
  };
  EXPECT_EQ(field(spot, 1), "40");
  EXPECT_EQ(field(rnd, 1), "40");
  EXPECT_LE(std::stod(field(spot, 3)), std::stod(field(rnd, 3)));
}

TEST(Bench, RejectsBadRepetitions) {
  std::ostringstream log, err;
  EXPECT_EQ(ex::cmd_bench(kConfigs / "sphere.json", 0, std::nullopt, {}, log, err),
            ex::kExitConfig);
  const auto dir = fresh_dir("bench_inf");
  const auto cfg = patched_config(dir, "sphere.json", {{"tuner", {{"fun_evals", "inf"}}}});
  EXPECT_EQ(ex::cmd_bench(cfg, 2, std::nullopt, {}, log, err), ex::kExitConfig);
}

TEST(Quantile, LinearInterpolation) {
  EXPECT_EQ(ex::quantile({3.0}, 0.25), 3.0);
  EXPECT_EQ(ex::quantile({1, 2, 3, 4, 5}, 0.5), 3.0);
  EXPECT_EQ(ex::quantile({1, 2, 3, 4}, 0.5), 2.5);
  EXPECT_EQ(ex::quantile({4, 1, 3, 2}, 0.25), 1.75);
}

TEST(Binary, ExitCodes) {
  const auto dir = fresh_dir("binary");
  EXPECT_EQ(shell(kCli + " tune --config " + (kConfigs / "sphere.json").string() + " --out " +
                  (dir / "ok").string() + " --fun-evals 12 --logical-clock"),
            0);
  EXPECT_TRUE(fs::exists(dir / "ok" / "results.csv"));
  EXPECT_EQ(shell(kCli + " resume --out " + (dir / "ok").string()), 0);
  EXPECT_EQ(shell(kCli + " resume --out " + (dir / "nothing").string()), 1);
  EXPECT_EQ(shell(kCli + " tune --config " + (dir / "none.json").string() + " --out " +
                  (dir / "x").string()),
            1);
  EXPECT_EQ(shell(kCli + " tune --out " + (dir / "x").string()), 1); // missing --config
  EXPECT_EQ(shell(kCli + " frobnicate"), 1);
  const auto failing = patched_config(dir, "sphere.json",
                                      {{"objective", "external:exit 1"}, {"hyper_dict", 3}});
  EXPECT_EQ(shell(kCli + " tune --config " + failing.string() + " --out " + (dir / "y").string()),
            1);
}

TEST(Binary, FailingExternalObjectiveStillCompletes) {
  // Every evaluation fails; the run records sentinels and still exits 0.
  const auto dir = fresh_dir("external");
  const auto cfg = patched_config(dir, "sphere.json",
                                  {{"objective", "external:exit 3"},
                                   {"tuner", {{"fun_evals", 12}}}});
  std::ostringstream log, err;
  EXPECT_EQ(ex::cmd_tune(cfg, dir / "out", logical(), log, err), 0) << err.str();
  const auto state = run_state_from_json(json::parse(slurp(dir / "out" / "run_state.json")));
  EXPECT_EQ(state.size(), 12u);
  for (const auto &h : state.history) EXPECT_FALSE(h.ok);
}

TEST(Binary, ExternalObjectiveRoundTrip) {
  const auto dir = fresh_dir("external_ok");
  const std::string cmd =
      "external:python3 -c 'import json,sys; c=json.loads(sys.stdin.readline())[\"config\"]; "
      "print(json.dumps({\"loss\": sum(v*v for v in c.values()), \"metric\": 0}))'";
  const auto cfg = patched_config(dir, "sphere.json",
                                  {{"objective", cmd}, {"tuner", {{"fun_evals", 12}}}});
  std::ostringstream log, err;
  ASSERT_EQ(ex::cmd_tune(cfg, dir / "out", logical(), log, err), 0) << err.str();
  const auto state = run_state_from_json(json::parse(slurp(dir / "out" / "run_state.json")));
  const auto space = ex::build_space(ex::load_experiment(cfg));
  for (std::size_t i = 0; i < state.size(); ++i) {
    ASSERT_TRUE(state.history[i].ok) << state.history[i].error;
    EXPECT_NEAR(state.y[i], ex::builtin::sphere(from_internal(space, state.X[i])).loss, 1e-9);
  }
}
