#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "spotkit/experiment.hpp"

namespace ex = spotkit::experiment;

int main(int argc, char **argv) {
  CLI::App app{"Sequential parameter optimization for hyperparameter tuning"};
  app.require_subcommand(1);

  std::string config, out;
  std::optional<std::uint64_t> seed;
  std::optional<double> max_time, fun_evals;
  std::optional<std::size_t> stop_after;
  bool logical_clock = false;
  std::size_t reps = 20;

  auto *tune = app.add_subcommand("tune", "run a tuning experiment");
  tune->add_option("--config", config, "experiment config (JSON)")->required();
  tune->add_option("--out", out, "output directory")->required();
  tune->add_option("--seed", seed, "seed (overrides config and SPOTKIT_SEED)");
  tune->add_option("--max-time", max_time, "wall-time budget in minutes");
  tune->add_option("--fun-evals", fun_evals, "evaluation budget");
  tune->add_option("--stop-after", stop_after, "interrupt after N evaluations");
  tune->add_flag("--logical-clock", logical_clock,
                 "record elapsed time as 1 ms per clock reading (reproducible logs)");

  auto *resume = app.add_subcommand("resume", "continue an interrupted run");
  resume->add_option("--out", out, "output directory of the run")->required();
  resume->add_option("--stop-after", stop_after, "interrupt after N evaluations");
  resume->add_flag("--logical-clock", logical_clock, "see tune");

  auto *bench = app.add_subcommand("bench", "compare against random search");
  bench->add_option("--config", config, "experiment config (JSON)")->required();
  bench->add_option("--reps", reps, "repetitions (seeds)")->default_val(20);
  bench->add_option("--out", out, "directory for bench.csv");
  bench->add_option("--seed", seed, "first seed");
  bench->add_option("--fun-evals", fun_evals, "evaluation budget per method");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    return app.exit(e) == 0 ? 0 : ex::kExitConfig;
  }

  ex::Overrides o;
  o.seed = seed;
  o.max_time = max_time;
  o.fun_evals = fun_evals;
  o.stop_after = stop_after;
  if (logical_clock) o.clock = ex::logical_clock();

  if (tune->parsed()) return ex::cmd_tune(config, out, o);
  if (resume->parsed()) return ex::cmd_resume(out, o);
  std::optional<std::filesystem::path> bench_out;
  if (!out.empty()) bench_out = out;
  return ex::cmd_bench(config, reps, bench_out, o);
}
