#pragma once

#include <chrono>
#include <cmath>
#include <csignal>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <fcntl.h>
#include <poll.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include "spotkit/detail/io.hpp"
#include "spotkit/detail/random.hpp"
#include "spotkit/eval_result.hpp"
#include "spotkit/optim.hpp"
#include "spotkit/searchspace.hpp"
#include "spotkit/toynet.hpp"

namespace spotkit::harness {

using toynet::Dataset;
using toynet::ToyNet;
using Batches = std::vector<std::vector<std::size_t>>;

class EvalFailure : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

enum class EvalSetting { TrainHoldOut, TestHoldOut, TrainCV, TestCV };

inline std::string to_string(EvalSetting s) {
  switch (s) {
  case EvalSetting::TrainHoldOut: return "train_hold_out";
  case EvalSetting::TestHoldOut: return "test_hold_out";
  case EvalSetting::TrainCV: return "train_cv";
  case EvalSetting::TestCV: return "test_cv";
  }
  return "?";
}

inline EvalSetting parse_setting(std::string_view s) {
  if (s == "train_hold_out") return EvalSetting::TrainHoldOut;
  if (s == "test_hold_out") return EvalSetting::TestHoldOut;
  if (s == "train_cv") return EvalSetting::TrainCV;
  if (s == "test_cv") return EvalSetting::TestCV;
  throw std::invalid_argument("unknown eval setting '" + std::string(s) + "'");
}

/// The tuned attribute set of the network-plus-training recipe.
struct HyperConfig {
  std::int64_t l1 = 32, l2 = 32;
  double lr_mult = 1.0;
  std::int64_t batch_size = 16;
  std::int64_t epochs = 8;
  std::int64_t k_folds = 0;
  std::int64_t patience = 5;
  std::string optimizer = "SGD";
  double sgd_momentum = 0.0;

  static HyperConfig from_config(const Config &c) {
    auto get = [&](const char *key) -> const ParamValue & {
      auto it = c.find(key);
      if (it == c.end()) throw std::invalid_argument(std::string("config lacks '") + key + "'");
      return it->second;
    };
    auto as_int = [&](const char *key) {
      return static_cast<std::int64_t>(std::llround(as_double(get(key))));
    };
    HyperConfig h;
    h.l1 = as_int("l1");
    h.l2 = as_int("l2");
    h.lr_mult = as_double(get("lr_mult"));
    h.batch_size = as_int("batch_size");
    h.epochs = as_int("epochs");
    h.k_folds = as_int("k_folds");
    h.patience = as_int("patience");
    const auto &opt = get("optimizer");
    if (!std::holds_alternative<std::string>(opt))
      throw std::invalid_argument("optimizer must be a level string");
    h.optimizer = std::get<std::string>(opt);
    h.sgd_momentum = as_double(get("sgd_momentum"));
    return h;
  }
};

// --- data splitting -------------------------------------------------------

struct Split {
  std::vector<std::size_t> train, val;
};

/// Random 60/40 split of 0..n-1: floor(0.6 n) training indices, the rest for
/// validation.
inline Split create_train_val_split(std::size_t n, std::uint64_t seed) {
  if (n < 5) throw std::invalid_argument("create_train_val_split: need at least 5 samples");
  detail::Rng rng(seed);
  const auto perm = detail::permutation(n, rng);
  const auto n_train = static_cast<std::size_t>(static_cast<double>(n) * 0.6);
  Split s;
  s.train.assign(perm.begin(), perm.begin() + static_cast<long>(n_train));
  s.val.assign(perm.begin() + static_cast<long>(n_train), perm.end());
  return s;
}

/// Consecutive batches over `rows`; the final short batch is kept.
inline Batches make_batches(std::span<const std::size_t> rows, std::size_t batch_size,
                            bool shuffle, detail::Rng &rng) {
  if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  std::vector<std::size_t> order(rows.begin(), rows.end());
  if (shuffle) detail::shuffle(std::span<std::size_t>(order), rng);
  Batches out;
  for (std::size_t i = 0; i < order.size(); i += batch_size)
    out.emplace_back(order.begin() + static_cast<long>(i),
                     order.begin() + static_cast<long>(std::min(order.size(), i + batch_size)));
  return out;
}

/// Validation folds of k-fold cross-validation: contiguous blocks of the
/// (optionally permuted) indices, the first n % k folds one element larger.
inline Batches kfold_indices(std::size_t n, std::size_t k, bool shuffle, std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("k_folds must be >= 2");
  if (n < k) throw std::invalid_argument("fewer samples than folds");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  if (shuffle) {
    detail::Rng rng(seed);
    detail::shuffle(std::span<std::size_t>(order), rng);
  }
  Batches folds;
  std::size_t start = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t len = n / k + (f < n % k ? 1 : 0);
    folds.emplace_back(order.begin() + static_cast<long>(start),
                       order.begin() + static_cast<long>(start + len));
    start += len;
  }
  return folds;
}

/// Rescales `grad` in place so its Euclidean norm is at most max_norm.
/// Returns the norm before clipping.
inline double clip_grad_norm(std::span<double> grad, double max_norm) {
  double sq = 0.0;
  for (double g : grad) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    for (double &g : grad) g *= scale;
  }
  return norm;
}

// --- epochs ---------------------------------------------------------------

/// One pass over `batches`: forward, loss, gradient, norm clipping, optimizer
/// step. Returns the loss of the last batch.
inline double train_one_epoch(ToyNet &net, const Dataset &data, const Batches &batches,
                              const optim::OptimizerConfig &config,
                              optim::OptimizerState &state, double max_norm = 1.0) {
  double last = std::numeric_limits<double>::quiet_NaN();
  for (const auto &rows : batches) {
    const auto X = data.batch(rows);
    const auto labels = data.batch_labels(rows);
    auto lg = net.loss_and_grad(X, labels);
    if (!std::isfinite(lg.loss)) throw EvalFailure("non-finite training loss");
    clip_grad_norm(lg.grad, max_norm);
    optim::step(config, state, net.params(), lg.grad);
    last = lg.loss;
  }
  return last;
}

struct Validation {
  double metric = 0.0;
  double loss = 0.0;
};

/// Mean of per-batch losses; accuracy accumulated over every sample and
/// computed once at the end.
inline Validation validate_one_epoch(const ToyNet &net, const Dataset &data,
                                     const Batches &batches) {
  if (batches.empty()) throw EvalFailure("empty validation loader");
  double loss_sum = 0.0;
  std::size_t correct = 0, total = 0;
  for (const auto &rows : batches) {
    const auto logits = net.forward(data.batch(rows));
    const auto labels = data.batch_labels(rows);
    loss_sum += ToyNet::cross_entropy(logits, labels);
    correct += static_cast<std::size_t>(
        std::llround(toynet::accuracy(logits, labels) * static_cast<double>(rows.size())));
    total += rows.size();
  }
  Validation v;
  v.loss = loss_sum / static_cast<double>(batches.size());
  v.metric = static_cast<double>(correct) / static_cast<double>(total);
  if (!std::isfinite(v.loss)) throw EvalFailure("non-finite validation loss");
  return v;
}

/// The epoch loop shared by every setting. Stops once `patience` consecutive
/// epochs fail to improve on the best validation loss and reports the LAST
/// epoch's validation values.
inline EvalResult run_early_stopping(std::int64_t epochs, std::int64_t patience,
                                     const std::function<void(std::int64_t)> &train_epoch,
                                     const std::function<Validation(std::int64_t)> &validate,
                                     const std::function<void()> &on_improve = {}) {
  EvalResult r;
  double best = std::numeric_limits<double>::infinity();
  std::int64_t counter = 0;
  for (std::int64_t epoch = 1; epoch <= epochs; ++epoch) {
    train_epoch(epoch);
    const Validation v = validate(epoch);
    r.loss = v.loss;
    r.metric = v.metric;
    r.epochs_run = static_cast<int>(epoch);
    if (v.loss < best) {
      best = v.loss;
      counter = 0;
      if (on_improve) on_improve();
    } else if (++counter >= patience) {
      r.stopped_early = true;
      break;
    }
  }
  r.ok = r.epochs_run > 0;
  return r;
}

// --- weights files --------------------------------------------------------

inline nlohmann::json weights_json(const ToyNet &net) {
  nlohmann::json j;
  const auto in = net.input_dim(), a = net.l1(), b = net.l2();
  const std::size_t c = toynet::kNumClasses;
  j["format"] = "spotkit-toynet-weights";
  j["input_dim"] = in;
  j["l1"] = a;
  j["l2"] = b;
  j["num_classes"] = c;
  j["shapes"] = {{"fc1.weight", {a, in}}, {"fc1.bias", {a}}, {"fc2.weight", {b, a}},
                 {"fc2.bias", {b}},       {"fc3.weight", {c, b}}, {"fc3.bias", {c}}};
  j["weights"] = net.params();
  return j;
}

inline void save_weights(const ToyNet &net, const std::filesystem::path &path) {
  detail::atomic_write(path, weights_json(net).dump());
}

inline ToyNet load_weights(const std::filesystem::path &path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::read_file(path));
  } catch (const nlohmann::json::exception &e) {
    throw EvalFailure("unreadable weights file " + path.string() + ": " + e.what());
  }
  try {
    ToyNet net(j.at("input_dim").get<std::size_t>(), j.at("l1").get<std::size_t>(),
               j.at("l2").get<std::size_t>(), 0);
    auto w = j.at("weights").get<std::vector<double>>();
    if (w.size() != net.parameter_count())
      throw EvalFailure("weights file " + path.string() + " has the wrong length");
    net.params() = std::move(w);
    return net;
  } catch (const nlohmann::json::exception &e) {
    throw EvalFailure("malformed weights file " + path.string() + ": " + e.what());
  }
}

// --- evaluation settings --------------------------------------------------

struct Seeds {
  std::uint64_t init, split, shuffle;
  explicit Seeds(std::uint64_t seed)
      : init(detail::derive_seed(seed, 1)), split(detail::derive_seed(seed, 2)),
        shuffle(detail::derive_seed(seed, 3)) {}
};

inline void check_hyper(const HyperConfig &h) {
  if (h.l1 < 1 || h.l2 < 1) throw EvalFailure("layer widths must be positive");
  if (h.batch_size < 1) throw EvalFailure("batch_size must be positive");
  if (h.epochs < 1) throw EvalFailure("epochs must be positive");
}

struct HoldOutOptions {
  bool shuffle = true;
  std::uint64_t seed = 0;
  const Dataset *test = nullptr;                     // required for test_hold_out
  std::optional<std::filesystem::path> checkpoint;   // best weights are written here
  ToyNet *trained = nullptr;                         // receives the final network
};

/// Hold-out evaluation. train_hold_out splits `train` 60/40; test_hold_out
/// trains on all of `train` and validates on `options.test`.
inline EvalResult evaluate_hold_out(const HyperConfig &h, const Dataset &train,
                                    EvalSetting setting, const HoldOutOptions &options) {
  try {
    check_hyper(h);
    const Seeds seeds(options.seed);
    ToyNet net(train.input_dim, static_cast<std::size_t>(h.l1), static_cast<std::size_t>(h.l2),
               seeds.init);
    const auto config = optim::optimizer_handler(h.optimizer, h.lr_mult, h.sgd_momentum);
    auto state = optim::OptimizerState::zeros(net.parameter_count());

    const Dataset *train_data = &train;
    const Dataset *val_data = nullptr;
    std::vector<std::size_t> train_rows, val_rows;
    if (setting == EvalSetting::TrainHoldOut) {
      auto split = create_train_val_split(train.size(), seeds.split);
      train_rows = std::move(split.train);
      val_rows = std::move(split.val);
      val_data = &train;
    } else if (setting == EvalSetting::TestHoldOut) {
      if (!options.test) throw EvalFailure("test_hold_out requires a test dataset");
      for (std::size_t i = 0; i < train.size(); ++i) train_rows.push_back(i);
      for (std::size_t i = 0; i < options.test->size(); ++i) val_rows.push_back(i);
      val_data = options.test;
    } else {
      throw EvalFailure("evaluate_hold_out handles hold-out settings only");
    }

    detail::Rng rng(seeds.shuffle);
    const auto bs = static_cast<std::size_t>(h.batch_size);
    auto result = run_early_stopping(
        h.epochs, h.patience,
        [&](std::int64_t) {
          train_one_epoch(net, *train_data, make_batches(train_rows, bs, options.shuffle, rng),
                          config, state);
        },
        [&](std::int64_t) {
          return validate_one_epoch(net, *val_data,
                                    make_batches(val_rows, bs, options.shuffle, rng));
        },
        [&] {
          if (options.checkpoint) save_weights(net, *options.checkpoint);
        });
    if (options.trained) *options.trained = net;
    return result;
  } catch (const std::exception &e) {
    return EvalResult::failure(e.what());
  }
}

/// k-fold cross-validation. Each fold restarts from the same initial weights;
/// the optimizer is built once and keeps its state across folds. Returns the
/// mean of the per-fold last-epoch losses and metrics.
inline EvalResult evaluate_cv(
    const HyperConfig &h, const Dataset &data, bool shuffle, std::uint64_t seed,
    const std::function<void(std::size_t, const ToyNet &)> &on_fold_start = {}) {
  try {
    check_hyper(h);
    if (h.k_folds < 2) throw EvalFailure("k_folds must be >= 2 for cross-validation");
    const Seeds seeds(seed);
    const auto folds = kfold_indices(data.size(), static_cast<std::size_t>(h.k_folds), shuffle,
                                     seeds.split);
    ToyNet net(data.input_dim, static_cast<std::size_t>(h.l1), static_cast<std::size_t>(h.l2),
               seeds.init);
    const auto config = optim::optimizer_handler(h.optimizer, h.lr_mult, h.sgd_momentum);
    auto state = optim::OptimizerState::zeros(net.parameter_count());
    detail::Rng rng(seeds.shuffle);
    const auto bs = static_cast<std::size_t>(h.batch_size);

    double loss_sum = 0.0, metric_sum = 0.0;
    int epochs_total = 0;
    bool any_stopped = false;
    for (std::size_t f = 0; f < folds.size(); ++f) {
      std::vector<std::size_t> train_rows;
      for (std::size_t g = 0; g < folds.size(); ++g)
        if (g != f) train_rows.insert(train_rows.end(), folds[g].begin(), folds[g].end());
      net.reset_weights(seeds.init);
      if (on_fold_start) on_fold_start(f, net);
      // Fold samplers draw in random order regardless of `shuffle`.
      auto r = run_early_stopping(
          h.epochs, h.patience,
          [&](std::int64_t) {
            train_one_epoch(net, data, make_batches(train_rows, bs, true, rng), config, state);
          },
          [&](std::int64_t) {
            return validate_one_epoch(net, data, make_batches(folds[f], bs, true, rng));
          });
      if (!r.ok) throw EvalFailure("fold " + std::to_string(f + 1) + " failed");
      loss_sum += r.loss;
      metric_sum += r.metric;
      epochs_total += r.epochs_run;
      any_stopped = any_stopped || r.stopped_early;
    }
    auto out = EvalResult::success(loss_sum / static_cast<double>(folds.size()),
                                   metric_sum / static_cast<double>(folds.size()));
    out.epochs_run = epochs_total;
    out.stopped_early = any_stopped;
    return out;
  } catch (const std::exception &e) {
    return EvalResult::failure(e.what());
  }
}

/// Dispatches one of the four evaluation settings.
inline EvalResult evaluate(const HyperConfig &h, EvalSetting setting, const Dataset &train,
                           const Dataset &test, bool shuffle, std::uint64_t seed) {
  switch (setting) {
  case EvalSetting::TrainHoldOut:
  case EvalSetting::TestHoldOut: {
    HoldOutOptions o;
    o.shuffle = shuffle;
    o.seed = seed;
    o.test = &test;
    return evaluate_hold_out(h, train, setting, o);
  }
  case EvalSetting::TrainCV: return evaluate_cv(h, train, shuffle, seed);
  case EvalSetting::TestCV: return evaluate_cv(h, test, shuffle, seed);
  }
  return EvalResult::failure("unknown setting");
}

// --- final training and testing -------------------------------------------

struct TrainedModel {
  EvalResult result;
  ToyNet net;
};

/// train_hold_out on the training data, checkpointing the weights at every new
/// best validation loss when `path` is given.
inline TrainedModel train_tuned(const HyperConfig &h, const Dataset &train, std::uint64_t seed,
                                const std::optional<std::filesystem::path> &path = std::nullopt) {
  TrainedModel out{EvalResult{}, ToyNet(train.input_dim, 1, 1, 0)};
  HoldOutOptions o;
  o.shuffle = true;
  o.seed = seed;
  o.checkpoint = path;
  o.trained = &out.net;
  out.result = evaluate_hold_out(h, train, EvalSetting::TrainHoldOut, o);
  return out;
}

/// One validation pass over the whole test set in fixed order.
inline EvalResult test_tuned(const ToyNet &net, std::int64_t batch_size, const Dataset &test) {
  try {
    std::vector<std::size_t> rows(test.size());
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
    detail::Rng unused(0);
    const auto v = validate_one_epoch(
        net, test, make_batches(rows, static_cast<std::size_t>(batch_size), false, unused));
    return EvalResult::success(v.loss, v.metric);
  } catch (const std::exception &e) {
    return EvalResult::failure(e.what());
  }
}

inline EvalResult test_tuned(const std::filesystem::path &weights, std::int64_t batch_size,
                             const Dataset &test) {
  try {
    return test_tuned(load_weights(weights), batch_size, test);
  } catch (const std::exception &e) {
    return EvalResult::failure(e.what());
  }
}

// --- out-of-process evaluator ---------------------------------------------

/// Runs `command` through /bin/sh, writes {"config": ...} as one line to its
/// stdin and reads one line {"loss": r, "metric": r} from its stdout. Timeouts,
/// malformed replies and non-zero exits produce a failure result.
inline EvalResult external_evaluate(const std::string &command, const nlohmann::json &config,
                                    std::chrono::milliseconds timeout) {
  int to_child[2], from_child[2];
  if (::pipe2(to_child, O_CLOEXEC) != 0) return EvalResult::failure("pipe failed");
  if (::pipe2(from_child, O_CLOEXEC) != 0) {
    ::close(to_child[0]);
    ::close(to_child[1]);
    return EvalResult::failure("pipe failed");
  }
  const pid_t pid = ::fork();
  if (pid < 0) {
    for (int fd : {to_child[0], to_child[1], from_child[0], from_child[1]}) ::close(fd);
    return EvalResult::failure("fork failed");
  }
  if (pid == 0) {
    ::setpgid(0, 0); // own group, so a timeout reaches grandchildren too
    ::dup2(to_child[0], STDIN_FILENO);
    ::dup2(from_child[1], STDOUT_FILENO);
    ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char *>(nullptr));
    ::_exit(127);
  }
  ::setpgid(pid, pid);
  ::close(to_child[0]);
  ::close(from_child[1]);
  std::signal(SIGPIPE, SIG_IGN);

  const std::string request = nlohmann::json{{"config", config}}.dump() + "\n";
  std::size_t written = 0;
  while (written < request.size()) {
    const auto n = ::write(to_child[1], request.data() + written, request.size() - written);
    if (n <= 0) break;
    written += static_cast<std::size_t>(n);
  }
  ::close(to_child[1]);

  const auto deadline = std::chrono::steady_clock::now() + timeout;
  std::string reply;
  bool timed_out = false;
  char buf[4096];
  for (;;) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
        deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) {
      timed_out = true;
      break;
    }
    pollfd pfd{from_child[0], POLLIN, 0};
    const int rc = ::poll(&pfd, 1, static_cast<int>(left.count()));
    if (rc == 0) {
      timed_out = true;
      break;
    }
    if (rc < 0) {
      if (errno == EINTR) continue;
      break;
    }
    const auto n = ::read(from_child[0], buf, sizeof buf);
    if (n <= 0) break;
    reply.append(buf, static_cast<std::size_t>(n));
  }
  ::close(from_child[0]);
  if (timed_out) ::kill(-pid, SIGKILL);
  int status = 0;
  while (::waitpid(pid, &status, 0) < 0 && errno == EINTR) {
  }
  if (timed_out) return EvalResult::failure("external evaluator timed out");
  if (!WIFEXITED(status) || WEXITSTATUS(status) != 0)
    return EvalResult::failure("external evaluator exited abnormally");

  const auto eol = reply.find('\n');
  const std::string line = reply.substr(0, eol);
  try {
    const auto j = nlohmann::json::parse(line);
    const auto &loss = j.at("loss");
    if (!loss.is_number()) return EvalResult::failure("reply has a non-numeric loss");
    double metric = std::numeric_limits<double>::quiet_NaN();
    if (auto it = j.find("metric"); it != j.end() && it->is_number()) metric = it->get<double>();
    return EvalResult::success(loss.get<double>(), metric);
  } catch (const nlohmann::json::exception &) {
    return EvalResult::failure("malformed evaluator reply: " + line);
  }
}

} // namespace spotkit::harness
