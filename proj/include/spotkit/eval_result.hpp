#pragma once

#include <limits>
#include <string>

namespace spotkit {

/// Outcome of evaluating one configuration. `ok == false` marks a failed
/// evaluation; loss and metric are NaN then.
struct EvalResult {
  double loss = std::numeric_limits<double>::quiet_NaN();
  double metric = std::numeric_limits<double>::quiet_NaN();
  int epochs_run = 0;
  bool stopped_early = false;
  bool ok = false;
  std::string error;

  static EvalResult success(double loss, double metric) {
    EvalResult r;
    r.loss = loss;
    r.metric = metric;
    r.ok = true;
    return r;
  }

  static EvalResult failure(std::string why) {
    EvalResult r;
    r.error = std::move(why);
    return r;
  }
};

} // namespace spotkit
