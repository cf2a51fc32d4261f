#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace spotkit::optim {

class OptimError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

enum class OptimizerKind {
  Adadelta,
  Adagrad,
  Adam,
  AdamW,
  Adamax,
  ASGD,
  NAdam,
  RAdam,
  RMSprop,
  SGD
};

inline constexpr std::array<OptimizerKind, 10> kAllKinds{
    OptimizerKind::Adadelta, OptimizerKind::Adagrad, OptimizerKind::Adam,
    OptimizerKind::AdamW,    OptimizerKind::Adamax,  OptimizerKind::ASGD,
    OptimizerKind::NAdam,    OptimizerKind::RAdam,   OptimizerKind::RMSprop,
    OptimizerKind::SGD};

inline std::string_view to_string(OptimizerKind k) {
  switch (k) {
  case OptimizerKind::Adadelta: return "Adadelta";
  case OptimizerKind::Adagrad: return "Adagrad";
  case OptimizerKind::Adam: return "Adam";
  case OptimizerKind::AdamW: return "AdamW";
  case OptimizerKind::Adamax: return "Adamax";
  case OptimizerKind::ASGD: return "ASGD";
  case OptimizerKind::NAdam: return "NAdam";
  case OptimizerKind::RAdam: return "RAdam";
  case OptimizerKind::RMSprop: return "RMSprop";
  case OptimizerKind::SGD: return "SGD";
  }
  return "?";
}

inline std::optional<OptimizerKind> parse_kind(std::string_view name) {
  for (auto k : kAllKinds)
    if (to_string(k) == name) return k;
  return std::nullopt;
}

/// Hyperparameters of one optimizer. Defaults are filled in by
/// optimizer_handler; fields a kind does not use keep their zero value.
struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::SGD;
  double base_lr = 1e-3;
  double lr_mult = 1.0;
  double weight_decay = 0.0;
  double momentum = 0.0;
  double dampening = 0.0;
  bool nesterov = false;
  double rho = 0.0;
  double lr_decay = 0.0;
  double beta1 = 0.0, beta2 = 0.0;
  double eps = 0.0;
  double lambd = 0.0;
  double alpha = 0.0;
  double t0 = 0.0;
  double momentum_decay = 0.0;

  double lr() const { return base_lr * lr_mult; }
};

/// Builds the configuration for an optimizer name with the portfolio's
/// default values. The learning rate is base_lr * lr_mult; sgd_momentum only
/// affects SGD.
inline OptimizerConfig optimizer_handler(std::string_view name, double lr_mult = 1.0,
                                         double sgd_momentum = 0.0) {
  if (name == "LBFGS" || name == "Rprop" || name == "SparseAdam")
    throw OptimError("optimizer '" + std::string(name) +
                     "' is excluded from the portfolio (LBFGS needs a closure, "
                     "Rprop performs poorly, SparseAdam needs sparse gradients)");
  auto kind = parse_kind(name);
  if (!kind) throw OptimError("unknown optimizer '" + std::string(name) + "'");
  if (!(lr_mult > 0.0) || !std::isfinite(lr_mult))
    throw OptimError("lr_mult must be positive");

  OptimizerConfig c;
  c.kind = *kind;
  c.lr_mult = lr_mult;
  switch (*kind) {
  case OptimizerKind::Adadelta:
    c.base_lr = 1.0;
    c.rho = 0.9;
    c.eps = 1e-6;
    break;
  case OptimizerKind::Adagrad:
    c.base_lr = 1e-2;
    c.lr_decay = 0.0;
    c.eps = 1e-10;
    break;
  case OptimizerKind::Adam:
    c.base_lr = 1e-3;
    c.beta1 = 0.9;
    c.beta2 = 0.999;
    c.eps = 1e-8;
    break;
  case OptimizerKind::AdamW:
    c.base_lr = 1e-3;
    c.beta1 = 0.9;
    c.beta2 = 0.999;
    c.eps = 1e-8;
    c.weight_decay = 1e-2;
    break;
  case OptimizerKind::Adamax:
    c.base_lr = 2e-3;
    c.beta1 = 0.9;
    c.beta2 = 0.999;
    c.eps = 1e-8;
    break;
  case OptimizerKind::ASGD:
    c.base_lr = 1e-2;
    c.lambd = 1e-4;
    c.alpha = 0.75;
    c.t0 = 1e6;
    // Listed for ASGD in the defaults table; the averaging rule never reads them.
    c.momentum = 0.9;
    c.nesterov = false;
    break;
  case OptimizerKind::NAdam:
    c.base_lr = 2e-3;
    c.beta1 = 0.9;
    c.beta2 = 0.999;
    c.eps = 1e-8;
    c.momentum_decay = 0.0;
    break;
  case OptimizerKind::RAdam:
    c.base_lr = 1e-3;
    c.beta1 = 0.9;
    c.beta2 = 0.999;
    c.eps = 1e-8;
    break;
  case OptimizerKind::RMSprop:
    c.base_lr = 1e-2;
    c.alpha = 0.99;
    c.eps = 1e-8;
    break;
  case OptimizerKind::SGD:
    c.base_lr = 1e-3;
    c.momentum = sgd_momentum;
    break;
  }
  return c;
}

/// Per-parameter buffers. Which ones are used depends on the kind.
struct OptimizerState {
  std::int64_t step = 0;
  std::vector<double> m;   // first moment / momentum / squared-avg (Adadelta)
  std::vector<double> v;   // second moment / accumulator
  std::vector<double> aux; // Adadelta delta average, ASGD averaged iterate
  double eta = 0.0;        // ASGD
  double mu = 1.0;         // ASGD averaging coefficient
  double mu_product = 1.0; // NAdam
  bool has_momentum_buffer = false;

  static OptimizerState zeros(std::size_t n) {
    OptimizerState s;
    s.m.assign(n, 0.0);
    s.v.assign(n, 0.0);
    s.aux.assign(n, 0.0);
    return s;
  }

  std::size_t size() const { return m.size(); }
};

/// One update of `params` in place following the kind's standard rule.
inline void step(const OptimizerConfig &c, OptimizerState &s, std::span<double> params,
                 std::span<const double> grads) {
  if (params.size() != grads.size())
    throw OptimError("params and grads have different lengths");
  if (s.size() != params.size()) throw OptimError("optimizer state has the wrong size");
  for (double g : grads)
    if (!std::isfinite(g)) throw OptimError("non-finite gradient component");

  const double lr = c.lr();
  const std::size_t n = params.size();
  s.step += 1;
  const double t = static_cast<double>(s.step);

  auto grad_with_decay = [&](std::size_t i) {
    return c.weight_decay != 0.0 ? grads[i] + c.weight_decay * params[i] : grads[i];
  };

  switch (c.kind) {
  case OptimizerKind::SGD: {
    for (std::size_t i = 0; i < n; ++i) {
      double g = grad_with_decay(i);
      if (c.momentum != 0.0) {
        s.m[i] = s.has_momentum_buffer ? c.momentum * s.m[i] + (1.0 - c.dampening) * g : g;
        g = c.nesterov ? g + c.momentum * s.m[i] : s.m[i];
      }
      params[i] -= lr * g;
    }
    if (c.momentum != 0.0) s.has_momentum_buffer = true;
    break;
  }
  case OptimizerKind::Adam:
  case OptimizerKind::AdamW: {
    const bool decoupled = c.kind == OptimizerKind::AdamW;
    const double bc1 = 1.0 - std::pow(c.beta1, t);
    const double bc2 = 1.0 - std::pow(c.beta2, t);
    for (std::size_t i = 0; i < n; ++i) {
      double g = grads[i];
      if (decoupled)
        params[i] *= 1.0 - lr * c.weight_decay;
      else if (c.weight_decay != 0.0)
        g += c.weight_decay * params[i];
      s.m[i] = c.beta1 * s.m[i] + (1.0 - c.beta1) * g;
      s.v[i] = c.beta2 * s.v[i] + (1.0 - c.beta2) * g * g;
      const double denom = std::sqrt(s.v[i]) / std::sqrt(bc2) + c.eps;
      params[i] -= (lr / bc1) * s.m[i] / denom;
    }
    break;
  }
  case OptimizerKind::Adagrad: {
    const double clr = lr / (1.0 + (t - 1.0) * c.lr_decay);
    for (std::size_t i = 0; i < n; ++i) {
      const double g = grad_with_decay(i);
      s.v[i] += g * g;
      params[i] -= clr * g / (std::sqrt(s.v[i]) + c.eps);
    }
    break;
  }
  case OptimizerKind::Adadelta: {
    for (std::size_t i = 0; i < n; ++i) {
      const double g = grad_with_decay(i);
      s.m[i] = c.rho * s.m[i] + (1.0 - c.rho) * g * g;
      const double delta = std::sqrt(s.aux[i] + c.eps) / std::sqrt(s.m[i] + c.eps) * g;
      s.aux[i] = c.rho * s.aux[i] + (1.0 - c.rho) * delta * delta;
      params[i] -= lr * delta;
    }
    break;
  }
  case OptimizerKind::Adamax: {
    const double clr = lr / (1.0 - std::pow(c.beta1, t));
    for (std::size_t i = 0; i < n; ++i) {
      const double g = grad_with_decay(i);
      s.m[i] = c.beta1 * s.m[i] + (1.0 - c.beta1) * g;
      s.v[i] = std::max(c.beta2 * s.v[i], std::abs(g) + c.eps);
      params[i] -= clr * s.m[i] / s.v[i];
    }
    break;
  }
  case OptimizerKind::ASGD: {
    if (s.step == 1) {
      s.eta = lr;
      s.mu = 1.0;
    }
    for (std::size_t i = 0; i < n; ++i) {
      const double g = grad_with_decay(i);
      params[i] *= 1.0 - c.lambd * s.eta;
      params[i] -= s.eta * g;
      if (s.mu != 1.0)
        s.aux[i] += (params[i] - s.aux[i]) * s.mu;
      else
        s.aux[i] = params[i];
    }
    s.eta = lr / std::pow(1.0 + c.lambd * lr * t, c.alpha);
    s.mu = 1.0 / std::max(1.0, t - c.t0);
    break;
  }
  case OptimizerKind::NAdam: {
    const double bc2 = 1.0 - std::pow(c.beta2, t);
    const double mu_t = c.beta1 * (1.0 - 0.5 * std::pow(0.96, t * c.momentum_decay));
    const double mu_next =
        c.beta1 * (1.0 - 0.5 * std::pow(0.96, (t + 1.0) * c.momentum_decay));
    s.mu_product *= mu_t;
    const double mu_product_next = s.mu_product * mu_next;
    for (std::size_t i = 0; i < n; ++i) {
      const double g = grad_with_decay(i);
      s.m[i] = c.beta1 * s.m[i] + (1.0 - c.beta1) * g;
      s.v[i] = c.beta2 * s.v[i] + (1.0 - c.beta2) * g * g;
      const double denom = std::sqrt(s.v[i] / bc2) + c.eps;
      params[i] -= lr * (1.0 - mu_t) / (1.0 - s.mu_product) * g / denom;
      params[i] -= lr * mu_next / (1.0 - mu_product_next) * s.m[i] / denom;
    }
    break;
  }
  case OptimizerKind::RAdam: {
    const double bc1 = 1.0 - std::pow(c.beta1, t);
    const double bc2 = 1.0 - std::pow(c.beta2, t);
    const double rho_inf = 2.0 / (1.0 - c.beta2) - 1.0;
    const double rho_t = rho_inf - 2.0 * t * std::pow(c.beta2, t) / bc2;
    for (std::size_t i = 0; i < n; ++i) {
      const double g = grad_with_decay(i);
      s.m[i] = c.beta1 * s.m[i] + (1.0 - c.beta1) * g;
      s.v[i] = c.beta2 * s.v[i] + (1.0 - c.beta2) * g * g;
      const double m_hat = s.m[i] / bc1;
      if (rho_t > 5.0) {
        const double rect = std::sqrt((rho_t - 4.0) * (rho_t - 2.0) * rho_inf /
                                      ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t));
        const double adaptive = std::sqrt(bc2) / (std::sqrt(s.v[i]) + c.eps);
        params[i] -= lr * m_hat * rect * adaptive;
      } else {
        params[i] -= lr * m_hat;
      }
    }
    break;
  }
  case OptimizerKind::RMSprop: {
    for (std::size_t i = 0; i < n; ++i) {
      const double g = grad_with_decay(i);
      s.v[i] = c.alpha * s.v[i] + (1.0 - c.alpha) * g * g;
      params[i] -= lr * g / (std::sqrt(s.v[i]) + c.eps);
    }
    break;
  }
  }
}

} // namespace spotkit::optim
