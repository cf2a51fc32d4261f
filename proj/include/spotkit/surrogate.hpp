#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "spotkit/design.hpp"
#include "spotkit/detail/random.hpp"

namespace spotkit {

class SurrogateError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct SurrogateControl {
  bool noise = false;
  std::string cod_type = "norm";
  double min_theta = -4.0; // log10 bounds of the kernel activities
  double max_theta = 3.0;
  int n_theta = 0;         // 0: one per input column
  int model_fun_evals = 10'000;
  int log_level = 50;
};

/// Fitted Kriging model over min-max normalized inputs.
struct KrigingModel {
  Eigen::MatrixXd X; // n x d, normalized
  Eigen::VectorXd y;
  std::vector<double> theta_log10;
  double nugget = 0.0; // total diagonal term added to the correlation matrix
  double mu = 0.0;
  double sigma2 = 0.0;
  Eigen::MatrixXd chol; // lower factor of R + nugget * I
  std::vector<double> x_min, x_max;
  double nll = 0.0;
  int likelihood_evals = 0;

  // Cached solves used by predict.
  Eigen::VectorXd alpha;    // R^-1 (y - mu)
  Eigen::VectorXd rinv_one; // R^-1 1
  double one_rinv_one = 1.0;

  std::size_t dims() const { return static_cast<std::size_t>(X.cols()); }
  std::size_t size() const { return static_cast<std::size_t>(X.rows()); }

  /// Maps a raw input into the unit box of the training data, clamping
  /// coordinates that fall outside.
  Eigen::VectorXd normalize(std::span<const double> x) const {
    if (x.size() != x_min.size()) throw SurrogateError("predict: dimension mismatch");
    Eigen::VectorXd u(static_cast<Eigen::Index>(x.size()));
    for (std::size_t k = 0; k < x.size(); ++k) {
      const double span = x_max[k] - x_min[k];
      const double v = span > 0 ? (x[k] - x_min[k]) / span : x[k] - x_min[k];
      u[static_cast<Eigen::Index>(k)] = std::clamp(v, 0.0, 1.0);
    }
    return u;
  }
};

struct Prediction {
  double mean = 0.0;
  double variance = 0.0;
};

namespace detail {

inline Eigen::MatrixXd correlation(const Eigen::MatrixXd &X,
                                   std::span<const double> theta_log10) {
  const auto n = X.rows();
  const auto d = X.cols();
  Eigen::VectorXd w(d);
  for (Eigen::Index k = 0; k < d; ++k)
    w[k] = std::pow(10.0, theta_log10[static_cast<std::size_t>(k)]);
  Eigen::MatrixXd R(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    R(i, i) = 1.0;
    for (Eigen::Index j = 0; j < i; ++j) {
      double s = 0.0;
      for (Eigen::Index k = 0; k < d; ++k) {
        const double diff = X(i, k) - X(j, k);
        s += w[k] * diff * diff;
      }
      R(i, j) = R(j, i) = std::exp(-s);
    }
  }
  return R;
}

struct Factorization {
  Eigen::MatrixXd L;
  double mu = 0.0;
  double sigma2 = 0.0;
  double log_det = 0.0;
  Eigen::VectorXd alpha, rinv_one;
  double one_rinv_one = 0.0;
};

inline std::optional<Factorization> factorize(const Eigen::MatrixXd &X,
                                              const Eigen::VectorXd &y,
                                              std::span<const double> theta_log10,
                                              double nugget) {
  const auto n = X.rows();
  Eigen::MatrixXd R = correlation(X, theta_log10);
  R.diagonal().array() += nugget;
  Eigen::LLT<Eigen::MatrixXd> llt(R);
  if (llt.info() != Eigen::Success) return std::nullopt;
  Factorization f;
  f.L = llt.matrixL();
  const Eigen::VectorXd diag = f.L.diagonal();
  if ((diag.array() <= 0.0).any() || !diag.allFinite()) return std::nullopt;
  f.log_det = 2.0 * diag.array().log().sum();
  const Eigen::VectorXd one = Eigen::VectorXd::Ones(n);
  f.rinv_one = llt.solve(one);
  f.one_rinv_one = one.dot(f.rinv_one);
  if (!(f.one_rinv_one > 0.0)) return std::nullopt;
  f.mu = f.rinv_one.dot(y) / f.one_rinv_one;
  const Eigen::VectorXd resid = y.array() - f.mu;
  f.alpha = llt.solve(resid);
  f.sigma2 = resid.dot(f.alpha) / static_cast<double>(n);
  if (!std::isfinite(f.sigma2) || !std::isfinite(f.log_det)) return std::nullopt;
  return f;
}

inline double nll_from(const Factorization &f, Eigen::Index n) {
  const double s2 = std::max(f.sigma2, std::numeric_limits<double>::min());
  return static_cast<double>(n) * std::log(s2) + f.log_det;
}

} // namespace detail

/// Concentrated negative log-likelihood n*log(sigma2_hat) + log det(R), with the
/// process mean and variance profiled out. +infinity when R + nugget*I is not
/// positive definite.
inline double neg_log_likelihood(const Eigen::MatrixXd &X, const Eigen::VectorXd &y,
                                 std::span<const double> theta_log10, double nugget) {
  if (theta_log10.size() != static_cast<std::size_t>(X.cols()))
    throw SurrogateError("theta dimension does not match inputs");
  auto f = detail::factorize(X, y, theta_log10, nugget);
  if (!f) return std::numeric_limits<double>::infinity();
  return detail::nll_from(*f, X.rows());
}

namespace detail {

inline constexpr double kJitterFloor = 1e-10;
inline constexpr double kJitterCeiling = 1e-6;
inline constexpr double kNuggetLog10Min = -8.0;
inline constexpr double kNuggetLog10Max = -1.0;

// Budgeted derivative-free minimization over a box: Latin hypercube screening
// with 80% of the budget, then coordinate-wise golden-section refinement.
template <typename F>
std::pair<std::vector<double>, double>
screen_and_refine(F &&objective, const std::vector<double> &lo,
                  const std::vector<double> &hi, int budget, std::uint64_t seed,
                  int &used) {
  const auto p = lo.size();
  used = 0;
  const int screening = std::max(1, static_cast<int>(0.8 * budget));
  const auto design = latin_hypercube({screening, 1, seed}, static_cast<int>(p));
  std::vector<double> best(p), x(p);
  double best_f = std::numeric_limits<double>::infinity();
  for (const auto &u : design) {
    for (std::size_t k = 0; k < p; ++k) x[k] = lo[k] + u[k] * (hi[k] - lo[k]);
    const double f = objective(x);
    ++used;
    if (f < best_f || used == 1) {
      best_f = f;
      best = x;
    }
  }
  if (!std::isfinite(best_f)) return {best, best_f};

  constexpr double g = 0.6180339887498949;
  std::vector<double> delta(p);
  for (std::size_t k = 0; k < p; ++k) delta[k] = 0.25 * (hi[k] - lo[k]);
  while (used < budget) {
    bool moved_any = false;
    for (std::size_t k = 0; k < p && used < budget; ++k) {
      double a = std::max(lo[k], best[k] - delta[k]);
      double b = std::min(hi[k], best[k] + delta[k]);
      if (b - a < 1e-9) continue;
      auto eval_at = [&](double t) {
        x = best;
        x[k] = t;
        ++used;
        const double f = objective(x);
        if (f < best_f) {
          best_f = f;
          best = x;
          moved_any = true;
        }
        return f;
      };
      double c = b - g * (b - a), d = a + g * (b - a);
      double fc = eval_at(c);
      if (used >= budget) break;
      double fd = eval_at(d);
      for (int it = 0; it < 6 && used < budget; ++it) {
        if (fc < fd) {
          b = d;
          d = c;
          fd = fc;
          c = b - g * (b - a);
          fc = eval_at(c);
        } else {
          a = c;
          c = d;
          fc = fd;
          d = a + g * (b - a);
          fd = eval_at(d);
        }
      }
    }
    double widest = 0.0;
    for (std::size_t k = 0; k < p; ++k) {
      if (!moved_any) delta[k] *= 0.5;
      widest = std::max(widest, delta[k]);
    }
    if (widest < 1e-7) break;
  }
  return {best, best_f};
}

inline void fill_from(KrigingModel &m, const Factorization &f) {
  m.chol = f.L;
  m.mu = f.mu;
  m.sigma2 = std::max(0.0, f.sigma2);
  m.alpha = f.alpha;
  m.rinv_one = f.rinv_one;
  m.one_rinv_one = f.one_rinv_one;
}

} // namespace detail

/// Fits a Kriging model. Inputs are normalized per column to [0, 1]; theta (and
/// the nugget when control.noise is set) are chosen by minimizing the
/// concentrated likelihood within control.model_fun_evals evaluations.
inline KrigingModel fit(const std::vector<std::vector<double>> &X,
                        std::span<const double> y, const SurrogateControl &control,
                        std::uint64_t seed) {
  const auto n = X.size();
  if (n < 2) throw SurrogateError("fit needs at least two observations");
  if (y.size() != n) throw SurrogateError("X and y lengths differ");
  const auto d = X.front().size();
  if (d < 1) throw SurrogateError("fit needs at least one input dimension");
  if (control.n_theta != 0 && static_cast<std::size_t>(control.n_theta) != d)
    throw SurrogateError("n_theta does not match the number of inputs");
  if (!(control.min_theta < control.max_theta))
    throw SurrogateError("min_theta must be below max_theta");
  if (control.model_fun_evals < 1) throw SurrogateError("model_fun_evals must be >= 1");
  if (control.cod_type != "norm")
    throw SurrogateError("unsupported cod_type '" + control.cod_type + "'");

  KrigingModel m;
  m.x_min.assign(d, std::numeric_limits<double>::infinity());
  m.x_max.assign(d, -std::numeric_limits<double>::infinity());
  for (const auto &row : X) {
    if (row.size() != d) throw SurrogateError("ragged input matrix");
    for (std::size_t k = 0; k < d; ++k) {
      if (!std::isfinite(row[k])) throw SurrogateError("non-finite input");
      m.x_min[k] = std::min(m.x_min[k], row[k]);
      m.x_max[k] = std::max(m.x_max[k], row[k]);
    }
  }
  m.X.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  m.y.resize(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(y[i])) throw SurrogateError("non-finite observation");
    m.y[static_cast<Eigen::Index>(i)] = y[i];
    m.X.row(static_cast<Eigen::Index>(i)) = m.normalize(X[i]).transpose();
  }

  const bool constant = m.y.maxCoeff() == m.y.minCoeff();
  if (constant) {
    // Flat data: constant predictor with zero process variance.
    m.theta_log10.assign(d, control.max_theta);
    for (double jitter = detail::kJitterFloor; jitter <= detail::kJitterCeiling * 1.001;
         jitter *= 10) {
      if (auto f = detail::factorize(m.X, m.y, m.theta_log10, jitter)) {
        m.nugget = jitter;
        detail::fill_from(m, *f);
        break;
      }
    }
    m.mu = m.y[0];
    m.sigma2 = 0.0;
    m.alpha = Eigen::VectorXd::Zero(m.y.size());
    m.nll = -std::numeric_limits<double>::infinity();
    return m;
  }

  std::vector<double> lo(d, control.min_theta), hi(d, control.max_theta);
  if (control.noise) {
    lo.push_back(detail::kNuggetLog10Min);
    hi.push_back(detail::kNuggetLog10Max);
  }
  for (double jitter = detail::kJitterFloor; jitter <= detail::kJitterCeiling * 1.001;
       jitter *= 10) {
    auto nugget_of = [&](const std::vector<double> &p) {
      return control.noise ? std::pow(10.0, p[d]) + jitter : jitter;
    };
    auto objective = [&](const std::vector<double> &p) {
      return neg_log_likelihood(m.X, m.y, std::span<const double>(p.data(), d),
                                nugget_of(p));
    };
    int used = 0;
    auto [best, best_f] = detail::screen_and_refine(objective, lo, hi,
                                                    control.model_fun_evals, seed, used);
    m.likelihood_evals += used;
    if (!std::isfinite(best_f)) continue;
    m.theta_log10.assign(best.begin(), best.begin() + static_cast<long>(d));
    m.nugget = nugget_of(best);
    auto f = detail::factorize(m.X, m.y, m.theta_log10, m.nugget);
    if (!f) continue;
    detail::fill_from(m, *f);
    m.nll = best_f;
    return m;
  }
  throw SurrogateError("correlation matrix is not positive definite after jitter escalation");
}

/// Kriging mean and variance at x (raw input units).
inline Prediction predict(const KrigingModel &m, std::span<const double> x) {
  const Eigen::VectorXd u = m.normalize(x);
  const auto n = m.X.rows();
  Eigen::VectorXd r(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double s = 0.0;
    for (Eigen::Index k = 0; k < m.X.cols(); ++k) {
      const double diff = m.X(i, k) - u[k];
      s += std::pow(10.0, m.theta_log10[static_cast<std::size_t>(k)]) * diff * diff;
    }
    r[i] = std::exp(-s);
  }
  Prediction p;
  p.mean = m.mu + r.dot(m.alpha);
  if (m.sigma2 <= 0.0 || m.chol.size() == 0) {
    p.variance = 0.0;
    return p;
  }
  const Eigen::VectorXd v = m.chol.triangularView<Eigen::Lower>().solve(r);
  const double one_minus = 1.0 - m.rinv_one.dot(r);
  const double s = 1.0 - v.squaredNorm() + one_minus * one_minus / m.one_rinv_one;
  p.variance = std::max(0.0, m.sigma2 * s);
  return p;
}

inline nlohmann::json to_json(const KrigingModel &m) {
  nlohmann::json j;
  j["theta_log10"] = m.theta_log10;
  j["nugget"] = m.nugget;
  j["mu"] = m.mu;
  j["sigma2"] = m.sigma2;
  j["x_min"] = m.x_min;
  j["x_max"] = m.x_max;
  j["nll"] = std::isfinite(m.nll) ? nlohmann::json(m.nll) : nlohmann::json();
  std::vector<std::vector<double>> rows;
  for (Eigen::Index i = 0; i < m.X.rows(); ++i) {
    std::vector<double> row(static_cast<std::size_t>(m.X.cols()));
    for (Eigen::Index k = 0; k < m.X.cols(); ++k)
      row[static_cast<std::size_t>(k)] = m.X(i, k);
    rows.push_back(std::move(row));
  }
  j["X"] = rows;
  j["y"] = std::vector<double>(m.y.data(), m.y.data() + m.y.size());
  return j;
}

/// Rebuilds a model from its JSON form; the factorization is recomputed.
inline KrigingModel model_from_json(const nlohmann::json &j) {
  KrigingModel m;
  m.theta_log10 = j.at("theta_log10").get<std::vector<double>>();
  m.nugget = j.at("nugget").get<double>();
  m.x_min = j.at("x_min").get<std::vector<double>>();
  m.x_max = j.at("x_max").get<std::vector<double>>();
  const auto rows = j.at("X").get<std::vector<std::vector<double>>>();
  const auto ys = j.at("y").get<std::vector<double>>();
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto d = static_cast<Eigen::Index>(m.x_min.size());
  m.X.resize(n, d);
  m.y.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    m.y[i] = ys.at(static_cast<std::size_t>(i));
    for (Eigen::Index k = 0; k < d; ++k)
      m.X(i, k) = rows[static_cast<std::size_t>(i)].at(static_cast<std::size_t>(k));
  }
  auto f = detail::factorize(m.X, m.y, m.theta_log10, m.nugget);
  if (!f) throw SurrogateError("stored model is not factorizable");
  detail::fill_from(m, *f);
  if (j.at("sigma2").get<double>() == 0.0) {
    // Constant predictor from flat data.
    m.sigma2 = 0.0;
    m.mu = j.at("mu").get<double>();
    m.alpha = Eigen::VectorXd::Zero(n);
  }
  m.nll = j.at("nll").is_null() ? -std::numeric_limits<double>::infinity()
                                : j.at("nll").get<double>();
  return m;
}

} // namespace spotkit
