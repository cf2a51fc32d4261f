#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "spotkit/detail/io.hpp"
#include "spotkit/searchspace.hpp"
#include "spotkit/surrogate.hpp"
#include "spotkit/tuner.hpp"

namespace spotkit::analysis {

class AnalysisError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

inline std::string stars(double importance) {
  if (importance >= 95.0) return "***";
  if (importance >= 50.0) return "**";
  if (importance >= 1.0) return "*";
  if (importance >= 0.1) return ".";
  return "";
}

struct ImportanceEntry {
  std::string name;
  double importance = 0.0;
  std::string stars;
  bool active = false;
};

using ImportanceReport = std::vector<ImportanceEntry>; // spec order

/// 100 * 10^theta_i / max_j 10^theta_j over the active dimensions, which are
/// the model's input columns in order. Fixed parameters report 0.
inline ImportanceReport importance(const KrigingModel &model, const SearchSpace &space) {
  const auto active = space.active_indices();
  if (model.theta_log10.size() != active.size())
    throw AnalysisError("model has " + std::to_string(model.theta_log10.size()) +
                        " activities for " + std::to_string(active.size()) + " active parameters");
  ImportanceReport out;
  for (const auto &p : space.params()) out.push_back({p.name, 0.0, "", false});
  if (active.empty()) return out;
  const double top = *std::max_element(model.theta_log10.begin(), model.theta_log10.end());
  for (std::size_t k = 0; k < active.size(); ++k) {
    auto &e = out[active[k]];
    e.active = true;
    e.importance = 100.0 * std::pow(10.0, model.theta_log10[k] - top);
  }
  for (auto &e : out) e.stars = stars(e.importance);
  return out;
}

/// Unordered pairs of active parameters whose importance exceeds
/// threshold * 100, in spec order.
inline std::vector<std::pair<std::string, std::string>>
select_important_pairs(const ImportanceReport &report, double threshold) {
  std::vector<std::string> keep;
  for (const auto &e : report)
    if (e.active && e.importance > threshold * 100.0) keep.push_back(e.name);
  std::vector<std::pair<std::string, std::string>> pairs;
  for (std::size_t i = 0; i < keep.size(); ++i)
    for (std::size_t j = i + 1; j < keep.size(); ++j) pairs.emplace_back(keep[i], keep[j]);
  return pairs;
}

struct ProgressRow {
  std::size_t iter = 0;
  double y = 0.0;
  double best = 0.0;
  Phase phase = Phase::Initial;
};

inline std::vector<ProgressRow> export_progress(const RunState &state) {
  if (state.empty()) throw AnalysisError("export_progress: empty run state");
  std::vector<ProgressRow> rows;
  double best = state.y.front();
  for (std::size_t i = 0; i < state.y.size(); ++i) {
    best = std::min(best, state.y[i]);
    rows.push_back({i + 1, state.y[i], best, state.history[i].phase});
  }
  return rows;
}

struct ContourGrid {
  std::string a, b;
  std::vector<double> a_values, b_values; // internal units
  std::vector<std::vector<double>> mean;  // mean[i][j] at (a_values[i], b_values[j])
};

/// Values spaced evenly over [lower, upper]; integral axes are rounded onto
/// their lattice, which repeats values when grid exceeds the lattice size.
inline std::vector<double> axis_values(const ParamSpec &p, int grid) {
  std::vector<double> v;
  for (int i = 0; i < grid; ++i) {
    double x = p.lower + (p.upper - p.lower) * static_cast<double>(i) / (grid - 1);
    if (p.is_integral()) x = std::clamp(std::round(x), p.lower, p.upper);
    v.push_back(x);
  }
  return v;
}

/// Surrogate means on a grid over two parameters with every other dimension
/// held at `at` (a full internal vector).
inline ContourGrid export_contour(const KrigingModel &model, const SearchSpace &space,
                                  const std::string &a, const std::string &b, int grid,
                                  const std::vector<double> &at) {
  if (grid < 2) throw AnalysisError("contour grid must be >= 2");
  if (a == b) throw AnalysisError("contour needs two distinct parameters");
  const auto ia = space.index_of(a), ib = space.index_of(b);
  if (!ia || !ib) throw AnalysisError("unknown contour parameter");
  if (space[*ia].is_fixed() || space[*ib].is_fixed())
    throw AnalysisError("contour parameter is fixed");
  if (at.size() != space.size()) throw AnalysisError("reference point has wrong length");
  const auto active = space.active_indices();
  ContourGrid g{a, b, axis_values(space[*ia], grid), axis_values(space[*ib], grid), {}};
  auto x = at;
  for (double va : g.a_values) {
    std::vector<double> row;
    for (double vb : g.b_values) {
      x[*ia] = va;
      x[*ib] = vb;
      row.push_back(predict(model, detail::project(x, active)).mean);
    }
    g.mean.push_back(std::move(row));
  }
  return g;
}

/// One row per evaluation: each parameter normalized to [0, 1] by its bounds
/// (fixed parameters give 0), then y.
inline std::vector<std::vector<double>> export_parallel(const RunState &state,
                                                        const SearchSpace &space) {
  std::vector<std::vector<double>> rows;
  for (std::size_t r = 0; r < state.size(); ++r) {
    std::vector<double> row;
    for (std::size_t i = 0; i < space.size(); ++i) {
      const auto &p = space[i];
      const double span = p.upper - p.lower;
      row.push_back(span > 0 ? (state.X[r][i] - p.lower) / span : 0.0);
    }
    row.push_back(state.y[r]);
    rows.push_back(std::move(row));
  }
  return rows;
}

// --- CSV ------------------------------------------------------------------

inline std::string progress_csv(const std::vector<ProgressRow> &rows) {
  std::string out = detail::csv_row({"iter", "y", "best", "phase"});
  for (const auto &r : rows)
    out += detail::csv_row({std::to_string(r.iter), detail::shortest(r.y),
                            detail::shortest(r.best), to_string(r.phase)});
  return out;
}

inline std::string contour_csv(const ContourGrid &g) {
  std::string out = detail::csv_row({g.a, g.b, "mean"});
  for (std::size_t i = 0; i < g.a_values.size(); ++i)
    for (std::size_t j = 0; j < g.b_values.size(); ++j)
      out += detail::csv_row({detail::shortest(g.a_values[i]), detail::shortest(g.b_values[j]),
                              detail::shortest(g.mean[i][j])});
  return out;
}

inline std::string parallel_csv(const std::vector<std::vector<double>> &rows,
                                const SearchSpace &space) {
  std::vector<std::string> header;
  for (const auto &p : space.params()) header.push_back(p.name);
  header.push_back("y");
  std::string out = detail::csv_row(header);
  for (const auto &r : rows) {
    std::vector<std::string> f;
    for (double v : r) f.push_back(detail::shortest(v));
    out += detail::csv_row(f);
  }
  return out;
}

inline std::string importance_csv(const ImportanceReport &report) {
  std::string out = detail::csv_row({"name", "importance", "stars"});
  for (const auto &e : report)
    out += detail::csv_row({e.name, detail::fixed(e.importance, 2), e.stars});
  return out;
}

/// Result-table columns from a finished run and its final surrogate.
inline ResultColumns result_columns(const RunState &state, const ImportanceReport &report) {
  if (state.empty()) throw AnalysisError("result table needs a non-empty run");
  ResultColumns c;
  c.tuned = state.X[state.best_index];
  for (const auto &e : report) {
    c.importance.push_back(e.importance);
    c.stars.push_back(e.stars);
  }
  return c;
}

} // namespace spotkit::analysis
