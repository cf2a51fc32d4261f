#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "spotkit/detail/io.hpp"

namespace spotkit {

using json = nlohmann::json;

class SpaceError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

enum class ParamKind { Int, Float, Boolean, Factor };
enum class Transform { None, Power2Int };

inline std::string to_string(ParamKind kind) {
  switch (kind) {
  case ParamKind::Int: return "int";
  case ParamKind::Float: return "float";
  case ParamKind::Boolean: return "bool";
  case ParamKind::Factor: return "factor";
  }
  return "?";
}

inline std::string to_string(Transform t) {
  return t == Transform::Power2Int ? "transform_power_2_int" : "None";
}

/// Natural-unit value of one hyperparameter: an integer (after transform), a
/// real, or a factor level.
using ParamValue = std::variant<std::int64_t, double, std::string>;

inline json to_json(const ParamValue &v) {
  return std::visit([](const auto &x) { return json(x); }, v);
}

inline double as_double(const ParamValue &v) {
  if (auto *i = std::get_if<std::int64_t>(&v)) return static_cast<double>(*i);
  if (auto *d = std::get_if<double>(&v)) return *d;
  throw SpaceError("factor level has no numeric value");
}

/// name -> natural value. Keys are kept sorted, which is also the canonical
/// JSON order.
using Config = std::map<std::string, ParamValue>;

inline json to_json(const Config &config) {
  json out = json::object();
  for (const auto &[k, v] : config) out[k] = to_json(v);
  return out;
}

struct ParamSpec {
  std::string name;
  ParamKind kind = ParamKind::Float;
  Transform transform = Transform::None;
  double lower = 0.0;
  double upper = 0.0;
  // Internal-unit default, always inside [lower, upper]. For factors this is
  // the level index.
  double default_value = 0.0;
  // The default as written in the hyper-dict document. Bounds modifications
  // clamp `default_value` but leave this untouched.
  json declared_default;
  std::vector<std::string> levels;
  // Every level the document offered; modify_levels may only pick from these.
  std::vector<std::string> level_universe;
  std::string value_type;
  std::string class_name;

  bool is_factor() const { return kind == ParamKind::Factor; }
  bool is_integral() const { return kind != ParamKind::Float; }
  bool is_fixed() const {
    return is_factor() ? levels.size() == 1 : lower == upper;
  }
};

namespace detail {

inline double round_half_away(double x) { return std::round(x); }

inline std::int64_t pow2(std::int64_t k) {
  if (k < 0 || k > 62) throw SpaceError("power_2_int exponent out of range");
  return std::int64_t{1} << k;
}

} // namespace detail

/// Maps an internal value to natural units. Integral kinds are rounded first;
/// factor indices decode to their level string.
inline ParamValue apply_transform(const ParamSpec &spec, double raw) {
  if (!std::isfinite(raw)) throw SpaceError(spec.name + ": non-finite value");
  const double v = spec.is_integral() ? detail::round_half_away(raw) : raw;
  if (v < spec.lower || v > spec.upper) {
    throw SpaceError(spec.name + ": value " + detail::shortest(raw) +
                     " outside [" + detail::shortest(spec.lower) + ", " +
                     detail::shortest(spec.upper) + "]");
  }
  switch (spec.kind) {
  case ParamKind::Factor: {
    const auto idx = static_cast<std::size_t>(v);
    if (idx >= spec.levels.size())
      throw SpaceError(spec.name + ": level index out of range");
    return spec.levels[idx];
  }
  case ParamKind::Float:
    return v;
  case ParamKind::Int:
  case ParamKind::Boolean: {
    const auto k = static_cast<std::int64_t>(v);
    if (spec.transform == Transform::Power2Int) return detail::pow2(k);
    return k;
  }
  }
  return v;
}

/// Inverse of apply_transform for a single value.
inline double invert_transform(const ParamSpec &spec, const ParamValue &value) {
  if (spec.is_factor()) {
    const auto *level = std::get_if<std::string>(&value);
    if (!level) throw SpaceError(spec.name + ": expected a level string");
    auto it = std::find(spec.levels.begin(), spec.levels.end(), *level);
    if (it == spec.levels.end())
      throw SpaceError(spec.name + ": unknown level '" + *level + "'");
    return static_cast<double>(it - spec.levels.begin());
  }
  if (std::holds_alternative<std::string>(value))
    throw SpaceError(spec.name + ": expected a number");
  const double v = as_double(value);
  if (spec.is_integral() && spec.transform == Transform::Power2Int) {
    const double k = std::log2(v);
    if (v <= 0 || k != std::round(k))
      throw SpaceError(spec.name + ": " + detail::shortest(v) +
                       " is not a power of two");
    return k;
  }
  return v;
}

class SearchSpace {
public:
  SearchSpace() = default;
  explicit SearchSpace(std::vector<ParamSpec> params) : params_(std::move(params)) {
    for (std::size_t i = 0; i < params_.size(); ++i)
      for (std::size_t j = 0; j < i; ++j)
        if (params_[i].name == params_[j].name)
          throw SpaceError("duplicate parameter name '" + params_[i].name + "'");
  }

  const std::vector<ParamSpec> &params() const { return params_; }
  std::size_t size() const { return params_.size(); }
  bool empty() const { return params_.empty(); }
  const ParamSpec &operator[](std::size_t i) const { return params_[i]; }

  std::optional<std::size_t> index_of(std::string_view name) const {
    for (std::size_t i = 0; i < params_.size(); ++i)
      if (params_[i].name == name) return i;
    return std::nullopt;
  }

  const ParamSpec &at(std::string_view name) const {
    auto i = index_of(name);
    if (!i) throw SpaceError("unknown parameter '" + std::string(name) + "'");
    return params_[*i];
  }

  /// Indices of non-fixed parameters in declaration order.
  std::vector<std::size_t> active_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < params_.size(); ++i)
      if (!params_[i].is_fixed()) out.push_back(i);
    return out;
  }

  std::size_t active_dims() const { return active_indices().size(); }

  std::vector<double> lower() const {
    std::vector<double> v;
    for (const auto &p : params_) v.push_back(p.lower);
    return v;
  }
  std::vector<double> upper() const {
    std::vector<double> v;
    for (const auto &p : params_) v.push_back(p.upper);
    return v;
  }

  /// Internal vector holding every parameter's default.
  std::vector<double> default_internal() const {
    std::vector<double> v;
    for (const auto &p : params_) v.push_back(p.default_value);
    return v;
  }

private:
  friend SearchSpace modify_bounds(const SearchSpace &, std::string_view,
                                   double, double);
  friend SearchSpace modify_levels(const SearchSpace &, std::string_view,
                                   const std::vector<std::string> &);
  std::vector<ParamSpec> params_;
};

namespace detail {

inline ParamKind parse_kind(const std::string &s, const std::string &name) {
  if (s == "int") return ParamKind::Int;
  if (s == "float") return ParamKind::Float;
  if (s == "bool" || s == "boolean") return ParamKind::Boolean;
  if (s == "factor") return ParamKind::Factor;
  throw SpaceError(name + ": unknown type '" + s + "'");
}

inline Transform parse_transform(const json &j, const std::string &name) {
  if (j.is_null()) return Transform::None;
  if (!j.is_string()) throw SpaceError(name + ": transform must be a string");
  const auto s = j.get<std::string>();
  if (s == "None" || s.empty()) return Transform::None;
  if (s == "transform_power_2_int") return Transform::Power2Int;
  throw SpaceError(name + ": unknown transform '" + s + "'");
}

inline double number_field(const json &entry, const char *key,
                           const std::string &name) {
  auto it = entry.find(key);
  if (it == entry.end()) throw SpaceError(name + ": missing \"" + key + "\"");
  if (!it->is_number()) throw SpaceError(name + ": \"" + key + "\" must be a number");
  return it->get<double>();
}

inline void settle_default(ParamSpec &spec) {
  if (spec.is_factor()) {
    auto it = spec.declared_default.is_string()
                  ? std::find(spec.levels.begin(), spec.levels.end(),
                              spec.declared_default.get<std::string>())
                  : spec.levels.end();
    spec.default_value =
        it == spec.levels.end() ? 0.0 : static_cast<double>(it - spec.levels.begin());
    return;
  }
  double d = spec.declared_default.is_number() ? spec.declared_default.get<double>()
             : spec.declared_default.is_boolean()
                 ? (spec.declared_default.get<bool>() ? 1.0 : 0.0)
                 : spec.lower;
  if (spec.is_integral()) d = std::round(d);
  spec.default_value = std::clamp(d, spec.lower, spec.upper);
}

inline ParamSpec parse_param(const std::string &name, const json &entry) {
  if (!entry.is_object()) throw SpaceError(name + ": entry must be an object");
  ParamSpec spec;
  spec.name = name;
  auto type = entry.find("type");
  if (type == entry.end() || !type->is_string())
    throw SpaceError(name + ": missing \"type\"");
  spec.kind = parse_kind(type->get<std::string>(), name);
  spec.transform = parse_transform(entry.value("transform", json()), name);
  if (spec.transform == Transform::Power2Int && !spec.is_integral())
    throw SpaceError(name + ": transform_power_2_int requires an int parameter");
  spec.declared_default = entry.value("default", json());

  if (spec.is_factor()) {
    auto levels = entry.find("levels");
    if (levels == entry.end() || !levels->is_array())
      throw SpaceError(name + ": factor requires a \"levels\" array");
    for (const auto &l : *levels) {
      if (!l.is_string()) throw SpaceError(name + ": levels must be strings");
      spec.levels.push_back(l.get<std::string>());
    }
    if (spec.levels.empty()) throw SpaceError(name + ": factor with empty levels");
    spec.level_universe = spec.levels;
    spec.lower = 0.0;
    spec.upper = static_cast<double>(spec.levels.size() - 1);
    spec.value_type = entry.value("core_model_parameter_type", std::string("str"));
    spec.class_name = entry.value("class_name", std::string());
  } else {
    spec.lower = number_field(entry, "lower", name);
    spec.upper = number_field(entry, "upper", name);
    if (spec.is_integral() &&
        (spec.lower != std::round(spec.lower) || spec.upper != std::round(spec.upper)))
      throw SpaceError(name + ": integer bounds must be whole numbers");
    if (spec.kind == ParamKind::Boolean && (spec.lower < 0 || spec.upper > 1))
      throw SpaceError(name + ": boolean bounds must lie in {0, 1}");
  }
  if (spec.lower > spec.upper) throw SpaceError(name + ": lower > upper");
  settle_default(spec);
  return spec;
}

} // namespace detail

/// Parses the block `model_name` of a hyper-dict document, keeping the order
/// in which parameters appear in the text.
inline SearchSpace parse_hyper_dict(std::string_view text,
                                    std::string_view model_name) {
  try {
    // ordered_json keeps document order; plain json would sort keys.
    auto ordered = nlohmann::ordered_json::parse(text);
    auto it = ordered.find(std::string(model_name));
    if (!ordered.is_object() || it == ordered.end())
      throw SpaceError("hyper-dict has no entry for model '" +
                       std::string(model_name) + "'");
    if (!it->is_object())
      throw SpaceError("model entry '" + std::string(model_name) +
                       "' must be an object");
    std::vector<ParamSpec> params;
    for (const auto &[name, entry] : it->items())
      params.push_back(detail::parse_param(name, json::parse(entry.dump())));
    return SearchSpace(std::move(params));
  } catch (const nlohmann::json::exception &e) {
    throw SpaceError(std::string("malformed hyper-dict: ") + e.what());
  }
}

/// Canonical document: object keys alphabetical, parameters as an object under
/// the model name. Parameter order is carried by an explicit "order" array.
inline json serialize_hyper_dict(const SearchSpace &space,
                                 std::string_view model_name) {
  json params = json::object();
  json order = json::array();
  for (const auto &p : space.params()) {
    json e;
    e["type"] = to_string(p.kind);
    e["transform"] = to_string(p.transform);
    e["default"] = p.declared_default;
    if (p.is_factor()) {
      e["levels"] = p.levels;
      e["lower"] = 0;
      e["upper"] = static_cast<std::int64_t>(p.levels.size() - 1);
      e["core_model_parameter_type"] = p.value_type;
      if (!p.class_name.empty()) e["class_name"] = p.class_name;
    } else if (p.is_integral()) {
      e["lower"] = static_cast<std::int64_t>(p.lower);
      e["upper"] = static_cast<std::int64_t>(p.upper);
    } else {
      e["lower"] = p.lower;
      e["upper"] = p.upper;
    }
    params[p.name] = e;
    order.push_back(p.name);
  }
  json out;
  out[std::string(model_name)] = params;
  out["order"] = order;
  return out;
}

/// Reads back the canonical form written by serialize_hyper_dict.
inline SearchSpace deserialize_hyper_dict(const json &doc,
                                          std::string_view model_name) {
  const auto &block = doc.at(std::string(model_name));
  std::vector<ParamSpec> params;
  for (const auto &name : doc.at("order"))
    params.push_back(detail::parse_param(name.get<std::string>(),
                                         block.at(name.get<std::string>())));
  return SearchSpace(std::move(params));
}

/// Replaces the bounds of a numeric parameter. Equal bounds fix it; the
/// internal default is clamped into the new range.
inline SearchSpace modify_bounds(const SearchSpace &space, std::string_view name,
                                 double lower, double upper) {
  auto idx = space.index_of(name);
  if (!idx) throw SpaceError("unknown parameter '" + std::string(name) + "'");
  SearchSpace out = space;
  auto &p = out.params_[*idx];
  if (p.is_factor())
    throw SpaceError(p.name + ": use modify_levels for factor parameters");
  if (lower > upper) throw SpaceError(p.name + ": lower > upper");
  if (p.is_integral() && (lower != std::round(lower) || upper != std::round(upper)))
    throw SpaceError(p.name + ": integer bounds must be whole numbers");
  p.lower = lower;
  p.upper = upper;
  detail::settle_default(p);
  return out;
}

/// Replaces the level list of a factor with a non-empty subset of its original
/// levels. A single level fixes the factor.
inline SearchSpace modify_levels(const SearchSpace &space, std::string_view name,
                                 const std::vector<std::string> &levels) {
  auto idx = space.index_of(name);
  if (!idx) throw SpaceError("unknown parameter '" + std::string(name) + "'");
  SearchSpace out = space;
  auto &p = out.params_[*idx];
  if (!p.is_factor()) throw SpaceError(p.name + ": not a factor parameter");
  if (levels.empty()) throw SpaceError(p.name + ": empty level list");
  for (const auto &l : levels)
    if (std::find(p.level_universe.begin(), p.level_universe.end(), l) ==
        p.level_universe.end())
      throw SpaceError(p.name + ": unknown level '" + l + "'");
  p.levels = levels;
  p.upper = static_cast<double>(levels.size() - 1);
  detail::settle_default(p);
  return out;
}

/// Natural-unit configuration -> internal vector (spec order).
inline std::vector<double> to_internal(const SearchSpace &space,
                                       const Config &config) {
  std::vector<double> out;
  out.reserve(space.size());
  for (const auto &p : space.params()) {
    auto it = config.find(p.name);
    if (it == config.end()) throw SpaceError("config lacks '" + p.name + "'");
    out.push_back(invert_transform(p, it->second));
  }
  return out;
}

/// Internal vector (spec order, fixed dims included) -> natural configuration.
inline Config from_internal(const SearchSpace &space, std::span<const double> x) {
  if (x.size() != space.size())
    throw SpaceError("vector length " + std::to_string(x.size()) +
                     " does not match " + std::to_string(space.size()) +
                     " parameters");
  Config out;
  for (std::size_t i = 0; i < space.size(); ++i)
    out[space[i].name] = apply_transform(space[i], x[i]);
  return out;
}

/// Rounds integral dimensions and clamps every dimension into its bounds.
inline void snap_to_lattice(const SearchSpace &space, std::span<double> x) {
  for (std::size_t i = 0; i < space.size(); ++i) {
    const auto &p = space[i];
    double v = std::clamp(x[i], p.lower, p.upper);
    if (p.is_integral()) v = std::clamp(std::round(v), p.lower, p.upper);
    x[i] = v;
  }
}

/// Maps a point of the unit cube over the active dimensions to a full internal
/// vector. Integral dimensions give every lattice value an equal share of
/// [0, 1]; fixed dimensions sit at their fixed value.
inline std::vector<double> unit_to_internal(const SearchSpace &space,
                                            std::span<const double> unit) {
  const auto active = space.active_indices();
  if (unit.size() != active.size())
    throw SpaceError("unit vector has wrong dimension");
  std::vector<double> x(space.size());
  for (std::size_t i = 0; i < space.size(); ++i) x[i] = space[i].lower;
  for (std::size_t k = 0; k < active.size(); ++k) {
    const auto &p = space[active[k]];
    const double u = std::clamp(unit[k], 0.0, 1.0);
    if (p.is_integral()) {
      const double cells = p.upper - p.lower + 1.0;
      x[active[k]] = std::min(p.upper, p.lower + std::floor(u * cells));
    } else {
      x[active[k]] = p.lower + u * (p.upper - p.lower);
    }
  }
  return x;
}

// --- design table -------------------------------------------------------

struct ResultColumns {
  std::vector<double> tuned;      // internal vector, spec order
  std::vector<double> importance; // 0..100 per parameter, spec order
  std::vector<std::string> stars;
};

struct DesignRow {
  std::string name, type, default_text, lower, upper, transform;
  std::string tuned, importance, stars; // filled only with results
};

namespace detail {

inline std::string default_text(const ParamSpec &p) {
  const auto &d = p.declared_default;
  if (d.is_string()) return d.get<std::string>();
  if (d.is_boolean()) return d.get<bool>() ? "1" : "0";
  if (d.is_number_integer()) return std::to_string(d.get<std::int64_t>());
  if (d.is_number()) {
    const double v = d.get<double>();
    return p.is_integral() ? std::to_string(static_cast<std::int64_t>(v))
                           : float_repr(v);
  }
  return "None";
}

} // namespace detail

/// One row per parameter: name, type, default, lower, upper, transform; with
/// results also tuned value, importance and stars.
inline std::vector<DesignRow>
gen_design_table(const SearchSpace &space,
                 const std::optional<ResultColumns> &results = std::nullopt) {
  std::vector<DesignRow> rows;
  for (std::size_t i = 0; i < space.size(); ++i) {
    const auto &p = space[i];
    DesignRow r;
    r.name = p.name;
    r.type = to_string(p.kind);
    r.default_text = detail::default_text(p);
    r.transform = to_string(p.transform);
    if (results) {
      r.lower = detail::float_repr(p.lower);
      r.upper = detail::float_repr(p.upper);
      r.tuned = detail::float_repr(results->tuned.at(i));
      r.importance = detail::fixed(results->importance.at(i), 2);
      r.stars = results->stars.at(i);
      if (p.transform == Transform::Power2Int) r.transform = "pow_2_int";
    } else {
      r.lower = detail::shortest(p.lower);
      r.upper = detail::shortest(p.upper);
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

inline std::vector<std::string> design_header(bool with_results) {
  if (with_results)
    return {"name", "type", "default", "lower", "upper",
            "tuned", "transform", "importance", "stars"};
  return {"name", "type", "default", "lower", "upper", "transform"};
}

inline std::vector<std::string> design_fields(const DesignRow &r, bool with_results) {
  if (with_results)
    return {r.name, r.type, r.default_text, r.lower, r.upper,
            r.tuned, r.transform, r.importance, r.stars};
  return {r.name, r.type, r.default_text, r.lower, r.upper, r.transform};
}

inline std::string design_table_csv(const std::vector<DesignRow> &rows,
                                    bool with_results) {
  std::string out = detail::csv_row(design_header(with_results));
  for (const auto &r : rows) out += detail::csv_row(design_fields(r, with_results));
  return out;
}

/// Column-aligned plain text rendering.
inline std::string design_table_text(const std::vector<DesignRow> &rows,
                                     bool with_results) {
  std::vector<std::vector<std::string>> cells{design_header(with_results)};
  for (const auto &r : rows) cells.push_back(design_fields(r, with_results));
  std::vector<std::size_t> width(cells.front().size(), 0);
  for (const auto &row : cells)
    for (std::size_t c = 0; c < row.size(); ++c)
      width[c] = std::max(width[c], row[c].size());
  std::string out;
  for (std::size_t r = 0; r < cells.size(); ++r) {
    std::string line;
    for (std::size_t c = 0; c < cells[r].size(); ++c) {
      if (c) line += " | ";
      line += cells[r][c];
      line.append(width[c] - cells[r][c].size(), ' ');
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    out += line + '\n';
    if (r == 0) {
      std::string rule;
      for (std::size_t c = 0; c < width.size(); ++c) {
        if (c) rule += "-|-";
        rule.append(width[c], '-');
      }
      out += rule + '\n';
    }
  }
  return out;
}

} // namespace spotkit
