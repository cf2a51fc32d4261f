#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "spotkit/detail/io.hpp"
#include "spotkit/detail/random.hpp"

namespace spotkit {

struct DesignControl {
  int init_size = 10;
  int repeats = 1;
  std::uint64_t seed = 123;
};

/// Rows are points of the unit cube over the active dimensions.
using DesignMatrix = std::vector<std::vector<double>>;

/// Latin hypercube with uniform jitter inside each stratum. Every base point is
/// emitted `repeats` times in a row. A single-point design sits at the centre.
inline DesignMatrix latin_hypercube(const DesignControl &control, int dims) {
  if (dims < 1) throw std::invalid_argument("latin_hypercube: dims must be >= 1");
  if (control.init_size < 1 || control.repeats < 1)
    throw std::invalid_argument("latin_hypercube: init_size and repeats must be >= 1");
  const auto n = static_cast<std::size_t>(control.init_size);
  DesignMatrix base(n, std::vector<double>(static_cast<std::size_t>(dims)));
  detail::Rng rng(control.seed);
  for (int d = 0; d < dims; ++d) {
    const auto strata = detail::permutation(n, rng);
    for (std::size_t i = 0; i < n; ++i) {
      const double jitter = n == 1 ? 0.5 : detail::unit_uniform(rng);
      base[i][static_cast<std::size_t>(d)] =
          (static_cast<double>(strata[i]) + jitter) / static_cast<double>(n);
    }
  }
  DesignMatrix out;
  out.reserve(n * static_cast<std::size_t>(control.repeats));
  for (const auto &row : base)
    for (int r = 0; r < control.repeats; ++r) out.push_back(row);
  return out;
}

inline std::string design_csv(const DesignMatrix &m) {
  std::string out;
  for (const auto &row : m) {
    std::vector<std::string> fields;
    for (double v : row) fields.push_back(detail::shortest(v));
    out += detail::csv_row(fields);
  }
  return out;
}

} // namespace spotkit
