#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "spotkit/detail/io.hpp"
#include "spotkit/detail/random.hpp"

namespace spotkit::toynet {

inline constexpr int kNumClasses = 10;

struct Dataset {
  std::size_t input_dim = 0;
  std::vector<double> features; // row-major, size() x input_dim
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }

  /// Columns are the samples picked by `rows` (input_dim x rows.size()).
  Eigen::MatrixXd batch(std::span<const std::size_t> rows) const {
    Eigen::MatrixXd X(static_cast<Eigen::Index>(input_dim),
                      static_cast<Eigen::Index>(rows.size()));
    for (std::size_t c = 0; c < rows.size(); ++c)
      for (std::size_t k = 0; k < input_dim; ++k)
        X(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(c)) =
            features[rows[c] * input_dim + k];
    return X;
  }

  std::vector<int> batch_labels(std::span<const std::size_t> rows) const {
    std::vector<int> out;
    out.reserve(rows.size());
    for (auto r : rows) out.push_back(labels[r]);
    return out;
  }

  Dataset subset(std::span<const std::size_t> rows) const {
    Dataset d;
    d.input_dim = input_dim;
    for (auto r : rows) {
      d.features.insert(d.features.end(),
                        features.begin() + static_cast<long>(r * input_dim),
                        features.begin() + static_cast<long>((r + 1) * input_dim));
      d.labels.push_back(labels[r]);
    }
    return d;
  }

  std::string to_csv() const {
    std::string out;
    std::vector<std::string> header;
    for (std::size_t k = 0; k < input_dim; ++k) header.push_back("x" + std::to_string(k));
    header.push_back("label");
    out += detail::csv_row(header);
    for (std::size_t i = 0; i < size(); ++i) {
      std::vector<std::string> row;
      for (std::size_t k = 0; k < input_dim; ++k)
        row.push_back(detail::shortest(features[i * input_dim + k]));
      row.push_back(std::to_string(labels[i]));
      out += detail::csv_row(row);
    }
    return out;
  }
};

struct DatasetSplit {
  Dataset train;
  Dataset test;
};

// Spread of the class centres relative to the unit within-class noise.
inline constexpr double kCenterScale = 0.7;

/// Ten Gaussian clusters with seed-fixed centres; labels are balanced and the
/// shuffled samples are split 80/20 into train and test.
inline DatasetSplit generate_dataset(std::size_t n, std::size_t input_dim,
                                     std::uint64_t seed) {
  if (n < 20) throw std::invalid_argument("generate_dataset: n must be >= 20");
  if (input_dim < 1) throw std::invalid_argument("generate_dataset: input_dim must be >= 1");
  detail::Rng rng(seed);
  std::vector<double> centers(kNumClasses * input_dim);
  for (auto &c : centers) c = kCenterScale * detail::normal(rng);

  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % kNumClasses);
  detail::shuffle(std::span<int>(labels), rng);

  Dataset all;
  all.input_dim = input_dim;
  all.labels = labels;
  all.features.resize(n * input_dim);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < input_dim; ++k)
      all.features[i * input_dim + k] =
          centers[static_cast<std::size_t>(labels[i]) * input_dim + k] + detail::normal(rng);

  const std::size_t n_train = n * 8 / 10;
  std::vector<std::size_t> train_rows(n_train), test_rows(n - n_train);
  for (std::size_t i = 0; i < n_train; ++i) train_rows[i] = i;
  for (std::size_t i = n_train; i < n; ++i) test_rows[i - n_train] = i;
  return {all.subset(train_rows), all.subset(test_rows)};
}

/// Fully connected classifier input -> l1 -> l2 -> 10 with rectifier
/// activations. All weights live in one flat vector.
class ToyNet {
public:
  ToyNet(std::size_t input_dim, std::size_t l1, std::size_t l2, std::uint64_t seed)
      : input_dim_(input_dim), l1_(l1), l2_(l2) {
    if (input_dim == 0 || l1 == 0 || l2 == 0)
      throw std::invalid_argument("ToyNet: layer widths must be positive");
    params_.resize(parameter_count());
    reset_weights(seed);
  }

  std::size_t input_dim() const { return input_dim_; }
  std::size_t l1() const { return l1_; }
  std::size_t l2() const { return l2_; }

  std::size_t parameter_count() const {
    return l1_ * input_dim_ + l1_ + l2_ * l1_ + l2_ + kNumClasses * l2_ + kNumClasses;
  }

  std::vector<double> &params() { return params_; }
  const std::vector<double> &params() const { return params_; }

  /// Uniform in +-1/sqrt(fan_in) for weights and biases, drawn from `seed`.
  void reset_weights(std::uint64_t seed) {
    detail::Rng rng(seed);
    std::size_t off = 0;
    auto fill = [&](std::size_t count, std::size_t fan_in) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (std::size_t i = 0; i < count; ++i)
        params_[off++] = detail::uniform(rng, -bound, bound);
    };
    fill(l1_ * input_dim_, input_dim_);
    fill(l1_, input_dim_);
    fill(l2_ * l1_, l1_);
    fill(l2_, l1_);
    fill(kNumClasses * l2_, l2_);
    fill(kNumClasses, l2_);
  }

  /// Logits, one column per sample.
  Eigen::MatrixXd forward(const Eigen::MatrixXd &X) const {
    check_input(X);
    Cache c = run(X);
    return c.Z;
  }

  struct LossGrad {
    double loss = 0.0;
    std::vector<double> grad;
  };

  /// Mean cross-entropy over the batch and its gradient w.r.t. params().
  LossGrad loss_and_grad(const Eigen::MatrixXd &X, std::span<const int> labels) const {
    check_input(X);
    if (static_cast<std::size_t>(X.cols()) != labels.size())
      throw std::invalid_argument("loss_and_grad: label count mismatch");
    const Cache c = run(X);
    const auto B = X.cols();
    const double inv_b = 1.0 / static_cast<double>(B);

    Eigen::MatrixXd dZ(kNumClasses, B);
    double loss = 0.0;
    for (Eigen::Index j = 0; j < B; ++j) {
      const int y = labels[static_cast<std::size_t>(j)];
      if (y < 0 || y >= kNumClasses) throw std::invalid_argument("label out of range");
      const double mx = c.Z.col(j).maxCoeff();
      const Eigen::ArrayXd e = (c.Z.col(j).array() - mx).exp();
      const double sum = e.sum();
      loss += std::log(sum) + mx - c.Z(y, j);
      dZ.col(j) = (e / sum).matrix();
      dZ(y, j) -= 1.0;
    }
    dZ *= inv_b;

    LossGrad out;
    out.loss = loss * inv_b;
    out.grad.assign(parameter_count(), 0.0);
    Views g = views(out.grad.data());
    const Views w = views(const_cast<double *>(params_.data()));

    g.W3.noalias() = dZ * c.H2.transpose();
    g.b3 = dZ.rowwise().sum();
    Eigen::MatrixXd dH2 = w.W3.transpose() * dZ;
    dH2 = dH2.array() * (c.A2.array() > 0.0).cast<double>();
    g.W2.noalias() = dH2 * c.H1.transpose();
    g.b2 = dH2.rowwise().sum();
    Eigen::MatrixXd dH1 = w.W2.transpose() * dH2;
    dH1 = dH1.array() * (c.A1.array() > 0.0).cast<double>();
    g.W1.noalias() = dH1 * X.transpose();
    g.b1 = dH1.rowwise().sum();
    return out;
  }

  /// Mean cross-entropy only.
  double loss(const Eigen::MatrixXd &X, std::span<const int> labels) const {
    return cross_entropy(forward(X), labels);
  }

  static double cross_entropy(const Eigen::MatrixXd &logits, std::span<const int> labels) {
    if (static_cast<std::size_t>(logits.cols()) != labels.size())
      throw std::invalid_argument("cross_entropy: label count mismatch");
    double total = 0.0;
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
      const double mx = logits.col(j).maxCoeff();
      const double lse = std::log((logits.col(j).array() - mx).exp().sum()) + mx;
      total += lse - logits(labels[static_cast<std::size_t>(j)], j);
    }
    return total / static_cast<double>(logits.cols());
  }

private:
  using Mat = Eigen::Map<Eigen::MatrixXd>;
  using Vec = Eigen::Map<Eigen::VectorXd>;

  struct Views {
    Mat W1;
    Vec b1;
    Mat W2;
    Vec b2;
    Mat W3;
    Vec b3;
  };

  Views views(double *base) const {
    const auto in = static_cast<Eigen::Index>(input_dim_);
    const auto a = static_cast<Eigen::Index>(l1_);
    const auto b = static_cast<Eigen::Index>(l2_);
    double *p = base;
    Mat W1(p, a, in);
    p += a * in;
    Vec b1(p, a);
    p += a;
    Mat W2(p, b, a);
    p += b * a;
    Vec b2(p, b);
    p += b;
    Mat W3(p, kNumClasses, b);
    p += kNumClasses * b;
    Vec b3(p, kNumClasses);
    return {W1, b1, W2, b2, W3, b3};
  }

  struct Cache {
    Eigen::MatrixXd A1, H1, A2, H2, Z;
  };

  Cache run(const Eigen::MatrixXd &X) const {
    const Views w = views(const_cast<double *>(params_.data()));
    Cache c;
    c.A1 = (w.W1 * X).colwise() + Eigen::VectorXd(w.b1);
    c.H1 = c.A1.cwiseMax(0.0);
    c.A2 = (w.W2 * c.H1).colwise() + Eigen::VectorXd(w.b2);
    c.H2 = c.A2.cwiseMax(0.0);
    c.Z = (w.W3 * c.H2).colwise() + Eigen::VectorXd(w.b3);
    return c;
  }

  void check_input(const Eigen::MatrixXd &X) const {
    if (static_cast<std::size_t>(X.rows()) != input_dim_)
      throw std::invalid_argument("ToyNet: batch feature dimension mismatch");
  }

  std::size_t input_dim_, l1_, l2_;
  std::vector<double> params_;
};

/// Fraction of columns whose arg-max (lowest index on ties) equals the label.
inline double accuracy(const Eigen::MatrixXd &logits, std::span<const int> labels) {
  if (static_cast<std::size_t>(logits.cols()) != labels.size())
    throw std::invalid_argument("accuracy: label count mismatch");
  if (labels.empty()) return 0.0;
  std::size_t correct = 0;
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < logits.rows(); ++k)
      if (logits(k, j) > logits(best, j)) best = k;
    if (best == labels[static_cast<std::size_t>(j)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

} // namespace spotkit::toynet
