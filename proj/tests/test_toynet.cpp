#include <gtest/gtest.h>

#include <map>

#include "spotkit/toynet.hpp"

using namespace spotkit::toynet;

namespace {

// Largest relative error between the analytic gradient and central
// differences over every parameter.
double max_grad_error(std::uint64_t seed) {
  const auto data = generate_dataset(40, 5, seed).train;
  ToyNet net(5, 6, 4, seed + 100);
  std::vector<std::size_t> rows{0, 3, 5, 7, 11, 13};
  const auto X = data.batch(rows);
  const auto labels = data.batch_labels(rows);
  const auto lg = net.loss_and_grad(X, labels);
  double worst = 0;
  const double h = 1e-6;
  for (std::size_t i = 0; i < net.parameter_count(); ++i) {
    const double keep = net.params()[i];
    net.params()[i] = keep + h;
    const double up = net.loss(X, labels);
    net.params()[i] = keep - h;
    const double down = net.loss(X, labels);
    net.params()[i] = keep;
    const double fd = (up - down) / (2 * h);
    const double err = std::abs(fd - lg.grad[i]) / std::max(1e-6, std::abs(fd) + std::abs(lg.grad[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

} // namespace

TEST(Dataset, PartitionSizes) {
  const auto d = generate_dataset(100, 8, 1);
  EXPECT_EQ(d.train.size(), 80u);
  EXPECT_EQ(d.test.size(), 20u);
  EXPECT_EQ(d.train.features.size(), 80u * 8);
}

TEST(Dataset, SameSeedSameBytes) {
  const auto a = generate_dataset(200, 4, 9), b = generate_dataset(200, 4, 9);
  EXPECT_EQ(a.train.to_csv(), b.train.to_csv());
  EXPECT_EQ(a.test.to_csv(), b.test.to_csv());
  EXPECT_NE(a.train.to_csv(), generate_dataset(200, 4, 10).train.to_csv());
}

TEST(Dataset, BalancedLabels) {
  const auto d = generate_dataset(1000, 4, 3);
  std::map<int, int> counts;
  for (int l : d.train.labels) counts[l]++;
  for (int l : d.test.labels) counts[l]++;
  ASSERT_EQ(counts.size(), 10u);
  for (const auto &[label, n] : counts) {
    EXPECT_GE(n, 99);
    EXPECT_LE(n, 101);
  }
}

TEST(Dataset, Errors) {
  EXPECT_THROW(generate_dataset(19, 4, 1), std::invalid_argument);
  EXPECT_THROW(generate_dataset(100, 0, 1), std::invalid_argument);
}

TEST(ToyNet, ShapesAndLogits) {
  ToyNet net(3, 8, 4, 1);
  EXPECT_EQ(net.parameter_count(), 8u * 3 + 8 + 4 * 8 + 4 + 10 * 4 + 10);
  Eigen::MatrixXd X = Eigen::MatrixXd::Random(3, 7);
  const auto Z = net.forward(X);
  EXPECT_EQ(Z.rows(), 10);
  EXPECT_EQ(Z.cols(), 7);
  EXPECT_THROW(net.forward(Eigen::MatrixXd::Zero(4, 2)), std::invalid_argument);
}

TEST(ToyNet, ForwardMatchesHandComputedSmallNet) {
  ToyNet net(1, 1, 1, 1);
  // W1=2, b1=-1, W2=3, b2=0.5, W3 = k/10, b3 = 0
  auto &p = net.params();
  p[0] = 2;
  p[1] = -1;
  p[2] = 3;
  p[3] = 0.5;
  for (int k = 0; k < 10; ++k) p[4 + static_cast<std::size_t>(k)] = k / 10.0;
  for (int k = 0; k < 10; ++k) p[14 + static_cast<std::size_t>(k)] = 0;
  Eigen::MatrixXd X(1, 2);
  X << 1.0, 0.25;
  const auto Z = net.forward(X);
  // x=1: h1 = relu(1) = 1, h2 = relu(3.5) = 3.5 ; x=0.25: h1 = relu(-0.5) = 0, h2 = 0.5
  for (int k = 0; k < 10; ++k) {
    EXPECT_DOUBLE_EQ(Z(k, 0), 3.5 * k / 10.0);
    EXPECT_DOUBLE_EQ(Z(k, 1), 0.5 * k / 10.0);
  }
}

TEST(ToyNet, CrossEntropyOfUniformLogitsIsLogTen) {
  const Eigen::MatrixXd Z = Eigen::MatrixXd::Constant(10, 3, 0.7);
  const std::vector<int> labels{0, 4, 9};
  EXPECT_NEAR(ToyNet::cross_entropy(Z, labels), std::log(10.0), 1e-14);
}

TEST(ToyNet, GradientMatchesCentralDifferences) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) EXPECT_LT(max_grad_error(seed), 1e-4) << seed;
}

TEST(ToyNet, ResetWeightsIsSeeded) {
  ToyNet a(4, 5, 6, 3), b(4, 5, 6, 3);
  EXPECT_EQ(a.params(), b.params());
  const auto init = a.params();
  a.params()[0] += 1;
  a.reset_weights(3);
  EXPECT_EQ(a.params(), init);
  b.reset_weights(4);
  EXPECT_NE(b.params(), init);
}

TEST(Accuracy, TiesPickLowestIndex) {
  Eigen::MatrixXd Z = Eigen::MatrixXd::Zero(10, 3);
  Z(2, 1) = 1;
  Z(5, 2) = 1;
  Z(7, 2) = 1;
  EXPECT_NEAR(accuracy(Z, std::vector<int>{0, 2, 5}), 1.0, 0);
  EXPECT_NEAR(accuracy(Z, std::vector<int>{1, 2, 7}), 1.0 / 3.0, 1e-15);
  EXPECT_THROW(accuracy(Z, std::vector<int>{1}), std::invalid_argument);
}
