#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "oracles.hpp"
#include "tkvseg/gradcheck.hpp"
#include "tkvseg/loss.hpp"

using namespace tkvseg;

namespace {

struct Instance {
  std::size_t b, c, vox;
  Tensor<double> probs;
  LabelTensor labels;
  Tensor<double> target;
};

// Random softmax-normalized probabilities and labels of a random small shape.
Instance random_instance(std::mt19937_64& rng, std::size_t cmin = 2) {
  Instance in;
  in.b = 1 + rng() % 2;
  in.c = cmin + rng() % 3;
  const std::size_t z = 1 + rng() % 3, y = 1 + rng() % 3, x = 1 + rng() % 4;
  in.vox = z * y * x;
  in.probs = Tensor<double>(Shape{in.b, in.c, z, y, x});
  in.labels = LabelTensor(Shape{in.b, z, y, x});
  std::uniform_real_distribution<double> u(0.01, 1.0);
  for (std::size_t b = 0; b < in.b; ++b)
    for (std::size_t i = 0; i < in.vox; ++i) {
      double total = 0;
      for (std::size_t c = 0; c < in.c; ++c) total += in.probs[(b * in.c + c) * in.vox + i] = u(rng);
      for (std::size_t c = 0; c < in.c; ++c) in.probs[(b * in.c + c) * in.vox + i] /= total;
      in.labels[b * in.vox + i] = static_cast<std::uint8_t>(rng() % in.c);
    }
  in.target = one_hot<double>(in.labels, in.c);
  return in;
}

double dice_value(const Tensor<double>& p, const Tensor<double>& g, double s) {
  Graph<double> graph;
  return dice_loss(graph.constant(p), g, s).value().item();
}

double bce_value(const Tensor<double>& p, const LabelTensor& y, double f) {
  Graph<double> graph;
  return bootstrap_ce_loss(graph.constant(p), y, f).value().item();
}

}  // namespace

TEST(LossConfig, Validation) {
  LossConfig c;
  EXPECT_NO_THROW(c.validate());
  c.bootstrap_fraction = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c.bootstrap_fraction = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = LossConfig{};
  c.dice_smoothing = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  c.dice_smoothing = std::numeric_limits<double>::infinity();
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_EQ(loss_kind_from_string(to_string(LossKind::dice)), LossKind::dice);
  EXPECT_EQ(loss_kind_from_string("bootstrap_ce"), LossKind::bootstrap_ce);
  EXPECT_THROW(loss_kind_from_string("focal"), ConfigError);
}

TEST(OneHot, IndicatorAndRangeCheck) {
  LabelTensor y(Shape{1, 1, 1, 3}, std::vector<std::uint8_t>{2, 0, 1});
  const auto t = one_hot<double>(y, 3);
  EXPECT_EQ(t.shape(), (Shape{1, 3, 1, 1, 3}));
  EXPECT_EQ(t.values(), (std::vector<double>{0, 1, 0, 0, 0, 1, 1, 0, 0}));
  EXPECT_THROW(one_hot<double>(y, 2), ValidationError);
}

TEST(DiceLoss, PerfectPredictionIsMinusOne) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 10; ++i) {
    auto in = random_instance(rng);
    if (in.b * in.vox < in.c) continue;
    // Every class present, otherwise empty classes contribute 0 rather than -1.
    for (std::size_t c = 0; c < in.c; ++c) in.labels[c] = static_cast<std::uint8_t>(c);
    in.target = one_hot<double>(in.labels, in.c);
    EXPECT_NEAR(dice_value(in.target, in.target, 0.0), -1.0, 1e-15);
  }
}

TEST(DiceLoss, HandEvaluation) {
  // Class-major: p[c][i].
  Tensor<double> p(Shape{1, 2, 1, 1, 2}, std::vector<double>{0.8, 0.3, 0.2, 0.7});
  Tensor<double> g(Shape{1, 2, 1, 1, 2}, std::vector<double>{1, 0, 0, 1});
  const double expected = -(1.6 / 2.1 + 1.4 / 1.9) / 2.0;
  EXPECT_NEAR(dice_value(p, g, 0.0), expected, 1e-15);
  EXPECT_NEAR(expected, -0.749373, 5e-7);
}

TEST(DiceLoss, MatchesBruteForceOracle) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    auto in = random_instance(rng);
    const double s = trial % 2 == 0 ? 0.0 : 0.5 * static_cast<double>(trial % 5);
    const long double ref = oracle::dice_loss(in.probs.values(), in.target.values(), in.b, in.c, in.vox, s);
    EXPECT_NEAR(dice_value(in.probs, in.target, s), static_cast<double>(ref), 1e-12);
  }
}

TEST(DiceLoss, RangeIsMinusOneToZero) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    auto in = random_instance(rng);
    const double v = dice_value(in.probs, in.target, static_cast<double>(trial % 3));
    EXPECT_GE(v, -1.0);
    EXPECT_LE(v, 0.0);
  }
}

TEST(DiceLoss, EmptyClassContributesNothingWithoutSmoothing) {
  // Class 2 is absent from the target but receives probability mass.
  Tensor<double> p(Shape{1, 3, 1, 1, 2}, std::vector<double>{0.5, 0.1, 0.2, 0.6, 0.3, 0.3});
  Tensor<double> g(Shape{1, 3, 1, 1, 2}, std::vector<double>{1, 0, 0, 1, 0, 0});
  const double present = (2 * 0.5 / 1.6) + (2 * 0.6 / 1.8);
  EXPECT_NEAR(dice_value(p, g, 0.0), -present / 3.0, 1e-15);

  Graph<double> graph;
  auto probs = graph.parameter(0, p);
  const auto grads = graph.backward(dice_loss(probs, g, 0.0));
  EXPECT_EQ(grads.at(0)[4], 0.0);
  EXPECT_EQ(grads.at(0)[5], 0.0);
  EXPECT_NE(grads.at(0)[0], 0.0);

  // With smoothing the false positives are penalized.
  EXPECT_GT(dice_value(p, g, 1.0), -1.0);
  Graph<double> g2;
  const auto smoothed = g2.backward(dice_loss(g2.parameter(0, p), g, 1.0));
  EXPECT_GT(smoothed.at(0)[4], 0.0);
}

TEST(DiceLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    auto in = random_instance(rng);
    const double s = trial % 2;
    EXPECT_LT(gradcheck([&](Graph<double>&, Var<double> p) { return dice_loss(p, in.target, s); },
                        in.probs),
              1e-4);
  }
}

TEST(DiceLoss, RejectsBadTargets) {
  Graph<double> g;
  auto p = g.constant(Tensor<double>(Shape{1, 2, 1, 1, 2}, 0.5));
  EXPECT_THROW(dice_loss(p, Tensor<double>(Shape{1, 3, 1, 1, 2}, 0.0), 0.0), ShapeError);
  Tensor<double> soft(Shape{1, 2, 1, 1, 2}, 0.5);
  EXPECT_THROW(dice_loss(p, soft, 0.0), ValidationError);
  Tensor<double> doubled(Shape{1, 2, 1, 1, 2}, std::vector<double>{1, 1, 1, 0});
  EXPECT_THROW(dice_loss(p, doubled, 0.0), ValidationError);
}

TEST(BootstrapCount, FloorWithMinimumOne) {
  EXPECT_EQ(bootstrap_count(10, 0.1), 1u);
  EXPECT_EQ(bootstrap_count(5, 0.1), 1u);
  EXPECT_EQ(bootstrap_count(70, 0.1), 7u);
  EXPECT_EQ(bootstrap_count(19, 0.1), 1u);
  EXPECT_EQ(bootstrap_count(1000, 0.1), 100u);
  EXPECT_EQ(bootstrap_count(7, 1.0), 7u);
  EXPECT_THROW(bootstrap_count(0, 0.1), ContractError);
  EXPECT_THROW(bootstrap_count(3, 0.0), ConfigError);
}

TEST(BootstrapSelect, PicksTheHardVoxel) {
  std::vector<double> p(10, 0.9);
  p[6] = 0.2;
  const auto s = bootstrap_select<double>(p, 0.1);
  EXPECT_EQ(s.indices, std::vector<std::size_t>{6});
  EXPECT_EQ(s.threshold, 0.9);
}

TEST(BootstrapSelect, FullFractionSelectsAll) {
  const std::vector<double> p{0.3, 0.1, 0.9};
  const auto s = bootstrap_select<double>(p, 1.0);
  EXPECT_EQ(s.indices, (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_TRUE(std::isinf(s.threshold));
}

TEST(BootstrapSelect, TiesGoToLowestIndices) {
  const std::vector<double> p(20, 0.5);
  const auto s = bootstrap_select<double>(p, 0.25);
  EXPECT_EQ(s.indices, (std::vector<std::size_t>{0, 1, 2, 3, 4}));
  EXPECT_EQ(s.threshold, 0.5);
}

// Every sequence of length N <= 8 over {0.2, 0.5, 0.9}, at several exact fractions.
TEST(BootstrapSelect, ExhaustiveSortOracle) {
  const double alphabet[3] = {0.2, 0.5, 0.9};
  const std::pair<std::size_t, std::size_t> fractions[] = {{1, 10}, {1, 4}, {1, 3}, {1, 2},
                                                           {2, 3}, {3, 4}, {1, 1}};
  std::size_t checked = 0;
  for (std::size_t n = 1; n <= 8; ++n) {
    std::size_t total = 1;
    for (std::size_t i = 0; i < n; ++i) total *= 3;
    for (std::size_t code = 0; code < total; ++code) {
      std::vector<double> p(n);
      for (std::size_t i = 0, c = code; i < n; ++i, c /= 3) p[i] = alphabet[c % 3];
      for (auto [num, den] : fractions) {
        const auto ref = oracle::sort_select(p, num, den);
        const auto got = bootstrap_select<double>(p, static_cast<double>(num) / static_cast<double>(den));
        ASSERT_EQ(got.indices, ref.indices) << "n=" << n << " code=" << code;
        ASSERT_EQ(got.threshold, ref.threshold);
        ++checked;
      }
    }
  }
  EXPECT_EQ(checked, 7u * (3 + 9 + 27 + 81 + 243 + 729 + 2187 + 6561));
}

TEST(BootstrapCe, PerfectPredictionIsZero) {
  Tensor<double> p(Shape{1, 2, 1, 1, 3}, std::vector<double>{1, 0, 1, 0, 1, 0});
  LabelTensor y(Shape{1, 1, 1, 3}, std::vector<std::uint8_t>{0, 1, 0});
  EXPECT_EQ(bce_value(p, y, 0.1), 0.0);
  EXPECT_EQ(bce_value(p, y, 1.0), 0.0);
}

TEST(BootstrapCe, HandEvaluation) {
  Tensor<double> p(Shape{1, 2, 1, 1, 10});
  LabelTensor y(Shape{1, 1, 1, 10}, std::uint8_t{1});
  for (std::size_t i = 0; i < 10; ++i) {
    p[10 + i] = i == 3 ? 0.2 : 0.9;
    p[i] = 1.0 - p[10 + i];
  }
  EXPECT_NEAR(bce_value(p, y, 0.1), -std::log(0.2), 1e-15);
  EXPECT_NEAR(-std::log(0.2), 1.60944, 5e-6);
}

TEST(BootstrapCe, FullFractionEqualsMeanCrossEntropy) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    auto in = random_instance(rng);
    const long double ref = oracle::mean_cross_entropy(in.probs.values(), in.labels.values(), in.b, in.c, in.vox);
    EXPECT_NEAR(bce_value(in.probs, in.labels, 1.0), static_cast<double>(ref), 1e-12);
  }
}

TEST(BootstrapCe, PermutationEquivariant) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 30; ++trial) {
    auto in = random_instance(rng);
    if (in.b != 1) continue;
    std::vector<std::size_t> perm(in.vox);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Tensor<double> pp = in.probs;
    LabelTensor yy = in.labels;
    for (std::size_t i = 0; i < in.vox; ++i) {
      for (std::size_t c = 0; c < in.c; ++c) pp[c * in.vox + i] = in.probs[c * in.vox + perm[i]];
      yy[i] = in.labels[perm[i]];
    }
    for (double f : {0.1, 0.3, 1.0}) {
      EXPECT_NEAR(bce_value(pp, yy, f), bce_value(in.probs, in.labels, f), 1e-12);
    }
  }
}

TEST(BootstrapCe, LoweringASelectedProbabilityNeverDecreasesLoss) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    auto in = random_instance(rng);
    std::vector<double> true_p(in.b * in.vox);
    for (std::size_t b = 0; b < in.b; ++b)
      for (std::size_t i = 0; i < in.vox; ++i)
        true_p[b * in.vox + i] = in.probs[(b * in.c + in.labels[b * in.vox + i]) * in.vox + i];
    const double f = 0.3;
    const auto sel = bootstrap_select<double>(true_p, f);
    const std::size_t pick = sel.indices[rng() % sel.indices.size()];
    const std::size_t b = pick / in.vox, i = pick % in.vox;
    Tensor<double> lowered = in.probs;
    lowered[(b * in.c + in.labels[pick]) * in.vox + i] *= 0.5;
    EXPECT_GE(bce_value(lowered, in.labels, f), bce_value(in.probs, in.labels, f));
  }
}

TEST(BootstrapCe, GradientOnlyOnSelectedVoxels) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    auto in = random_instance(rng);
    EXPECT_LT(gradcheck([&](Graph<double>&, Var<double> p) { return bootstrap_ce_loss(p, in.labels, 0.3); },
                        in.probs),
              1e-4);
    Graph<double> g;
    const auto grads = g.backward(bootstrap_ce_loss(g.parameter(0, in.probs), in.labels, 0.3));
    std::vector<double> true_p(in.b * in.vox);
    for (std::size_t b = 0; b < in.b; ++b)
      for (std::size_t i = 0; i < in.vox; ++i)
        true_p[b * in.vox + i] = in.probs[(b * in.c + in.labels[b * in.vox + i]) * in.vox + i];
    const auto sel = bootstrap_select<double>(true_p, 0.3);
    std::size_t nonzero = 0;
    for (double v : grads.at(0).values()) nonzero += v != 0.0;
    EXPECT_EQ(nonzero, sel.indices.size());
  }
}

TEST(BootstrapCe, LabelOutOfRange) {
  Graph<double> g;
  auto p = g.constant(Tensor<double>(Shape{1, 2, 1, 1, 2}, 0.5));
  LabelTensor y(Shape{1, 1, 1, 2}, std::vector<std::uint8_t>{0, 2});
  EXPECT_THROW(bootstrap_ce_loss(p, y, 0.5), ValidationError);
  EXPECT_THROW(bootstrap_ce_loss(p, LabelTensor(Shape{1, 1, 2, 2}), 0.5), ShapeError);
}

TEST(BootstrapCe, ClampsZeroProbability) {
  Tensor<double> p(Shape{1, 2, 1, 1, 1}, std::vector<double>{1.0, 0.0});
  LabelTensor y(Shape{1, 1, 1, 1}, std::uint8_t{1});
  EXPECT_NEAR(bce_value(p, y, 1.0), -std::log(1e-12), 1e-9);
}

TEST(MultitaskLoss, MeanOfTasks) {
  Graph<double> g;
  auto a = g.parameter(0, Tensor<double>::scalar(1.0));
  auto b = g.parameter(1, Tensor<double>::scalar(3.0));
  std::vector<Var<double>> one{a};
  EXPECT_EQ(multitask_loss<double>(one).value().item(), 1.0);
  std::vector<Var<double>> two{a, b};
  auto m = multitask_loss<double>(two);
  EXPECT_EQ(m.value().item(), 2.0);
  const auto grads = g.backward(m);
  EXPECT_EQ(grads.at(0).item(), 0.5);
  EXPECT_EQ(grads.at(1).item(), 0.5);
  EXPECT_THROW(multitask_loss<double>(std::span<const Var<double>>{}), ContractError);
}

TEST(SegmentationLoss, SoftmaxThenConfiguredLoss) {
  std::mt19937_64 rng(9);
  auto logits = oracle::random_tensor<double>(Shape{1, 3, 2, 2, 2}, rng, -2, 2);
  LabelTensor y(Shape{1, 2, 2, 2});
  for (auto& v : y.data()) v = static_cast<std::uint8_t>(rng() % 3);
  Graph<double> g;
  auto probs = softmax_channel(g.constant(logits));
  LossConfig dice;
  dice.kind = LossKind::dice;
  dice.dice_smoothing = 1.0;
  EXPECT_EQ(segmentation_loss(g.constant(logits), y, dice).value().item(),
            dice_loss(probs, one_hot<double>(y, 3), 1.0).value().item());
  LossConfig boot;
  EXPECT_EQ(segmentation_loss(g.constant(logits), y, boot).value().item(),
            bootstrap_ce_loss(probs, y, 0.1).value().item());
}
