#include <gtest/gtest.h>

#include <cmath>

#include "dsts/error.hpp"
#include "dsts/ops.hpp"
#include "dsts/selection.hpp"

using namespace dsts;

TEST(SampleGumbel, DirectFormula) { EXPECT_NEAR(gumbel_from_uniform(0.5), 0.36651292058166435, 1e-15); }

TEST(SampleGumbel, MeanIsEulerMascheroni) {
  Rng rng(2024);
  const auto draws = sample_gumbel(1'000'000, rng);
  double mean = 0.0;
  for (double v : draws) mean += v;
  mean /= static_cast<double>(draws.size());
  EXPECT_NEAR(mean, 0.5772156649, 0.01);
}

TEST(SampleGumbel, SeedDeterminesSequence) {
  Rng a(7), b(7);
  EXPECT_EQ(sample_gumbel(1000, a), sample_gumbel(1000, b));
  EXPECT_THROW(sample_gumbel(0, a), InputError);
}

TEST(GumbelSoftmax, EvalTakesArgmax) {
  Rng rng(1);
  const std::vector<double> logits = {0.1, 3.2, -1.0};
  const auto out = gumbel_softmax_select(logits, 1.0, nn::Mode::Eval, rng);
  EXPECT_EQ(out.selected_index, 1);
  EXPECT_EQ(out.hard, (std::vector<double>{0.0, 1.0, 0.0}));
}

TEST(GumbelSoftmax, TiesGoToLowestIndex) {
  Rng rng(1);
  const auto out = gumbel_softmax_select(std::vector<double>{2.0, 5.0, 5.0, 5.0}, 1.0, nn::Mode::Eval, rng);
  EXPECT_EQ(out.selected_index, 1);
}

TEST(GumbelSoftmax, RejectsEmptyLogits) {
  Rng rng(1);
  EXPECT_THROW(gumbel_softmax_select(std::vector<double>{}, 1.0, nn::Mode::Eval, rng), InputError);
  EXPECT_THROW(gumbel_softmax_select(std::vector<double>{1.0}, 0.0, nn::Mode::Eval, rng), InputError);
}

TEST(GumbelSoftmax, DominantLogitAlmostAlwaysWins) {
  Rng rng(3);
  const std::vector<double> logits = {1000.0, 0.0, 0.0};
  int hits = 0;
  const int draws = 100'000;
  for (int i = 0; i < draws; ++i) hits += gumbel_softmax_select(logits, 1.0, nn::Mode::Train, rng).selected_index == 0;
  EXPECT_GT(static_cast<double>(hits) / draws, 0.999);
}

TEST(GumbelSoftmax, EqualLogitsSelectUniformly) {
  Rng rng(4);
  const std::vector<double> logits(5, 0.3);
  std::vector<int> counts(5, 0);
  const int draws = 100'000;
  for (int i = 0; i < draws; ++i) ++counts[gumbel_softmax_select(logits, 1.0, nn::Mode::Train, rng).selected_index];
  for (int c : counts) EXPECT_NEAR(static_cast<double>(c) / draws, 0.2, 0.01);
}

TEST(GumbelSoftmax, OutcomeInvariants) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> logits(6);
    for (auto& v : logits) v = rng.normal(0.0, 3.0);
    const auto out = gumbel_softmax_select(logits, 0.5 + rng.uniform(), nn::Mode::Train, rng);
    double ones = 0.0, total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
      EXPECT_TRUE(out.hard[i] == 0.0 || out.hard[i] == 1.0);
      ones += out.hard[i];
      EXPECT_GT(out.soft[i], 0.0);
      EXPECT_LT(out.soft[i], 1.0);
      total += out.soft[i];
    }
    EXPECT_EQ(ones, 1.0);
    EXPECT_NEAR(total, 1.0, 1e-12);
    EXPECT_EQ(out.selected_index, argmax(out.hard));
    EXPECT_EQ(out.selected_index, argmax(out.soft));
  }
}

TEST(GumbelSoftmax, EvalIgnoresRngAndConstantShift) {
  Rng a(1), b(999);
  const std::vector<double> logits = {0.4, -0.2, 0.39, 0.1};
  std::vector<double> shifted = logits;
  for (auto& v : shifted) v += 123.0;
  const auto x = gumbel_softmax_select(logits, 1.0, nn::Mode::Eval, a);
  const auto y = gumbel_softmax_select(shifted, 1.0, nn::Mode::Eval, b);
  EXPECT_EQ(x.selected_index, y.selected_index);
  EXPECT_EQ(x.hard, y.hard);
  Rng fresh(1);
  EXPECT_EQ(a.next_u64(), fresh.next_u64());
}

// The hard forward value is exactly one-hot while gradients equal those of
// the soft path computed on its own.
TEST(GumbelSoftmax, StraightThroughGradientEqualsSoftGradient) {
  Rng rng(6);
  Tensor logits_value(Shape{3, 4}, 0.0);
  for (auto& v : logits_value.storage()) v = rng.normal();
  Tensor noise(Shape{3, 4}, sample_gumbel(12, rng));
  Tensor upstream(Shape{3, 4}, 0.0);
  for (auto& v : upstream.storage()) v = rng.normal();

  const Var logits = Var::parameter(logits_value);
  const GumbelSelection sel = gumbel_softmax_st(logits, &noise, 0.7, nn::Mode::Train);
  for (std::int64_t r = 0; r < 3; ++r) {
    double row = 0.0;
    for (std::int64_t c = 0; c < 4; ++c) {
      const double h = sel.weights.value().at({r, c});
      EXPECT_TRUE(h == 0.0 || h == 1.0);
      row += h;
    }
    EXPECT_EQ(row, 1.0);
  }
  const Gradients hard_grad =
      grad(ops::sum(ops::mul(sel.weights, Var::constant(upstream))), std::vector<Var>{logits});

  const Var logits2 = Var::parameter(logits_value);
  const Var soft = nn::softmax(ops::scale(ops::add(logits2, Var::constant(noise)), 1.0 / 0.7));
  const Gradients soft_grad = grad(ops::sum(ops::mul(soft, Var::constant(upstream))), std::vector<Var>{logits2});
  EXPECT_EQ(hard_grad[0].value(), soft_grad[0].value());
}

TEST(Semhash, EvalThresholdsAtZero) {
  Rng rng(1);
  EXPECT_EQ(semhash_binarize(std::vector<double>{-2.0, 0.5, 3.0}, nn::Mode::Eval, rng).bits,
            (std::vector<double>{0.0, 1.0, 1.0}));
  EXPECT_EQ(semhash_binarize(std::vector<double>(5, -50.0), nn::Mode::Eval, rng).bits, std::vector<double>(5, 0.0));
}

TEST(Semhash, ZeroLogitIsFairCoin) {
  Rng rng(2);
  const int draws = 100'000;
  int ones = 0;
  for (int i = 0; i < draws; ++i) ones += semhash_binarize(std::vector<double>{0.0}, nn::Mode::Train, rng).bits[0] == 1.0;
  EXPECT_NEAR(static_cast<double>(ones) / draws, 0.5, 0.01);
}

TEST(Semhash, TrainBitsAreBinary) {
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    const auto mask = semhash_binarize(std::vector<double>{rng.normal(), rng.normal(), rng.normal()}, nn::Mode::Train, rng);
    for (double b : mask.bits) EXPECT_TRUE(b == 0.0 || b == 1.0);
  }
}

TEST(Semhash, EvalInvariantUnderPositiveRescaling) {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> g(8), scaled(8);
    const double factor = 0.01 + 10.0 * rng.uniform();
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] = rng.normal();
      scaled[i] = factor * g[i];
    }
    EXPECT_EQ(semhash_binarize(g, nn::Mode::Eval, rng).bits, semhash_binarize(scaled, nn::Mode::Eval, rng).bits);
  }
}

TEST(Semhash, SaturatingSigmoidShape) {
  const Var y = saturating_sigmoid(Var::constant(Tensor::from({5}, {-100.0, -1.0, 0.0, 1.0, 100.0})));
  EXPECT_EQ(y.value()[0], 0.0);
  EXPECT_NEAR(y.value()[2], 0.5, 1e-15);
  EXPECT_EQ(y.value()[4], 1.0);
  EXPECT_NEAR(y.value()[3], 1.2 / (1.0 + std::exp(-1.0)) - 0.1, 1e-15);
}

TEST(Semhash, StraightThroughGradientEqualsRelaxedGradient) {
  Rng rng(5);
  Tensor g_value(Shape{2, 6}, 0.0), noise(Shape{2, 6}, 0.0), upstream(Shape{2, 6}, 0.0);
  for (auto& v : g_value.storage()) v = rng.normal();
  for (auto& v : noise.storage()) v = rng.normal();
  for (auto& v : upstream.storage()) v = rng.normal();

  const Var g = Var::parameter(g_value);
  const Var bits = semhash_st(g, &noise, nn::Mode::Train);
  for (std::int64_t i = 0; i < bits.value().size(); ++i) {
    EXPECT_EQ(bits.value()[i], g_value[i] + noise[i] > 0.0 ? 1.0 : 0.0);
  }
  const Gradients hard = grad(ops::sum(ops::mul(bits, Var::constant(upstream))), std::vector<Var>{g});

  const Var g2 = Var::parameter(g_value);
  const Var relaxed = saturating_sigmoid(ops::add(g2, Var::constant(noise)));
  const Gradients soft = grad(ops::sum(ops::mul(relaxed, Var::constant(upstream))), std::vector<Var>{g2});
  EXPECT_EQ(hard[0].value(), soft[0].value());
}
