#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "mail/head.hpp"

using namespace mail;

namespace {

Mat<double> random(Rng& rng, int r, int c) {
  Mat<double> m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

}  // namespace

TEST(Head, ResolutionForEveryPatchSize) {
  for (int p : {4, 8, 16, 32}) {
    ExperimentConfig c;
    c.patch_size = p;
    c.image_height = 2 * p;
    c.image_width = 3 * p;
    c.embed_dim = 8;
    c.num_heads = 2;
    c = validate(c);
    HeadParams<double> head(c);
    EXPECT_EQ(static_cast<int>(head.blocks.size()), static_cast<int>(std::log2(p)));
    EXPECT_EQ(head.channels, fused_channels(c));
    Rng rng(static_cast<std::uint64_t>(p));
    head.init(rng);
    Tape<double> tape;
    Context<double> ctx{tape};
    const Var<double> x = tape.constant(random(rng, 2 * 2 * 3, head.channels));
    const Var<double> y = head_forward(ctx, x, 2, 2, 3, head);
    EXPECT_EQ(y.rows(), 2 * c.image_height * c.image_width);
    EXPECT_EQ(y.cols(), 1);
  }
}

TEST(Head, FullScaleHasFiveBlocks) {
  HeadParams<float> head(ExperimentConfig::full_scale());
  EXPECT_EQ(head.blocks.size(), 5u);
}

TEST(Head, ChannelMismatchThrows) {
  HeadParams<double> head(6, 1);
  Tape<double> tape;
  Context<double> ctx{tape};
  EXPECT_THROW(head_forward(ctx, tape.constant(Mat<double>::Zero(4, 5)), 1, 2, 2, head), std::invalid_argument);
}

TEST(Head, ConstantFieldStaysConstantInEvalMode) {
  // Centre-tap kernels keep zero padding out of the picture.
  HeadParams<double> head(3, 2);
  Rng rng(1);
  head.init(rng);
  for (auto& b : head.blocks) {
    b.conv_w.value.setZero();
    b.conv_w.value.middleRows(4 * 3, 3) = random(rng, 3, 3);
  }
  Tape<double> tape;
  Context<double> ctx{tape};
  Mat<double> x(4 * 4, 3);
  x.rowwise() = random(rng, 1, 3).row(0);
  const Mat<double> y = head_forward(ctx, tape.constant(x), 1, 4, 4, head).value();
  EXPECT_EQ(y.rows(), 16 * 16);
  EXPECT_LT(y.maxCoeff() - y.minCoeff(), 1e-12);
}

TEST(Head, TrainModeUpdatesStatisticsEvalDoesNot) {
  HeadParams<double> head(4, 1);
  Rng rng(2);
  head.init(rng);
  const Mat<double> x = random(rng, 2 * 9, 4);
  {
    Tape<double> tape;
    Context<double> ctx{tape};
    head_forward(ctx, tape.constant(x), 2, 3, 3, head);
  }
  EXPECT_EQ(head.blocks[0].running_mean.value.norm(), 0.0);
  EXPECT_EQ((head.blocks[0].running_var.value.array() - 1.0).matrix().norm(), 0.0);
  {
    Tape<double> tape;
    Context<double> ctx{tape, true};
    head_forward(ctx, tape.constant(x), 2, 3, 3, head);
  }
  EXPECT_GT(head.blocks[0].running_mean.value.norm(), 0.0);
}

TEST(Head, GradientCheckOneBlock) {
  // C=6, H'=W'=2, one block, batch of two so batch statistics are non-trivial.
  HeadParams<double> head(6, 1);
  Rng rng(3);
  head.init(rng);
  for (auto* p : {&head.blocks[0].bn_gamma, &head.blocks[0].bn_beta, &head.final_b})
    for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] = rng.normal(0.5, 0.3);
  std::vector<Parameter<double>*> ps;
  head.collect(ps);
  const Mat<double> x = random(rng, 2 * 4, 6);
  const Mat<double> probe = random(rng, 2 * 16, 1);
  for (bool train : {true, false}) {
    const double err = mail::testing::check_parameter_gradients(ps, [&](Tape<double>& tape) {
      Context<double> ctx{tape, train};
      return ag::sum(ag::mul(head_forward(ctx, tape.constant(x), 2, 2, 2, head), tape.constant(probe)));
    });
    EXPECT_LT(err, 1e-4) << (train ? "train" : "eval");
  }
  const double input_err = mail::testing::check_input_gradients({x}, [&](Tape<double>& tape, auto& v) {
    Context<double> ctx{tape, true};
    return ag::sum(ag::mul(head_forward(ctx, v[0], 2, 2, 2, head), tape.constant(probe)));
  });
  EXPECT_LT(input_err, 1e-4);
}

TEST(Binarize, StrictThreshold) {
  EXPECT_FALSE(binarize<double>(Mat<double>::Constant(4, 1, -3.0), 2, 2).any());
  EXPECT_EQ(binarize<double>(Mat<double>::Constant(4, 1, 3.0), 2, 2).count(), 4);
  Mat<float> edge(1, 3);
  edge << 0.0f, 1e-7f, -1e-7f;
  const BinaryMask m = binarize(edge, 1, 3);
  EXPECT_EQ(m.at(0, 0), 0);
  EXPECT_EQ(m.at(0, 1), 1);
  EXPECT_EQ(m.at(0, 2), 0);
  EXPECT_THROW(binarize<double>(Mat<double>::Zero(5, 1), 2, 2), std::invalid_argument);
}
