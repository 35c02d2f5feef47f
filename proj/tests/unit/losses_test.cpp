#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "mail/losses.hpp"
#include "mail/selection.hpp"

using namespace mail;

namespace {

Mat<double> random(Rng& rng, int r, int c, double scale = 1.0) {
  Mat<double> m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

Mat<double> random_gt(Rng& rng, int n) {
  Mat<double> g(n, 1);
  for (int i = 0; i < n; ++i) g(i, 0) = rng.bernoulli(0.4) ? 1.0 : 0.0;
  return g;
}

double focal(const Mat<double>& logits, const Mat<double>& gt, double gamma, double alpha) {
  Tape<double> tape;
  return focal_loss(tape.constant(logits), gt, gamma, alpha).scalar();
}

double dice(const Mat<double>& logits, const Mat<double>& gt, double eps) {
  Tape<double> tape;
  return dice_loss(tape.constant(logits), gt, eps).scalar();
}

// Mean binary cross-entropy written out term by term.
double bce_oracle(const Mat<double>& logits, const Mat<double>& gt) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    const double p = 1.0 / (1.0 + std::exp(-logits(i)));
    acc += gt(i) > 0.5 ? -std::log(p) : -std::log(1.0 - p);
  }
  return acc / static_cast<double>(logits.size());
}

}  // namespace

TEST(Focal, ClosedForms) {
  EXPECT_NEAR(focal(Mat<double>::Zero(9, 1), Mat<double>::Ones(9, 1), 0.0, -1.0), std::log(2.0), 1e-12);
  Mat<double> one(1, 1);
  one(0, 0) = std::log(9.0);  // p = 0.9
  EXPECT_NEAR(focal(one, Mat<double>::Ones(1, 1), 2.0, 0.25), 0.25 * 0.01 * -std::log(0.9), 1e-12);
  EXPECT_NEAR(focal(one, Mat<double>::Ones(1, 1), 2.0, 0.25), 2.634e-4, 1e-7);
  // A negative pixel at p = 0.1 has the same p_t but weight 1 - alpha.
  one(0, 0) = -std::log(9.0);
  EXPECT_NEAR(focal(one, Mat<double>::Zero(1, 1), 2.0, 0.25), 0.75 * 0.01 * -std::log(0.9), 1e-12);

  Mat<double> confident(4, 1), gt(4, 1);
  confident << 40, -40, 40, -40;
  gt << 1, 0, 1, 0;
  EXPECT_LT(focal(confident, gt, 2.0, 0.25), 1e-6);
}

TEST(Focal, GammaZeroMatchesCrossEntropy) {
  Rng rng(1);
  for (int t = 0; t < 50; ++t) {
    const Mat<double> l = random(rng, 16, 1, 3.0);
    const Mat<double> g = random_gt(rng, 16);
    EXPECT_NEAR(focal(l, g, 0.0, -1.0), bce_oracle(l, g), 1e-10);
    EXPECT_GE(focal(l, g, 2.0, 0.25), 0.0);
  }
  Mat<double> extreme(2, 1), g(2, 1);
  extreme << 800, -800;
  g << 0, 1;
  EXPECT_TRUE(std::isfinite(focal(extreme, g, 0.0, -1.0)));
  EXPECT_NEAR(focal(extreme, g, 0.0, -1.0), 800.0, 1e-9);
}

TEST(Dice, ClosedForms) {
  Mat<double> hard(4, 1), gt(4, 1);
  hard << 60, 60, -60, -60;
  gt << 1, 1, 0, 0;
  EXPECT_NEAR(dice(hard, gt, 1.0), 0.0, 1e-12);
  for (int g = 1; g <= 6; ++g) {
    Mat<double> m = Mat<double>::Zero(8, 1);
    m.topRows(g).setOnes();
    EXPECT_NEAR(dice(Mat<double>::Constant(8, 1, -60.0), m, 1.0), static_cast<double>(g) / (g + 1), 1e-12);
  }
  Mat<double> two(4, 1), g2(4, 1);
  two << 60, 60, -60, -60;
  g2 << 1, 0, 0, 0;
  EXPECT_NEAR(dice(two, g2, 1.0), 0.25, 1e-12);
}

TEST(Dice, BoundedAndPermutationInvariant) {
  Rng rng(2);
  for (int t = 0; t < 50; ++t) {
    const Mat<double> l = random(rng, 16, 1, 3.0);
    const Mat<double> g = random_gt(rng, 16);
    const double v = dice(l, g, 1.0);
    EXPECT_GE(v, 0.0);
    EXPECT_LT(v, 1.0);
    std::vector<int> perm(16);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm.begin(), perm.end());
    Mat<double> lp(16, 1), gp(16, 1);
    for (int i = 0; i < 16; ++i) {
      lp(i) = l(perm[i]);
      gp(i) = g(perm[i]);
    }
    EXPECT_NEAR(dice(lp, gp, 1.0), v, 1e-12);
  }
}

TEST(Losses, GradientsMatchFiniteDifferences) {
  Rng rng(3);
  for (int t = 0; t < 5; ++t) {
    const Mat<double> g = random_gt(rng, 16);
    const Mat<double> l = random(rng, 16, 1, 2.0);
    for (double gamma : {0.0, 2.0})
      for (double alpha : {-1.0, 0.25})
        EXPECT_LT(mail::testing::check_input_gradients(
                      {l}, [&](auto&, auto& v) { return focal_loss(v[0], g, gamma, alpha); }),
                  1e-4)
            << gamma << " " << alpha;
    EXPECT_LT(mail::testing::check_input_gradients({l}, [&](auto&, auto& v) { return dice_loss(v[0], g, 1.0); }), 1e-4);
    EXPECT_LT(mail::testing::check_input_gradients({random(rng, 1, 4)},
                                                   [&](auto&, auto& v) { return selection_loss(v[0], t % 4); }),
              1e-4);
  }
}

namespace {

struct Batch {
  Tape<double> tape;
  std::vector<BinaryMask> gts;
  std::vector<SampleLossInput<double>> inputs;
};

// Two 4x4 samples; scores attached to both, targets as given.
void fill(Batch& b, Rng& rng, const Mat<double>& scores, std::optional<int> a0, std::optional<int> a1) {
  b.gts.clear();
  b.inputs.clear();
  for (int i = 0; i < 2; ++i) b.gts.push_back(mail::testing::random_blob(rng, 4, 4));
  for (int i = 0; i < 2; ++i) {
    SampleLossInput<double> in;
    in.logits = b.tape.constant(random(rng, 16, 1));
    in.gt = &b.gts[static_cast<std::size_t>(i)];
    in.scores = b.tape.constant(scores);
    in.alpha = i == 0 ? a0 : a1;
    b.inputs.push_back(in);
  }
}

}  // namespace

TEST(TotalLoss, Composition) {
  ExperimentConfig c;
  Rng rng(4);
  Batch b;
  fill(b, rng, Mat<double>::Zero(1, 4), 1, 2);
  c.loss_weight = 0.1;
  const auto r = total_loss(std::span<const SampleLossInput<double>>(b.inputs), c).report;
  EXPECT_NEAR(r.select, std::log(4.0), 1e-12);
  EXPECT_NEAR(r.total - r.focal - r.dice, 0.1 * std::log(4.0), 1e-12);
  EXPECT_NEAR(0.1 * r.select, 0.1386, 1e-4);
  EXPECT_DOUBLE_EQ(r.lambda, 0.1);

  c.loss_weight = 0.0;
  const auto z = total_loss(std::span<const SampleLossInput<double>>(b.inputs), c).report;
  EXPECT_DOUBLE_EQ(z.total, z.focal + z.dice);

  // Focal and dice are means over the batch.
  double f = 0, d = 0;
  for (const auto& in : b.inputs) {
    const Mat<double> g = mask_column<double>(*in.gt);
    f += focal(in.logits.value(), g, c.focal_gamma, c.focal_alpha) / 2;
    d += dice(in.logits.value(), g, c.dice_smooth) / 2;
  }
  EXPECT_NEAR(z.focal, f, 1e-12);
  EXPECT_NEAR(z.dice, d, 1e-12);
}

TEST(TotalLoss, AbsentTargetsAreSkipped) {
  ExperimentConfig c;
  Rng rng(5);
  Batch b;
  Mat<double> s(1, 3);
  s << 2, 0, 0;
  fill(b, rng, s, std::nullopt, std::nullopt);
  const auto r = total_loss(std::span<const SampleLossInput<double>>(b.inputs), c).report;
  EXPECT_EQ(r.select, 0.0);
  EXPECT_DOUBLE_EQ(r.total, r.focal + r.dice);

  Batch one;
  fill(one, rng, s, 0, std::nullopt);
  const auto q = total_loss(std::span<const SampleLossInput<double>>(one.inputs), c).report;
  EXPECT_NEAR(q.select, selection_loss_value(std::vector<double>{2, 0, 0}, 0), 1e-12);
}

TEST(TotalLoss, MonotoneInLambda) {
  Rng rng(6);
  Batch b;
  fill(b, rng, random(rng, 1, 5), 3, 0);
  double prev = -1.0;
  for (double lambda : {0.0, 0.05, 0.1, 0.5, 1.0}) {
    ExperimentConfig c;
    c.loss_weight = lambda;
    const auto r = total_loss(std::span<const SampleLossInput<double>>(b.inputs), c).report;
    EXPECT_GT(r.select, 0.0);
    EXPECT_GT(r.total, prev);
    prev = r.total;
  }
}

TEST(TotalLoss, GradientFlowsToScoresAndLogits) {
  Rng rng(7);
  const BinaryMask gt = mail::testing::random_blob(rng, 4, 4);
  ExperimentConfig c;
  const double err = mail::testing::check_input_gradients(
      {random(rng, 16, 1), random(rng, 1, 3)}, [&](auto&, auto& v) {
        std::vector<SampleLossInput<double>> in(1);
        in[0].logits = v[0];
        in[0].gt = &gt;
        in[0].scores = v[1];
        in[0].alpha = 2;
        return total_loss(std::span<const SampleLossInput<double>>(in), c).total;
      });
  EXPECT_LT(err, 1e-4);
}
