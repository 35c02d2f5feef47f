#include "mail/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "mail/selection.hpp"

namespace mail {

namespace {

template <typename T>
T stable_sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

// log(sigmoid(z)) without overflow.
template <typename T>
T log_sigmoid(T z) {
  return z >= T(0) ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z));
}

template <typename T>
void check_target(const Var<T>& logits, const Mat<T>& gt, const char* op) {
  if (logits.rows() != gt.rows() || logits.cols() != gt.cols())
    throw std::invalid_argument(std::string(op) + ": logits and target shapes differ");
  if (!logits.value().allFinite()) throw std::invalid_argument(std::string(op) + ": non-finite logits");
}

}  // namespace

template <typename T>
Var<T> focal_loss(Var<T> logits, const Mat<T>& gt, T gamma, T alpha) {
  check_target(logits, gt, "focal_loss");
  const Eigen::Index n = logits.value().size();
  Mat<T> dx(logits.rows(), logits.cols());
  T total = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const bool pos = gt.data()[i] > T(0.5);
    const T s = pos ? T(1) : T(-1);
    const T z = s * logits.value().data()[i];
    const T a = alpha < T(0) ? T(1) : (pos ? alpha : T(1) - alpha);
    const T log_q = log_sigmoid(z);
    const T q = stable_sigmoid(z);
    const T one_minus_q = stable_sigmoid(-z);
    const T mod = gamma == T(0) ? T(1) : std::pow(one_minus_q, gamma);
    total += -a * mod * log_q;
    dx.data()[i] = s * a * mod * (gamma * q * log_q - one_minus_q) / static_cast<T>(n);
  }
  Mat<T> out(1, 1);
  out(0, 0) = total / static_cast<T>(n);
  const int il = logits.id();
  return logits.tape()->push(std::move(out), logits.tape()->requires_grad(il),
                             [il, dx = std::move(dx)](Tape<T>& t, int self) { t.grad_buffer(il) += t.grad(self)(0, 0) * dx; });
}

template <typename T>
Var<T> dice_loss(Var<T> logits, const Mat<T>& gt, T eps) {
  check_target(logits, gt, "dice_loss");
  const Mat<T> p = logits.value().unaryExpr([](T x) { return stable_sigmoid(x); });
  const T a = T(2) * p.cwiseProduct(gt).sum() + eps;
  const T b = p.sum() + gt.sum() + eps;
  Mat<T> out(1, 1);
  out(0, 0) = T(1) - a / b;
  // dD/dp_i = -(2 g_i B - A) / B^2, times dp/dx = p (1 - p).
  Mat<T> dx = (-(T(2) * b * gt.array() - a) / (b * b) * p.array() * (T(1) - p.array())).matrix();
  const int il = logits.id();
  return logits.tape()->push(std::move(out), logits.tape()->requires_grad(il),
                             [il, dx = std::move(dx)](Tape<T>& t, int self) { t.grad_buffer(il) += t.grad(self)(0, 0) * dx; });
}

template <typename T>
Mat<T> mask_column(const BinaryMask& mask) {
  Mat<T> g(static_cast<Eigen::Index>(mask.bits.size()), 1);
  for (std::size_t i = 0; i < mask.bits.size(); ++i) g(static_cast<Eigen::Index>(i), 0) = mask.bits[i] ? T(1) : T(0);
  return g;
}

template <typename T>
BatchLoss<T> total_loss(std::span<const SampleLossInput<T>> samples, const ExperimentConfig& config) {
  if (samples.empty()) throw std::invalid_argument("total_loss: empty batch");
  std::vector<Var<T>> focal, dice, select;
  for (const auto& s : samples) {
    if (!s.gt) throw std::invalid_argument("total_loss: missing ground truth");
    const Mat<T> g = mask_column<T>(*s.gt);
    focal.push_back(focal_loss(s.logits, g, static_cast<T>(config.focal_gamma), static_cast<T>(config.focal_alpha)));
    dice.push_back(dice_loss(s.logits, g, static_cast<T>(config.dice_smooth)));
    if (s.scores && s.alpha) select.push_back(selection_loss(*s.scores, *s.alpha));
  }
  auto average = [&](const std::vector<Var<T>>& xs) {
    return ag::scale(ag::sum(ag::concat_rows(std::span<const Var<T>>(xs))), T(1) / static_cast<T>(xs.size()));
  };
  BatchLoss<T> out;
  Var<T> f = average(focal), d = average(dice);
  Var<T> total = ag::add(f, d);
  out.report.lambda = config.loss_weight;
  out.report.focal = static_cast<double>(f.scalar());
  out.report.dice = static_cast<double>(d.scalar());
  if (!select.empty()) {
    Var<T> sel = average(select);
    out.report.select = static_cast<double>(sel.scalar());
    if (config.loss_weight != 0.0) total = ag::add(total, ag::scale(sel, static_cast<T>(config.loss_weight)));
  }
  out.total = total;
  out.report.total = static_cast<double>(total.scalar());
  return out;
}

#define MAIL_INSTANTIATE(T)                                                         \
  template Var<T> focal_loss(Var<T>, const Mat<T>&, T, T);                          \
  template Var<T> dice_loss(Var<T>, const Mat<T>&, T);                              \
  template Mat<T> mask_column<T>(const BinaryMask&);                                \
  template BatchLoss<T> total_loss(std::span<const SampleLossInput<T>>, const ExperimentConfig&);

MAIL_INSTANTIATE(float)
MAIL_INSTANTIATE(double)

}  // namespace mail
