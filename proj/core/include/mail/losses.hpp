#pragma once

#include <optional>
#include <span>
#include <vector>

#include "mail/autograd.hpp"
#include "mail/config.hpp"
#include "mail/image.hpp"

namespace mail {

struct LossReport {
  double focal = 0.0;
  double dice = 0.0;
  double select = 0.0;
  double total = 0.0;
  double lambda = 0.0;
};

/// Mean over pixels of -a_t (1 - p_t)^gamma log p_t, p = sigmoid(logit).
/// alpha < 0 weights both classes by 1.
template <typename T>
Var<T> focal_loss(Var<T> logits, const Mat<T>& gt, T gamma, T alpha);

/// 1 - (2 sum p g + eps) / (sum p + sum g + eps), p = sigmoid(logit).
template <typename T>
Var<T> dice_loss(Var<T> logits, const Mat<T>& gt, T eps);

/// Binary mask as a column of 0/1 values matching flattened logits.
template <typename T>
Mat<T> mask_column(const BinaryMask& mask);

template <typename T>
struct SampleLossInput {
  Var<T> logits;                   // H*W x 1
  const BinaryMask* gt = nullptr;
  std::optional<Var<T>> scores;    // 1 x K; absent when the decoder does not select
  std::optional<int> alpha;        // absent when no candidate overlaps the referent
};

template <typename T>
struct BatchLoss {
  Var<T> total;
  LossReport report;
};

/// focal and dice averaged over samples; select averaged over samples that
/// carry both scores and a target (0 when there are none).
template <typename T>
BatchLoss<T> total_loss(std::span<const SampleLossInput<T>> samples, const ExperimentConfig& config);

}  // namespace mail
