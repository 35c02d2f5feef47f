#pragma once

#include <vector>

#include "mail/autograd.hpp"
#include "mail/config.hpp"
#include "mail/image.hpp"

namespace mail {

template <typename T>
struct HeadBlockParams {
  Parameter<T> conv_w;  // 9C x C, rows ordered (ky, kx, c_in)
  Parameter<T> bn_gamma, bn_beta;
  Parameter<T> running_mean, running_var;  // not trainable
};

template <typename T>
struct HeadParams {
  int channels = 0;
  std::vector<HeadBlockParams<T>> blocks;
  Parameter<T> final_w, final_b;  // C x 1, 1 x 1

  /// log2(P) blocks keeping the fused channel count.
  explicit HeadParams(const ExperimentConfig& config);
  HeadParams(int channels, int num_blocks);
  /// He-normal convolutions, identity batch norm, zeroed statistics.
  void init(Rng& rng);
  void collect(std::vector<Parameter<T>*>& out);
};

constexpr double kBatchNormMomentum = 0.1;
constexpr double kBatchNormEps = 1e-5;

/// x holds batch stacked grids (rows (b, y, x), C columns) at grid_height x
/// grid_width. Returns logits with rows (b, y, x) at full resolution, one
/// column. Train mode uses and updates batch statistics.
template <typename T>
Var<T> head_forward(Context<T>& ctx, Var<T> x, int batch, int grid_height, int grid_width, HeadParams<T>& params);

/// logit > 0, strictly. logits has height*width entries in row-major order.
template <typename T>
BinaryMask binarize(const Mat<T>& logits, int height, int width);

}  // namespace mail
