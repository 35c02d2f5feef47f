#include "mail/head.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "mail/init.hpp"

namespace mail {

template <typename T>
HeadParams<T>::HeadParams(const ExperimentConfig& config)
    : HeadParams(fused_channels(config), derived_dims(config).head_blocks) {}

template <typename T>
HeadParams<T>::HeadParams(int c, int num_blocks) : channels(c) {
  for (int i = 0; i < num_blocks; ++i) {
    const std::string p = "head.block" + std::to_string(i) + ".";
    HeadBlockParams<T> b;
    b.conv_w = make_parameter<T>(p + "conv.weight", 9 * c, c, true);
    b.bn_gamma = make_parameter<T>(p + "bn.gamma", 1, c, false);
    b.bn_beta = make_parameter<T>(p + "bn.beta", 1, c, false);
    b.running_mean = make_parameter<T>(p + "bn.running_mean", 1, c, false, false);
    b.running_var = make_parameter<T>(p + "bn.running_var", 1, c, false, false);
    b.bn_gamma.value.setOnes();
    b.running_var.value.setOnes();
    blocks.push_back(std::move(b));
  }
  final_w = make_parameter<T>("head.final.weight", c, 1, true);
  final_b = make_parameter<T>("head.final.bias", 1, 1, false);
}

template <typename T>
void HeadParams<T>::init(Rng& rng) {
  for (auto& b : blocks) {
    const double std = std::sqrt(2.0 / static_cast<double>(b.conv_w.value.rows()));
    for (Eigen::Index i = 0; i < b.conv_w.value.size(); ++i) b.conv_w.value.data()[i] = static_cast<T>(rng.normal() * std);
    b.bn_gamma.value.setOnes();
    b.bn_beta.value.setZero();
    b.running_mean.value.setZero();
    b.running_var.value.setOnes();
  }
  const double std = std::sqrt(1.0 / static_cast<double>(channels));
  for (Eigen::Index i = 0; i < final_w.value.size(); ++i) final_w.value.data()[i] = static_cast<T>(rng.normal() * std);
  final_b.value.setZero();
}

template <typename T>
void HeadParams<T>::collect(std::vector<Parameter<T>*>& out) {
  for (auto& b : blocks) out.insert(out.end(), {&b.conv_w, &b.bn_gamma, &b.bn_beta, &b.running_mean, &b.running_var});
  out.push_back(&final_w);
  out.push_back(&final_b);
}

template <typename T>
Var<T> head_forward(Context<T>& ctx, Var<T> x, int batch, int grid_height, int grid_width, HeadParams<T>& params) {
  if (x.cols() != params.channels)
    throw std::invalid_argument("head_forward: input has " + std::to_string(x.cols()) + " channels, head expects " +
                                std::to_string(params.channels));
  Tape<T>& tape = ctx.tape;
  int h = grid_height, w = grid_width;
  for (std::size_t i = 0; i < params.blocks.size(); ++i) {
    auto& b = params.blocks[i];
    Var<T> y = ag::matmul(ag::im2col3x3(x, batch, h, w), tape.param(b.conv_w));
    y = ag::batch_norm(y, tape.param(b.bn_gamma), tape.param(b.bn_beta), b.running_mean, b.running_var, ctx.train,
                       static_cast<T>(kBatchNormMomentum), static_cast<T>(kBatchNormEps));
    y = ag::relu(y);
    x = ag::upsample2x(y, batch, h, w);
    h *= 2;
    w *= 2;
    if (!x.value().allFinite())
      throw std::runtime_error("head_forward: non-finite activation in block " + std::to_string(i));
  }
  return ag::linear(x, tape.param(params.final_w), tape.param(params.final_b));
}

template <typename T>
BinaryMask binarize(const Mat<T>& logits, int height, int width) {
  if (logits.size() != Eigen::Index(height) * width) throw std::invalid_argument("binarize: size mismatch");
  BinaryMask m(height, width);
  for (Eigen::Index i = 0; i < logits.size(); ++i) m.bits[static_cast<std::size_t>(i)] = logits.data()[i] > T(0) ? 1 : 0;
  return m;
}

template struct HeadParams<float>;
template struct HeadParams<double>;
template Var<float> head_forward(Context<float>&, Var<float>, int, int, int, HeadParams<float>&);
template Var<double> head_forward(Context<double>&, Var<double>, int, int, int, HeadParams<double>&);
template BinaryMask binarize(const Mat<float>&, int, int);
template BinaryMask binarize(const Mat<double>&, int, int);

}  // namespace mail
