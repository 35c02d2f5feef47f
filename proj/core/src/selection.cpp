#include "mail/selection.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "mail/init.hpp"

namespace mail {

template <typename T>
DecoderParams<T>::DecoderParams(const ExperimentConfig& config) {
  const int d = config.embed_dim, dr = config.embed_dim / config.channel_reduce;
  score_fc1_w = make_parameter<T>("decoder.score.fc1.weight", d, d, true);
  score_fc1_b = make_parameter<T>("decoder.score.fc1.bias", 1, d, false);
  score_fc2_w = make_parameter<T>("decoder.score.fc2.weight", d, 1, true);
  score_fc2_b = make_parameter<T>("decoder.score.fc2.bias", 1, 1, false);
  image_reduce_w = make_parameter<T>("decoder.image_reduce.weight", d, dr, true);
  image_reduce_b = make_parameter<T>("decoder.image_reduce.bias", 1, dr, false);
  mask_reduce_w = make_parameter<T>("decoder.mask_reduce.weight", d, dr, true);
  mask_reduce_b = make_parameter<T>("decoder.mask_reduce.bias", 1, dr, false);
}

template <typename T>
void DecoderParams<T>::init(Rng& rng) {
  for (Parameter<T>* w : {&score_fc1_w, &score_fc2_w, &image_reduce_w, &mask_reduce_w}) init_truncated_normal(*w, rng, 0.02);
  for (Parameter<T>* b : {&score_fc1_b, &score_fc2_b, &image_reduce_b, &mask_reduce_b}) b->value.setZero();
}

template <typename T>
void DecoderParams<T>::collect(std::vector<Parameter<T>*>& out) {
  out.insert(out.end(), {&score_fc1_w, &score_fc1_b, &score_fc2_w, &score_fc2_b, &image_reduce_w, &image_reduce_b,
                         &mask_reduce_w, &mask_reduce_b});
}

Mat<double> coverage_map(const BinaryMask& mask, int patch) {
  if (patch <= 0 || mask.height % patch != 0 || mask.width % patch != 0)
    throw std::invalid_argument("coverage_map: mask dimensions not divisible by patch size");
  Mat<double> c = Mat<double>::Zero(mask.height / patch, mask.width / patch);
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x)
      if (mask.at(y, x)) c(y / patch, x / patch) += 1.0;
  c /= static_cast<double>(patch * patch);
  return c;
}

template <typename T>
Mat<T> coverage_weights(std::span<const BinaryMask> masks, int patch) {
  if (masks.empty()) throw std::invalid_argument("coverage_weights: no candidate masks");
  Mat<T> w;
  for (std::size_t k = 0; k < masks.size(); ++k) {
    Mat<double> c = coverage_map(masks[k], patch);
    const double total = c.sum();
    if (total <= 0.0) throw std::invalid_argument("pool_aligned_features: candidate " + std::to_string(k) + " is empty");
    if (k == 0) w.resize(static_cast<Eigen::Index>(masks.size()), c.size());
    for (Eigen::Index i = 0; i < c.size(); ++i) w(static_cast<Eigen::Index>(k), i) = static_cast<T>(c.data()[i] / total);
  }
  return w;
}

template <typename T>
Var<T> pool_aligned_features(Var<T> image_features, std::span<const BinaryMask> masks, int patch) {
  Mat<T> w = coverage_weights<T>(masks, patch);
  if (w.cols() != image_features.rows())
    throw std::invalid_argument("pool_aligned_features: mask grid does not match image features");
  return ag::matmul(image_features.tape()->constant(std::move(w)), image_features);
}

template <typename T>
Var<T> pool_mask_features(const TrimodalSequence<T>& seq, const EncodedFeatures<T>& features) {
  const auto k = static_cast<Eigen::Index>(seq.mask_token_count.size());
  if (k == 0 || !features.mask_tokens.valid()) throw std::invalid_argument("pool_mask_features: no mask tokens");
  Mat<T> avg = Mat<T>::Zero(k, seq.mask_len);
  for (Eigen::Index i = 0; i < k; ++i) {
    const int off = seq.mask_token_offset[i], cnt = seq.mask_token_count[i];
    avg.block(i, off, 1, cnt).setConstant(T(1) / static_cast<T>(cnt));
  }
  return ag::matmul(features.mask_tokens.tape()->constant(std::move(avg)), features.mask_tokens);
}

template <typename T>
Var<T> score_pooled(Var<T> pooled, DecoderParams<T>& params) {
  if (pooled.rows() == 0) throw std::invalid_argument("score_masks: K = 0");
  Tape<T>& tape = *pooled.tape();
  Var<T> h = ag::gelu(ag::linear(pooled, tape.param(params.score_fc1_w), tape.param(params.score_fc1_b)));
  return ag::transpose(ag::linear(h, tape.param(params.score_fc2_w), tape.param(params.score_fc2_b)));
}

template <typename T>
Var<T> score_masks(const TrimodalSequence<T>& seq, const EncodedFeatures<T>& features,
                   std::span<const BinaryMask> masks, DecoderParams<T>& params, const ExperimentConfig& config) {
  if (masks.empty()) throw std::invalid_argument("score_masks: K = 0");
  if (config.score_source == ScoreSource::aligned_image) {
    if (!features.has_image) throw std::invalid_argument("score_masks: aligned_image scoring needs encoded image features");
    return score_pooled(pool_aligned_features(features.image, masks, config.patch_size), params);
  }
  return score_pooled(pool_mask_features(seq, features), params);
}

template <typename T>
int select_index(const Mat<T>& scores) {
  if (scores.size() == 0) throw std::invalid_argument("select_index: no scores");
  int best = 0;
  for (Eigen::Index i = 1; i < scores.size(); ++i)
    if (scores.data()[i] > scores.data()[best]) best = static_cast<int>(i);
  return best;
}

template <typename T>
Var<T> selection_loss(Var<T> scores, int alpha) {
  if (scores.rows() != 1) throw std::invalid_argument("selection_loss: scores must be 1 x K");
  if (alpha < 0 || alpha >= scores.cols())
    throw std::out_of_range("selection_loss: target index " + std::to_string(alpha) + " outside [0, " +
                            std::to_string(scores.cols()) + ")");
  const Mat<T>& s = scores.value();
  const T m = s.maxCoeff();
  Mat<T> p = (s.array() - m).exp().matrix();
  const T z = p.sum();
  p /= z;
  Mat<T> out(1, 1);
  out(0, 0) = std::max(T(0), m + std::log(z) - s(0, alpha));
  const int is = scores.id();
  return scores.tape()->push(std::move(out), scores.tape()->requires_grad(is),
                             [is, alpha, p = std::move(p)](Tape<T>& t, int self) {
                               Mat<T> g = p;
                               g(0, alpha) -= T(1);
                               t.grad_buffer(is) += t.grad(self)(0, 0) * g;
                             });
}

double selection_loss_value(std::span<const double> scores, int alpha) {
  if (alpha < 0 || alpha >= static_cast<int>(scores.size())) throw std::out_of_range("selection_loss: target index");
  const double m = *std::max_element(scores.begin(), scores.end());
  double z = 0.0;
  for (double s : scores) z += std::exp(s - m);
  return std::max(0.0, m + std::log(z) - scores[static_cast<std::size_t>(alpha)]);
}

template <typename T>
Var<T> combine_mask_features(std::span<const Var<T>> mask_features, Var<T> scores, SelectionStrategy strategy) {
  if (mask_features.empty()) throw std::invalid_argument("combine_mask_features: K = 0");
  if (scores.cols() != static_cast<Eigen::Index>(mask_features.size()))
    throw std::invalid_argument("combine_mask_features: score count differs from mask count");
  switch (strategy) {
    case SelectionStrategy::adaptive:
      return mask_features[static_cast<std::size_t>(select_index(scores.value()))];
    case SelectionStrategy::mean: {
      Var<T> total = mask_features[0];
      for (std::size_t k = 1; k < mask_features.size(); ++k) total = ag::add(total, mask_features[k]);
      return ag::scale(total, T(1) / static_cast<T>(mask_features.size()));
    }
    case SelectionStrategy::maximum:
      return ag::max_of(mask_features);
    case SelectionStrategy::weighted_sum:
      return ag::weighted_sum(mask_features, ag::softmax_rows(scores));
  }
  throw std::logic_error("combine_mask_features: unknown strategy");
}

template <typename T>
Mat<T> coordinate_map(int grid_height, int grid_width) {
  if (grid_height <= 0 || grid_width <= 0) throw std::invalid_argument("coordinate_map: non-positive grid");
  auto lin = [](int i, int n) { return n == 1 ? T(0) : static_cast<T>(-1.0 + 2.0 * i / (n - 1)); };
  Mat<T> o(grid_height * grid_width, 2);
  for (int r = 0; r < grid_height; ++r)
    for (int c = 0; c < grid_width; ++c) {
      o(r * grid_width + c, 0) = lin(r, grid_height);
      o(r * grid_width + c, 1) = lin(c, grid_width);
    }
  return o;
}

template <typename T>
Var<T> assemble_decoder_input(Tape<T>& tape, const EncodedFeatures<T>& features, std::optional<Var<T>> combined_masks,
                              DecoderParams<T>& params, const ExperimentConfig& config) {
  const DerivedDims dims = derived_dims(config);
  const auto& dec = config.decoder_modalities;
  if (dec.empty()) throw std::invalid_argument("assemble_decoder_input: no decoder modalities");
  std::vector<Var<T>> parts;
  if (dec.count(Modality::image)) {
    if (!features.has_image) throw std::invalid_argument("assemble_decoder_input: image features requested but not encoded");
    parts.push_back(ag::linear(features.image, tape.param(params.image_reduce_w), tape.param(params.image_reduce_b)));
  }
  if (dec.count(Modality::mask)) {
    if (!combined_masks) throw std::invalid_argument("assemble_decoder_input: mask features requested but not encoded");
    parts.push_back(ag::linear(*combined_masks, tape.param(params.mask_reduce_w), tape.param(params.mask_reduce_b)));
  }
  if (dec.count(Modality::language)) throw std::invalid_argument("assemble_decoder_input: language is not a decoder modality");
  parts.push_back(tape.constant(coordinate_map<T>(dims.grid_height, dims.grid_width)));
  return ag::concat_cols(std::span<const Var<T>>(parts));
}

#define MAIL_INSTANTIATE(T)                                                                                        \
  template struct DecoderParams<T>;                                                                                \
  template Mat<T> coverage_weights<T>(std::span<const BinaryMask>, int);                                           \
  template Var<T> pool_aligned_features(Var<T>, std::span<const BinaryMask>, int);                                 \
  template Var<T> pool_mask_features(const TrimodalSequence<T>&, const EncodedFeatures<T>&);                       \
  template Var<T> score_pooled(Var<T>, DecoderParams<T>&);                                                         \
  template Var<T> score_masks(const TrimodalSequence<T>&, const EncodedFeatures<T>&, std::span<const BinaryMask>, \
                              DecoderParams<T>&, const ExperimentConfig&);                                         \
  template int select_index(const Mat<T>&);                                                                        \
  template Var<T> selection_loss(Var<T>, int);                                                                     \
  template Var<T> combine_mask_features(std::span<const Var<T>>, Var<T>, SelectionStrategy);                       \
  template Mat<T> coordinate_map<T>(int, int);                                                                     \
  template Var<T> assemble_decoder_input(Tape<T>&, const EncodedFeatures<T>&, std::optional<Var<T>>,               \
                                         DecoderParams<T>&, const ExperimentConfig&);

MAIL_INSTANTIATE(float)
MAIL_INSTANTIATE(double)

}  // namespace mail
