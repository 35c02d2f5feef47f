#pragma once

#include <optional>
#include <span>
#include <vector>

#include "mail/autograd.hpp"
#include "mail/config.hpp"
#include "mail/embedding.hpp"
#include "mail/encoder.hpp"
#include "mail/image.hpp"

namespace mail {

template <typename T>
struct DecoderParams {
  Parameter<T> score_fc1_w, score_fc1_b;  // d -> d
  Parameter<T> score_fc2_w, score_fc2_b;  // d -> 1
  Parameter<T> image_reduce_w, image_reduce_b;  // d -> d/r
  Parameter<T> mask_reduce_w, mask_reduce_b;    // d -> d/r

  explicit DecoderParams(const ExperimentConfig& config);
  void init(Rng& rng);
  void collect(std::vector<Parameter<T>*>& out);
};

/// Fraction of each patch covered by the mask, H' x W'.
Mat<double> coverage_map(const BinaryMask& mask, int patch);

/// K x N matrix whose row k is mask k's coverage map (flattened row-major)
/// divided by its total coverage.
template <typename T>
Mat<T> coverage_weights(std::span<const BinaryMask> masks, int patch);

/// f_k = sum(F_I * c_k) / sum(c_k) for every candidate; K x d.
template <typename T>
Var<T> pool_aligned_features(Var<T> image_features, std::span<const BinaryMask> masks, int patch);

/// f'_k = mean of mask k's encoded tokens over its bbox cells; K x d.
template <typename T>
Var<T> pool_mask_features(const TrimodalSequence<T>& seq, const EncodedFeatures<T>& features);

/// Two-layer GELU MLP applied to each pooled vector; returns 1 x K scores.
template <typename T>
Var<T> score_pooled(Var<T> pooled, DecoderParams<T>& params);

/// Scores from the configured source.
template <typename T>
Var<T> score_masks(const TrimodalSequence<T>& seq, const EncodedFeatures<T>& features,
                   std::span<const BinaryMask> masks, DecoderParams<T>& params, const ExperimentConfig& config);

/// argmax with the lowest index winning ties.
template <typename T>
int select_index(const Mat<T>& scores);

/// -log softmax(s)[alpha] for 1 x K scores.
template <typename T>
Var<T> selection_loss(Var<T> scores, int alpha);
double selection_loss_value(std::span<const double> scores, int alpha);

template <typename T>
Var<T> combine_mask_features(std::span<const Var<T>> mask_features, Var<T> scores, SelectionStrategy strategy);

/// N x 2 (row, col) coordinates, each linearly spaced over [-1, 1].
template <typename T>
Mat<T> coordinate_map(int grid_height, int grid_width);

/// [reduced image; reduced mask; O] per grid cell; N x C. Slots whose
/// modality is not in config.decoder_modalities are dropped.
template <typename T>
Var<T> assemble_decoder_input(Tape<T>& tape, const EncodedFeatures<T>& features, std::optional<Var<T>> combined_masks,
                              DecoderParams<T>& params, const ExperimentConfig& config);

}  // namespace mail
