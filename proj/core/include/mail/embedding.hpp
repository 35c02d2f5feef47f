#pragma once

#include <cstdint>
#include <vector>

#include "mail/autograd.hpp"
#include "mail/config.hpp"
#include "mail/data.hpp"
#include "mail/image.hpp"

namespace mail {

struct GridCell {
  int row;
  int col;
  bool operator==(const GridCell&) const = default;
};

/// Position of one mask token in the patch grid.
struct MaskTokenIndex {
  int mask;
  int row;
  int col;
  bool operator==(const MaskTokenIndex&) const = default;
};

/// Patch-aligned valid area of one candidate mask. contents holds one
/// row per cell (P*P values in (y, x) order, or 3*P*P in (y, x, c) order for
/// mask-cropped RGB).
template <typename T>
struct MaskPatches {
  std::vector<GridCell> cells;
  Mat<T> contents;
};

/// Row-major patch grid, patch (i, j) at row i*W'+j, flattened (y, x, c).
template <typename T>
Mat<T> patchify_image(const RgbImage& image, int patch);
/// Inverse of patchify_image on unit-interval values.
template <typename T>
Mat<T> unpatchify_image(const Mat<T>& patches, int height, int width, int patch);

/// Tight bounding box expanded outward to patch alignment; every patch in
/// the box is emitted, including all-zero ones.
template <typename T>
MaskPatches<T> mask_valid_patches(const BinaryMask& mask, int patch);
/// Same cells, contents are the image pixels inside the mask (zero outside).
template <typename T>
MaskPatches<T> mask_cropped_patches(const BinaryMask& mask, const RgbImage& image, int patch);

enum class MaskContent { binary, cropped_rgb };

/// Binary patches normally; cropped RGB when the image is not encoded.
MaskContent mask_content_for(const ExperimentConfig& config);

template <typename T>
struct EmbeddingParams {
  Parameter<T> image_proj_w, image_proj_b;
  Parameter<T> mask_proj_w, mask_proj_b;
  Parameter<T> word_embedding;
  Parameter<T> image_positional;
  Parameter<T> text_positional;
  Parameter<T> type_mask, type_image, type_language;

  EmbeddingParams(const ExperimentConfig& config, int vocab_size);
  /// Truncated normal (std 0.02) tables and weights, zero biases.
  void init(Rng& rng);
  void collect(std::vector<Parameter<T>*>& out);
};

template <typename T>
struct TrimodalSequence {
  Var<T> tokens;                             // S x d
  std::vector<Modality> modality_tags;       // per token
  std::vector<MaskTokenIndex> mask_tokens;   // per mask token, in block order
  std::vector<int> mask_token_offset;        // first token of mask k within the mask block
  std::vector<int> mask_token_count;         // tokens of mask k
  std::vector<std::uint8_t> pad_mask;        // 1 = real token
  int mask_len = 0;                          // N'
  int image_len = 0;                         // N
  int text_len = 0;                          // language block length (T_max)

  int length() const { return mask_len + image_len + text_len; }
};

/// Builds z0 = [mask tokens; image tokens; language tokens]. Omitted
/// encoder modalities contribute no tokens. The expression is padded with
/// PAD to max_text_len; PAD positions are flagged 0 in pad_mask.
template <typename T>
TrimodalSequence<T> embed_sample(Context<T>& ctx, const SampleRecord& sample, EmbeddingParams<T>& params,
                                 const ExperimentConfig& config);

}  // namespace mail
