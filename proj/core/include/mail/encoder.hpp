#pragma once

#include <optional>
#include <stdexcept>
#include <vector>

#include "mail/autograd.hpp"
#include "mail/config.hpp"
#include "mail/embedding.hpp"

namespace mail {

template <typename T>
struct EncoderBlockParams {
  Parameter<T> ln1_gamma, ln1_beta;
  Parameter<T> wq, bq, wk, bk, wv, bv, wo, bo;
  Parameter<T> ln2_gamma, ln2_beta;
  Parameter<T> fc1_w, fc1_b, fc2_w, fc2_b;

  EncoderBlockParams(int index, int dim);
  void init(Rng& rng);
  void collect(std::vector<Parameter<T>*>& out);
};

template <typename T>
struct EncoderParams {
  std::vector<EncoderBlockParams<T>> blocks;
  Parameter<T> final_gamma, final_beta;

  explicit EncoderParams(const ExperimentConfig& config);
  void init(Rng& rng);
  void collect(std::vector<Parameter<T>*>& out);
};

/// Raised when a block produces NaN or Inf.
class NonFiniteError : public std::runtime_error {
 public:
  NonFiniteError(const std::string& where, int block)
      : std::runtime_error(where + ": non-finite activation in block " + std::to_string(block)), block_(block) {}
  int block() const { return block_; }

 private:
  int block_;
};

struct BlockOptions {
  int heads = 1;
  double dropout = 0.0;
  int index = 0;  // for error reporting
};

/// Pre-LN block: z' = MSA(LN(z)) + z; out = MLP(LN(z')) + z'.
/// probs_out, when set, receives the per-head attention matrices.
template <typename T>
Var<T> encoder_block(Context<T>& ctx, Var<T> z, EncoderBlockParams<T>& params, std::span<const std::uint8_t> pad_mask,
                     const BlockOptions& options, std::vector<Mat<T>>* probs_out = nullptr);

template <typename T>
struct EncodedFeatures {
  Var<T> image;                       // F_I: N x d, rows in grid order; invalid when image not encoded
  std::vector<Var<T>> masks;          // F_M^k: N x d each, zero outside the mask's cells
  Var<T> mask_tokens;                 // mask-block output, N' x d
  Var<T> language;                    // T_max x d
  bool has_image = false;
};

template <typename T>
EncodedFeatures<T> encode(Context<T>& ctx, const TrimodalSequence<T>& seq, EncoderParams<T>& params,
                          const ExperimentConfig& config,
                          std::vector<std::vector<Mat<T>>>* block_probs = nullptr);

/// Head-averaged attention from the image token at (row, col) to every
/// image token, one H' x W' map per block. Evaluated without dropout.
template <typename T>
std::vector<Mat<T>> attention_maps(const TrimodalSequence<T>& seq, EncoderParams<T>& params,
                                   const ExperimentConfig& config, int row, int col);

}  // namespace mail
