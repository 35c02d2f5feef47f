#include "mail/encoder.hpp"

#include <string>

#include "mail/init.hpp"

namespace mail {

namespace {

constexpr double kLayerNormEps = 1e-6;

template <typename T>
void set_layer_norm(Parameter<T>& gamma, Parameter<T>& beta) {
  gamma.value.setOnes();
  beta.value.setZero();
}

}  // namespace

template <typename T>
EncoderBlockParams<T>::EncoderBlockParams(int index, int dim) {
  const std::string p = "encoder.block" + std::to_string(index) + ".";
  ln1_gamma = make_parameter<T>(p + "ln1.gamma", 1, dim, false);
  ln1_beta = make_parameter<T>(p + "ln1.beta", 1, dim, false);
  wq = make_parameter<T>(p + "attn.q.weight", dim, dim, true);
  bq = make_parameter<T>(p + "attn.q.bias", 1, dim, false);
  wk = make_parameter<T>(p + "attn.k.weight", dim, dim, true);
  bk = make_parameter<T>(p + "attn.k.bias", 1, dim, false);
  wv = make_parameter<T>(p + "attn.v.weight", dim, dim, true);
  bv = make_parameter<T>(p + "attn.v.bias", 1, dim, false);
  wo = make_parameter<T>(p + "attn.out.weight", dim, dim, true);
  bo = make_parameter<T>(p + "attn.out.bias", 1, dim, false);
  ln2_gamma = make_parameter<T>(p + "ln2.gamma", 1, dim, false);
  ln2_beta = make_parameter<T>(p + "ln2.beta", 1, dim, false);
  fc1_w = make_parameter<T>(p + "mlp.fc1.weight", dim, 4 * dim, true);
  fc1_b = make_parameter<T>(p + "mlp.fc1.bias", 1, 4 * dim, false);
  fc2_w = make_parameter<T>(p + "mlp.fc2.weight", 4 * dim, dim, true);
  fc2_b = make_parameter<T>(p + "mlp.fc2.bias", 1, dim, false);
  set_layer_norm(ln1_gamma, ln1_beta);
  set_layer_norm(ln2_gamma, ln2_beta);
}

template <typename T>
void EncoderBlockParams<T>::init(Rng& rng) {
  for (Parameter<T>* w : {&wq, &wk, &wv, &wo, &fc1_w, &fc2_w}) init_truncated_normal(*w, rng, 0.02);
  for (Parameter<T>* b : {&bq, &bk, &bv, &bo, &fc1_b, &fc2_b}) b->value.setZero();
  set_layer_norm(ln1_gamma, ln1_beta);
  set_layer_norm(ln2_gamma, ln2_beta);
}

template <typename T>
void EncoderBlockParams<T>::collect(std::vector<Parameter<T>*>& out) {
  out.insert(out.end(), {&ln1_gamma, &ln1_beta, &wq, &bq, &wk, &bk, &wv, &bv, &wo, &bo, &ln2_gamma, &ln2_beta,
                         &fc1_w, &fc1_b, &fc2_w, &fc2_b});
}

template <typename T>
EncoderParams<T>::EncoderParams(const ExperimentConfig& config) {
  blocks.reserve(static_cast<std::size_t>(config.num_blocks));
  for (int i = 0; i < config.num_blocks; ++i) blocks.emplace_back(i, config.embed_dim);
  final_gamma = make_parameter<T>("encoder.final_ln.gamma", 1, config.embed_dim, false);
  final_beta = make_parameter<T>("encoder.final_ln.beta", 1, config.embed_dim, false);
  set_layer_norm(final_gamma, final_beta);
}

template <typename T>
void EncoderParams<T>::init(Rng& rng) {
  for (auto& b : blocks) b.init(rng);
  set_layer_norm(final_gamma, final_beta);
}

template <typename T>
void EncoderParams<T>::collect(std::vector<Parameter<T>*>& out) {
  for (auto& b : blocks) b.collect(out);
  out.push_back(&final_gamma);
  out.push_back(&final_beta);
}

template <typename T>
Var<T> encoder_block(Context<T>& ctx, Var<T> z, EncoderBlockParams<T>& p, std::span<const std::uint8_t> pad_mask,
                     const BlockOptions& options, std::vector<Mat<T>>* probs_out) {
  Tape<T>& tape = ctx.tape;
  const T eps = static_cast<T>(kLayerNormEps);
  const T rate = static_cast<T>(options.dropout);
  auto maybe_dropout = [&](Var<T> x) {
    if (!ctx.train || rate <= T(0)) return x;
    if (!ctx.rng) throw std::logic_error("encoder_block: dropout requires an rng in train mode");
    return ag::dropout(x, rate, *ctx.rng);
  };

  Var<T> h = ag::layer_norm(z, tape.param(p.ln1_gamma), tape.param(p.ln1_beta), eps);
  Var<T> q = ag::linear(h, tape.param(p.wq), tape.param(p.bq));
  Var<T> k = ag::linear(h, tape.param(p.wk), tape.param(p.bk));
  Var<T> v = ag::linear(h, tape.param(p.wv), tape.param(p.bv));
  Var<T> a = ag::attention(q, k, v, pad_mask, options.heads, probs_out);
  a = maybe_dropout(ag::linear(a, tape.param(p.wo), tape.param(p.bo)));
  Var<T> zh = ag::add(a, z);

  Var<T> m = ag::layer_norm(zh, tape.param(p.ln2_gamma), tape.param(p.ln2_beta), eps);
  m = ag::gelu(ag::linear(m, tape.param(p.fc1_w), tape.param(p.fc1_b)));
  m = maybe_dropout(ag::linear(m, tape.param(p.fc2_w), tape.param(p.fc2_b)));
  Var<T> out = ag::add(m, zh);
  if (!out.value().allFinite()) throw NonFiniteError("encoder_block", options.index);
  return out;
}

template <typename T>
EncodedFeatures<T> encode(Context<T>& ctx, const TrimodalSequence<T>& seq, EncoderParams<T>& params,
                          const ExperimentConfig& config, std::vector<std::vector<Mat<T>>>* block_probs) {
  Tape<T>& tape = ctx.tape;
  Var<T> z = seq.tokens;
  if (z.rows() != seq.length()) throw std::invalid_argument("encode: token count does not match sequence lengths");
  if (block_probs) block_probs->clear();
  for (std::size_t i = 0; i < params.blocks.size(); ++i) {
    BlockOptions opt{config.num_heads, config.dropout, static_cast<int>(i)};
    std::vector<Mat<T>> probs;
    z = encoder_block(ctx, z, params.blocks[i], seq.pad_mask, opt, block_probs ? &probs : nullptr);
    if (block_probs) block_probs->push_back(std::move(probs));
  }
  z = ag::layer_norm(z, tape.param(params.final_gamma), tape.param(params.final_beta), static_cast<T>(kLayerNormEps));
  if (!z.value().allFinite()) throw NonFiniteError("encode", static_cast<int>(params.blocks.size()));

  EncodedFeatures<T> out;
  const int n = derived_dims(config).num_patches;
  const int gw = derived_dims(config).grid_width;
  if (seq.mask_len > 0) {
    out.mask_tokens = ag::slice_rows(z, 0, seq.mask_len);
    for (std::size_t k = 0; k < seq.mask_token_offset.size(); ++k) {
      const int off = seq.mask_token_offset[k], cnt = seq.mask_token_count[k];
      std::vector<int> rows;
      rows.reserve(static_cast<std::size_t>(cnt));
      for (int t = off; t < off + cnt; ++t) rows.push_back(seq.mask_tokens[t].row * gw + seq.mask_tokens[t].col);
      out.masks.push_back(ag::scatter_rows(ag::slice_rows(out.mask_tokens, off, cnt), std::span<const int>(rows), n));
    }
  }
  if (seq.image_len > 0) {
    out.image = ag::slice_rows(z, seq.mask_len, seq.image_len);
    out.has_image = true;
  }
  out.language = ag::slice_rows(z, seq.mask_len + seq.image_len, seq.text_len);
  return out;
}

template <typename T>
std::vector<Mat<T>> attention_maps(const TrimodalSequence<T>& seq, EncoderParams<T>& params,
                                   const ExperimentConfig& config, int row, int col) {
  const DerivedDims dims = derived_dims(config);
  if (row < 0 || row >= dims.grid_height || col < 0 || col >= dims.grid_width)
    throw std::out_of_range("attention_maps: query (" + std::to_string(row) + ", " + std::to_string(col) +
                            ") outside the " + std::to_string(dims.grid_height) + "x" +
                            std::to_string(dims.grid_width) + " grid");
  if (seq.image_len == 0) throw std::invalid_argument("attention_maps: image tokens are not encoded");
  Context<T> ctx{*seq.tokens.tape(), false, nullptr};
  std::vector<std::vector<Mat<T>>> probs;
  encode(ctx, seq, params, config, &probs);
  const int query = seq.mask_len + row * dims.grid_width + col;
  std::vector<Mat<T>> maps;
  for (const auto& heads : probs) {
    Mat<T> m = Mat<T>::Zero(dims.grid_height, dims.grid_width);
    for (const auto& p : heads)
      for (int i = 0; i < dims.num_patches; ++i)
        m(i / dims.grid_width, i % dims.grid_width) += p(query, seq.mask_len + i);
    m /= static_cast<T>(heads.size());
    maps.push_back(std::move(m));
  }
  return maps;
}

template struct EncoderBlockParams<float>;
template struct EncoderBlockParams<double>;
template struct EncoderParams<float>;
template struct EncoderParams<double>;
template Var<float> encoder_block(Context<float>&, Var<float>, EncoderBlockParams<float>&, std::span<const std::uint8_t>,
                                  const BlockOptions&, std::vector<Mat<float>>*);
template Var<double> encoder_block(Context<double>&, Var<double>, EncoderBlockParams<double>&,
                                   std::span<const std::uint8_t>, const BlockOptions&, std::vector<Mat<double>>*);
template EncodedFeatures<float> encode(Context<float>&, const TrimodalSequence<float>&, EncoderParams<float>&,
                                       const ExperimentConfig&, std::vector<std::vector<Mat<float>>>*);
template EncodedFeatures<double> encode(Context<double>&, const TrimodalSequence<double>&, EncoderParams<double>&,
                                        const ExperimentConfig&, std::vector<std::vector<Mat<double>>>*);
template std::vector<Mat<float>> attention_maps(const TrimodalSequence<float>&, EncoderParams<float>&,
                                                const ExperimentConfig&, int, int);
template std::vector<Mat<double>> attention_maps(const TrimodalSequence<double>&, EncoderParams<double>&,
                                                 const ExperimentConfig&, int, int);

}  // namespace mail
