#include "mail/embedding.hpp"

#include <stdexcept>
#include <string>

#include "mail/init.hpp"

namespace mail {

template <typename T>
Mat<T> patchify_image(const RgbImage& image, int patch) {
  if (patch <= 0 || image.height % patch != 0 || image.width % patch != 0)
    throw std::invalid_argument("patchify_image: image dimensions not divisible by patch size");
  const int gw = image.width / patch, gh = image.height / patch;
  Mat<T> out(gh * gw, 3 * patch * patch);
  for (int i = 0; i < gh; ++i)
    for (int j = 0; j < gw; ++j) {
      auto row = out.row(i * gw + j);
      int at = 0;
      for (int y = 0; y < patch; ++y)
        for (int x = 0; x < patch; ++x)
          for (int c = 0; c < 3; ++c) row(at++) = T(image.at(i * patch + y, j * patch + x, c)) / T(255);
    }
  return out;
}

template <typename T>
Mat<T> unpatchify_image(const Mat<T>& patches, int height, int width, int patch) {
  const int gw = width / patch, gh = height / patch;
  if (patches.rows() != gh * gw || patches.cols() != 3 * patch * patch)
    throw std::invalid_argument("unpatchify_image: shape mismatch");
  // Result is H x (W*3), interleaved channels.
  Mat<T> out(height, width * 3);
  for (int i = 0; i < gh; ++i)
    for (int j = 0; j < gw; ++j) {
      int at = 0;
      for (int y = 0; y < patch; ++y)
        for (int x = 0; x < patch; ++x)
          for (int c = 0; c < 3; ++c) out(i * patch + y, (j * patch + x) * 3 + c) = patches(i * gw + j, at++);
    }
  return out;
}

namespace {

template <typename T, typename Fill>
MaskPatches<T> collect_patches(const BinaryMask& mask, int patch, int channels, Fill fill) {
  if (patch <= 0 || mask.height % patch != 0 || mask.width % patch != 0)
    throw std::invalid_argument("mask_valid_patches: mask dimensions not divisible by patch size");
  const auto box = bounding_box(mask);
  if (!box) throw std::invalid_argument("mask_valid_patches: empty mask");
  const int r0 = box->y0 / patch, r1 = box->y1 / patch, c0 = box->x0 / patch, c1 = box->x1 / patch;
  MaskPatches<T> out;
  out.contents.resize((r1 - r0 + 1) * (c1 - c0 + 1), channels * patch * patch);
  int n = 0;
  for (int r = r0; r <= r1; ++r)
    for (int c = c0; c <= c1; ++c) {
      out.cells.push_back({r, c});
      auto row = out.contents.row(n++);
      int at = 0;
      for (int y = 0; y < patch; ++y)
        for (int x = 0; x < patch; ++x) fill(row, at, r * patch + y, c * patch + x);
    }
  return out;
}

}  // namespace

template <typename T>
MaskPatches<T> mask_valid_patches(const BinaryMask& mask, int patch) {
  return collect_patches<T>(mask, patch, 1, [&](auto& row, int& at, int y, int x) { row(at++) = T(mask.at(y, x)); });
}

template <typename T>
MaskPatches<T> mask_cropped_patches(const BinaryMask& mask, const RgbImage& image, int patch) {
  if (image.height != mask.height || image.width != mask.width)
    throw std::invalid_argument("mask_cropped_patches: image and mask shapes differ");
  return collect_patches<T>(mask, patch, 3, [&](auto& row, int& at, int y, int x) {
    for (int c = 0; c < 3; ++c) row(at++) = mask.at(y, x) ? T(image.at(y, x, c)) / T(255) : T(0);
  });
}

MaskContent mask_content_for(const ExperimentConfig& config) {
  return config.encoder_modalities.count(Modality::image) ? MaskContent::binary : MaskContent::cropped_rgb;
}

template <typename T>
EmbeddingParams<T>::EmbeddingParams(const ExperimentConfig& config, int vocab_size) {
  const int d = config.embed_dim, p2 = config.patch_size * config.patch_size;
  const int n = derived_dims(config).num_patches;
  const int mask_channels = mask_content_for(config) == MaskContent::binary ? p2 : 3 * p2;
  image_proj_w = make_parameter<T>("embedding.image_proj.weight", 3 * p2, d, true);
  image_proj_b = make_parameter<T>("embedding.image_proj.bias", 1, d, false);
  mask_proj_w = make_parameter<T>("embedding.mask_proj.weight", mask_channels, d, true);
  mask_proj_b = make_parameter<T>("embedding.mask_proj.bias", 1, d, false);
  word_embedding = make_parameter<T>("embedding.word", vocab_size, d, false);
  image_positional = make_parameter<T>("embedding.image_positional", n, d, false);
  text_positional = make_parameter<T>("embedding.text_positional", config.max_text_len, d, false);
  type_mask = make_parameter<T>("embedding.type.mask", 1, d, false);
  type_image = make_parameter<T>("embedding.type.image", 1, d, false);
  type_language = make_parameter<T>("embedding.type.language", 1, d, false);
}

template <typename T>
void EmbeddingParams<T>::init(Rng& rng) {
  for (Parameter<T>* p : {&image_proj_w, &mask_proj_w, &word_embedding, &image_positional, &text_positional,
                          &type_mask, &type_image, &type_language})
    init_truncated_normal(*p, rng, 0.02);
  image_proj_b.value.setZero();
  mask_proj_b.value.setZero();
}

template <typename T>
void EmbeddingParams<T>::collect(std::vector<Parameter<T>*>& out) {
  out.insert(out.end(), {&image_proj_w, &image_proj_b, &mask_proj_w, &mask_proj_b, &word_embedding,
                         &image_positional, &text_positional, &type_mask, &type_image, &type_language});
}

template <typename T>
TrimodalSequence<T> embed_sample(Context<T>& ctx, const SampleRecord& sample, EmbeddingParams<T>& params,
                                 const ExperimentConfig& config) {
  Tape<T>& tape = ctx.tape;
  const int patch = config.patch_size;
  const DerivedDims dims = derived_dims(config);
  const auto& enc = config.encoder_modalities;
  TrimodalSequence<T> seq;
  std::vector<Var<T>> blocks;

  if (enc.count(Modality::mask)) {
    const MaskContent content = mask_content_for(config);
    std::vector<Mat<T>> contents;
    std::vector<int> positions;
    int total = 0;
    for (std::size_t k = 0; k < sample.candidate_masks.size(); ++k) {
      const BinaryMask& m = sample.candidate_masks[k];
      if (!m.any()) throw std::invalid_argument("embed_sample: candidate mask " + std::to_string(k) + " of " +
                                                sample.sample_id + " has zero area");
      MaskPatches<T> mp = content == MaskContent::binary ? mask_valid_patches<T>(m, patch)
                                                         : mask_cropped_patches<T>(m, sample.image, patch);
      seq.mask_token_offset.push_back(total);
      seq.mask_token_count.push_back(static_cast<int>(mp.cells.size()));
      for (const GridCell& cell : mp.cells) {
        seq.mask_tokens.push_back({static_cast<int>(k), cell.row, cell.col});
        positions.push_back(cell.row * dims.grid_width + cell.col);
      }
      total += static_cast<int>(mp.cells.size());
      contents.push_back(std::move(mp.contents));
    }
    Mat<T> all(total, params.mask_proj_w.value.rows());
    int at = 0;
    for (const auto& c : contents) {
      all.middleRows(at, c.rows()) = c;
      at += static_cast<int>(c.rows());
    }
    Var<T> proj = ag::linear(tape.constant(std::move(all)), tape.param(params.mask_proj_w), tape.param(params.mask_proj_b));
    Var<T> pos = ag::gather_rows(tape.param(params.image_positional), std::span<const int>(positions));
    blocks.push_back(ag::add_row(ag::add(proj, pos), tape.param(params.type_mask)));
    seq.mask_len = total;
  }

  if (enc.count(Modality::image)) {
    Var<T> patches = tape.constant(patchify_image<T>(sample.image, patch));
    Var<T> proj = ag::linear(patches, tape.param(params.image_proj_w), tape.param(params.image_proj_b));
    Var<T> with_pos = ag::add(proj, tape.param(params.image_positional));
    blocks.push_back(ag::add_row(with_pos, tape.param(params.type_image)));
    seq.image_len = dims.num_patches;
  }

  {
    const int t_max = config.max_text_len;
    if (sample.tokens.empty()) throw std::invalid_argument("embed_sample: empty expression in " + sample.sample_id);
    if (static_cast<int>(sample.tokens.size()) > t_max)
      throw std::invalid_argument("embed_sample: expression of " + sample.sample_id + " exceeds max_text_len");
    std::vector<int> ids(static_cast<std::size_t>(t_max), Vocabulary::kPad);
    const int vocab = static_cast<int>(params.word_embedding.value.rows());
    for (std::size_t t = 0; t < sample.tokens.size(); ++t) {
      if (sample.tokens[t] < 0 || sample.tokens[t] >= vocab)
        throw std::invalid_argument("embed_sample: token id " + std::to_string(sample.tokens[t]) +
                                    " outside vocabulary in " + sample.sample_id);
      ids[t] = sample.tokens[t];
    }
    Var<T> words = ag::gather_rows(tape.param(params.word_embedding), std::span<const int>(ids));
    Var<T> with_pos = ag::add(words, tape.param(params.text_positional));
    blocks.push_back(ag::add_row(with_pos, tape.param(params.type_language)));
    seq.text_len = t_max;
    seq.modality_tags.reserve(static_cast<std::size_t>(seq.length()));
    seq.modality_tags.assign(static_cast<std::size_t>(seq.mask_len), Modality::mask);
    seq.modality_tags.insert(seq.modality_tags.end(), static_cast<std::size_t>(seq.image_len), Modality::image);
    seq.modality_tags.insert(seq.modality_tags.end(), static_cast<std::size_t>(t_max), Modality::language);
    seq.pad_mask.assign(static_cast<std::size_t>(seq.mask_len + seq.image_len), 1);
    for (int t = 0; t < t_max; ++t) seq.pad_mask.push_back(t < static_cast<int>(sample.tokens.size()) ? 1 : 0);
  }

  seq.tokens = blocks.size() == 1 ? blocks[0] : ag::concat_rows(std::span<const Var<T>>(blocks));
  return seq;
}

template Mat<float> patchify_image<float>(const RgbImage&, int);
template Mat<double> patchify_image<double>(const RgbImage&, int);
template Mat<float> unpatchify_image<float>(const Mat<float>&, int, int, int);
template Mat<double> unpatchify_image<double>(const Mat<double>&, int, int, int);
template MaskPatches<float> mask_valid_patches<float>(const BinaryMask&, int);
template MaskPatches<double> mask_valid_patches<double>(const BinaryMask&, int);
template MaskPatches<float> mask_cropped_patches<float>(const BinaryMask&, const RgbImage&, int);
template MaskPatches<double> mask_cropped_patches<double>(const BinaryMask&, const RgbImage&, int);
template struct EmbeddingParams<float>;
template struct EmbeddingParams<double>;
template TrimodalSequence<float> embed_sample(Context<float>&, const SampleRecord&, EmbeddingParams<float>&,
                                              const ExperimentConfig&);
template TrimodalSequence<double> embed_sample(Context<double>&, const SampleRecord&, EmbeddingParams<double>&,
                                               const ExperimentConfig&);

}  // namespace mail
