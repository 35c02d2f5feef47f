#pragma once

#include <string>
#include <vector>

#include "mail/config.hpp"
#include "mail/data.hpp"
#include "mail/rng.hpp"

namespace mail::testing {

/// Small architecture that keeps gradient checks and forward passes cheap.
inline ExperimentConfig tiny_config(int size = 16, int patch = 4, int dim = 8) {
  ExperimentConfig c;
  c.image_height = size;
  c.image_width = size;
  c.patch_size = patch;
  c.embed_dim = dim;
  c.num_blocks = 2;
  c.num_heads = 2;
  c.max_text_len = 4;
  c.dropout = 0.0;
  return validate(c);
}

/// Smallest setup the scene generator supports; trains in well under a second.
inline ExperimentConfig train_config() {
  ExperimentConfig c;
  c.image_height = 32;
  c.image_width = 32;
  c.patch_size = 8;
  c.embed_dim = 16;
  c.num_blocks = 1;
  c.num_heads = 2;
  c.batch_size = 4;
  c.epochs = 2;
  c.learning_rate = 1e-3;
  return validate(c);
}

inline BinaryMask box_mask(int h, int w, int y0, int x0, int y1, int x1) {
  BinaryMask m(h, w);
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) m.set(y, x, true);
  return m;
}

/// Random blob confined to a random rectangle; never empty.
inline BinaryMask random_blob(Rng& rng, int h, int w) {
  const int y0 = rng.uniform_int(0, h - 1), x0 = rng.uniform_int(0, w - 1);
  const int y1 = rng.uniform_int(y0, h - 1), x1 = rng.uniform_int(x0, w - 1);
  BinaryMask m(h, w);
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) m.set(y, x, rng.bernoulli(0.6));
  m.set(y0, x0, true);
  return m;
}

inline RgbImage random_image(Rng& rng, int h, int w) {
  RgbImage img(h, w);
  for (auto& v : img.data) v = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
  return img;
}

/// Sample with random content; tokens drawn from [2, vocab).
inline SampleRecord random_sample(Rng& rng, const ExperimentConfig& c, int k, int vocab, std::string id = "s") {
  SampleRecord s;
  s.sample_id = std::move(id);
  s.image = random_image(rng, c.image_height, c.image_width);
  for (int i = 0; i < k; ++i) s.candidate_masks.push_back(random_blob(rng, c.image_height, c.image_width));
  s.gt_mask = s.candidate_masks[0];
  s.gt_instance_index = 0;
  const int t = rng.uniform_int(1, c.max_text_len);
  for (int i = 0; i < t; ++i) s.tokens.push_back(rng.uniform_int(2, vocab - 1));
  s.expression = "synthetic";
  return s;
}

}  // namespace mail::testing
