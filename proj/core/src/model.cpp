#include "mail/model.hpp"

#include <stdexcept>

#include "mail/metrics.hpp"

namespace mail {

template <typename T>
MailModel<T>::MailModel(const ExperimentConfig& config, int vocab_size)
    : embedding(validate(config), vocab_size),
      encoder(config),
      decoder(config),
      head(config),
      config_(config),
      vocab_size_(vocab_size) {}

template <typename T>
void MailModel<T>::init(std::uint64_t seed) {
  Rng root = Rng(seed).split("init");
  Rng r1 = root.split("embedding"), r2 = root.split("encoder"), r3 = root.split("decoder"), r4 = root.split("head");
  embedding.init(r1);
  encoder.init(r2);
  decoder.init(r3);
  head.init(r4);
}

template <typename T>
std::vector<Parameter<T>*> MailModel<T>::parameters() {
  std::vector<Parameter<T>*> out;
  embedding.collect(out);
  encoder.collect(out);
  decoder.collect(out);
  head.collect(out);
  return out;
}

std::optional<int> target_index(const SampleRecord& sample) {
  auto best = best_candidate(sample.candidate_masks, sample.gt_mask, !sample.gt_instance_index.has_value());
  if (!best) return std::nullopt;
  return best->index;
}

template <typename T>
BatchOutput<T> forward_batch(Context<T>& ctx, MailModel<T>& model, std::span<const SampleRecord* const> batch,
                             bool with_loss) {
  if (batch.empty()) throw std::invalid_argument("forward_batch: empty batch");
  const ExperimentConfig& config = model.config();
  const DerivedDims dims = derived_dims(config);
  const bool selects = config.decoder_modalities.count(Modality::mask) > 0;
  Tape<T>& tape = ctx.tape;

  BatchOutput<T> out;
  std::vector<Var<T>> fused;
  std::vector<std::optional<Var<T>>> scores;
  for (const SampleRecord* sample : batch) {
    if (sample->candidate_masks.empty()) throw std::invalid_argument("forward_batch: " + sample->sample_id + " has no candidates");
    if (static_cast<int>(sample->candidate_masks.size()) > config.max_candidates)
      throw std::invalid_argument("forward_batch: " + sample->sample_id + " exceeds max_candidates");
    TrimodalSequence<T> seq = embed_sample(ctx, *sample, model.embedding, config);
    EncodedFeatures<T> features = encode(ctx, seq, model.encoder, config);
    SamplePrediction pred;
    pred.alpha = target_index(*sample);
    std::optional<Var<T>> combined;
    std::optional<Var<T>> s;
    if (selects) {
      s = score_masks(seq, features, sample->candidate_masks, model.decoder, config);
      combined = combine_mask_features(std::span<const Var<T>>(features.masks), *s, config.selection_strategy);
      for (Eigen::Index k = 0; k < s->cols(); ++k) pred.scores.push_back(static_cast<double>(s->value()(0, k)));
      pred.rho = select_index(s->value());
    }
    fused.push_back(assemble_decoder_input(tape, features, combined, model.decoder, config));
    scores.push_back(s);
    out.predictions.push_back(std::move(pred));
  }

  Var<T> x = fused.size() == 1 ? fused[0] : ag::concat_rows(std::span<const Var<T>>(fused));
  out.logits = head_forward(ctx, x, static_cast<int>(batch.size()), dims.grid_height, dims.grid_width, model.head);

  const int pixels = config.image_height * config.image_width;
  std::vector<SampleLossInput<T>> loss_inputs;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    Mat<T> logits = out.logits.value().middleRows(static_cast<Eigen::Index>(b) * pixels, pixels);
    out.predictions[b].mask = binarize(logits, config.image_height, config.image_width);
    if (with_loss) {
      SampleLossInput<T> in;
      in.logits = ag::slice_rows(out.logits, static_cast<Eigen::Index>(b) * pixels, pixels);
      in.gt = &batch[b]->gt_mask;
      in.scores = scores[b];
      in.alpha = out.predictions[b].alpha;
      loss_inputs.push_back(in);
    }
  }
  if (with_loss) out.loss = total_loss(std::span<const SampleLossInput<T>>(loss_inputs), config);
  return out;
}

template <typename T>
std::vector<SamplePrediction> predict(MailModel<T>& model, std::span<const SampleRecord> samples, int batch_size) {
  if (batch_size <= 0) throw std::invalid_argument("predict: batch size must be positive");
  std::vector<SamplePrediction> out;
  out.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); i += static_cast<std::size_t>(batch_size)) {
    std::vector<const SampleRecord*> batch;
    for (std::size_t j = i; j < std::min(samples.size(), i + static_cast<std::size_t>(batch_size)); ++j)
      batch.push_back(&samples[j]);
    Tape<T> tape;
    Context<T> ctx{tape, false, nullptr};
    auto result = forward_batch(ctx, model, std::span<const SampleRecord* const>(batch), false);
    for (auto& p : result.predictions) out.push_back(std::move(p));
  }
  return out;
}

template class MailModel<float>;
template class MailModel<double>;
template BatchOutput<float> forward_batch(Context<float>&, MailModel<float>&, std::span<const SampleRecord* const>, bool);
template BatchOutput<double> forward_batch(Context<double>&, MailModel<double>&, std::span<const SampleRecord* const>,
                                           bool);
template std::vector<SamplePrediction> predict(MailModel<float>&, std::span<const SampleRecord>, int);
template std::vector<SamplePrediction> predict(MailModel<double>&, std::span<const SampleRecord>, int);

}  // namespace mail
