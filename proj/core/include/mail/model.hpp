#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "mail/config.hpp"
#include "mail/data.hpp"
#include "mail/embedding.hpp"
#include "mail/encoder.hpp"
#include "mail/head.hpp"
#include "mail/losses.hpp"
#include "mail/selection.hpp"

namespace mail {

/// All learnable state of the segmentation model. Not copyable: tapes bind
/// to parameter addresses.
template <typename T>
class MailModel {
 public:
  MailModel(const ExperimentConfig& config, int vocab_size);
  MailModel(const MailModel&) = delete;
  MailModel& operator=(const MailModel&) = delete;

  /// Deterministic initialisation from the seed.
  void init(std::uint64_t seed);
  /// Every parameter (including batch-norm statistics) in a stable order.
  std::vector<Parameter<T>*> parameters();

  const ExperimentConfig& config() const { return config_; }
  int vocab_size() const { return vocab_size_; }

  EmbeddingParams<T> embedding;
  EncoderParams<T> encoder;
  DecoderParams<T> decoder;
  HeadParams<T> head;

 private:
  ExperimentConfig config_;
  int vocab_size_;
};

struct SamplePrediction {
  std::vector<double> scores;  // empty when the decoder does not select
  std::optional<int> rho;
  std::optional<int> alpha;
  BinaryMask mask;
};

template <typename T>
struct BatchOutput {
  Var<T> logits;  // (b, y, x) x 1
  std::vector<SamplePrediction> predictions;
  std::optional<BatchLoss<T>> loss;
};

/// Supervision target: best-IoU candidate, absent only when the referent
/// was dropped and nothing overlaps the ground truth.
std::optional<int> target_index(const SampleRecord& sample);

/// Runs the whole model on a batch. When with_loss is set, computes the
/// training objective on the same tape.
template <typename T>
BatchOutput<T> forward_batch(Context<T>& ctx, MailModel<T>& model, std::span<const SampleRecord* const> batch,
                             bool with_loss);

/// Eval-mode predictions for every sample, batch by batch.
template <typename T>
std::vector<SamplePrediction> predict(MailModel<T>& model, std::span<const SampleRecord> samples, int batch_size);

}  // namespace mail
