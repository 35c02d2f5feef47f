#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mail/checkpoint.hpp"
#include "mail/data.hpp"
#include "mail/metrics.hpp"
#include "mail/model.hpp"
#include "mail/optimizer.hpp"

namespace mail {

/// AdamW settings implied by the config.
AdamWOptions optimizer_options(const ExperimentConfig& config);

/// Parameters, batch-norm statistics and optimizer moments ("adam.m.<name>",
/// "adam.v.<name>"); meta carries config, vocab_size and step.
Checkpoint snapshot(MailModel<float>& model, const AdamW<float>* optimizer, nlohmann::json meta);
/// Inverse of snapshot. Throws when a tensor is missing or misshaped.
void restore(MailModel<float>& model, AdamW<float>* optimizer, const Checkpoint& checkpoint);

/// Rebuilds a model from a checkpoint's embedded config.
std::unique_ptr<MailModel<float>> load_model(const std::filesystem::path& path);

struct Evaluation {
  EvalSummary summary;
  std::vector<double> ious;
  std::vector<SamplePrediction> predictions;
};

Evaluation evaluate(MailModel<float>& model, std::span<const SampleRecord> samples, int batch_size);

struct TrainOptions {
  std::filesystem::path out_dir;                  // checkpoints/ and train_log.csv go here
  std::span<const SampleRecord> validation;       // epoch-end evaluation; skipped when empty
  std::optional<std::filesystem::path> resume_from;
  std::int64_t stop_after_steps = -1;             // simulated interruption: checkpoint and return
  bool write_checkpoints = true;
  std::function<void(const std::string&)> progress;
};

struct TrainResult {
  std::int64_t steps = 0;
  bool completed = false;
  std::optional<EvalSummary> last_eval;
  std::filesystem::path last_checkpoint;
  std::filesystem::path log_path;
};

inline constexpr const char* kTrainLogHeader =
    "kind,epoch,step,lr,focal,dice,select,total,grad_norm,mean_iou,pr50,pr60,pr70,pr80,pr90";

/// Single-threaded, deterministic for a fixed (config, seed): sample order
/// and dropout masks derive from the seed and the step counter only, so a
/// resumed run continues bit-identically.
TrainResult train(MailModel<float>& model, std::span<const SampleRecord> train_set, const TrainOptions& options);

}  // namespace mail
