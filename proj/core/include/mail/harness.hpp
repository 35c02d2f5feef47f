#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mail/config.hpp"
#include "mail/data.hpp"
#include "mail/image.hpp"
#include "mail/metrics.hpp"
#include "mail/model.hpp"

namespace mail {

/// FNV-1a over relative paths and contents of every file under directory,
/// visited in sorted order. Hex string.
std::string dataset_hash(const std::filesystem::path& directory);

/// Columns: sample_id, scores (';'-separated), rho, alpha, iou. Empty
/// fields when the decoder does not select or no target exists.
void write_score_dump(const std::filesystem::path& path, std::span<const SampleRecord> samples,
                      std::span<const SamplePrediction> predictions, std::span<const double> ious);

struct AblationVariant {
  std::string name;
  std::vector<std::string> overrides;  // "key=value" applied on the base config
  std::string skip_reason;             // non-empty: reported as SKIPPED, never trained
};

struct AblationManifest {
  std::vector<AblationVariant> variants;
  std::vector<std::uint64_t> seeds;
};

/// Modality variants v1..v6, the four selection strategies and the
/// mask-feature score source.
AblationManifest default_manifest();
AblationManifest manifest_from_json(const nlohmann::json& j);
nlohmann::json to_json(const AblationManifest& manifest);

struct AblationRun {
  std::string variant;
  std::uint64_t seed = 0;
  std::string status;  // ok, failed, skipped
  std::string message;
  EvalSummary summary;
};

struct AblationOptions {
  std::filesystem::path out_dir;
  std::string data_hash;
  std::function<void(const std::string&)> progress;
};

/// Trains and evaluates each (variant, seed) on the same samples. Variants
/// that resolve to an identical config reuse the earlier run. Failures are
/// recorded and the remaining runs continue.
std::vector<AblationRun> run_ablation(const AblationManifest& manifest, const ExperimentConfig& base,
                                      std::span<const SampleRecord> train_set, std::span<const SampleRecord> val_set,
                                      const AblationOptions& options);

void write_ablation_csv(const std::filesystem::path& path, std::span<const AblationRun> runs,
                        const std::string& data_hash);
/// Per-variant mean +- stddev across seeds, aligned columns.
std::string format_ablation_table(std::span<const AblationRun> runs);

/// Four W-wide panels: image, candidates with the selected one outlined,
/// prediction overlay, ground truth overlay.
RgbImage render_overlay(const SampleRecord& sample, const SamplePrediction& prediction);

/// Per-block attention maps scaled to [0, 255] and upsampled to image size.
GrayImage attention_to_gray(const Mat<float>& map, int height, int width);
/// Image with each block's heat map blended in, blocks side by side.
RgbImage attention_composite(const RgbImage& image, std::span<const Mat<float>> maps);

}  // namespace mail
