#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace mail {

enum class Modality { mask, image, language };
enum class SelectionStrategy { adaptive, mean, maximum, weighted_sum };
enum class ScoreSource { aligned_image, mask_feature };

std::string_view to_string(Modality m);
std::string_view to_string(SelectionStrategy s);
std::string_view to_string(ScoreSource s);
Modality parse_modality(std::string_view text);
SelectionStrategy parse_strategy(std::string_view text);
ScoreSource parse_score_source(std::string_view text);

using ModalitySet = std::set<Modality>;

/// Thrown by validate(); carries one message per violated invariant.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> violations);
  const std::vector<std::string>& violations() const { return violations_; }

 private:
  std::vector<std::string> violations_;
};

/// All architecture, data and optimisation hyperparameters of one experiment.
/// Defaults are the toy (desk-scale) setting.
struct ExperimentConfig {
  int image_height = 64;
  int image_width = 64;
  int patch_size = 8;
  int embed_dim = 64;
  int num_blocks = 4;
  int num_heads = 4;
  int max_text_len = 12;
  int channel_reduce = 2;
  double loss_weight = 0.1;
  double focal_gamma = 2.0;
  double focal_alpha = 0.25;
  double dice_smooth = 1.0;
  double learning_rate = 1e-4;
  double weight_decay = 1e-2;
  double warmup_fraction = 0.1;
  int epochs = 10;
  int batch_size = 16;
  std::uint64_t seed = 0;
  ModalitySet encoder_modalities{Modality::mask, Modality::image, Modality::language};
  ModalitySet decoder_modalities{Modality::mask, Modality::image};
  SelectionStrategy selection_strategy = SelectionStrategy::adaptive;
  ScoreSource score_source = ScoreSource::aligned_image;
  // Implementation knob; see README.
  double dropout = 0.1;
  double grad_clip = 1.0;  // global-norm clip; 0 disables
  int max_candidates = 8;

  bool operator==(const ExperimentConfig&) const = default;

  /// Full-size architecture: 416x416, P=32, d=768, 12 blocks of 12 heads.
  static ExperimentConfig full_scale();
};

/// Returns the config unchanged iff every invariant holds; otherwise throws
/// ConfigError naming every violation.
ExperimentConfig validate(const ExperimentConfig& config);

struct DerivedDims {
  int num_patches;   // N = H*W/P^2
  int grid_height;   // H' = H/P
  int grid_width;    // W' = W/P
  int head_blocks;   // log2 P
  bool operator==(const DerivedDims&) const = default;
};

DerivedDims derived_dims(const ExperimentConfig& config);

/// Channel count of the decoder input: d/r per decoder modality plus the
/// two coordinate channels.
int fused_channels(const ExperimentConfig& config);

nlohmann::json to_json(const ExperimentConfig& config);
/// Rejects unknown keys. Missing keys keep their defaults.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const ExperimentConfig& config, const std::filesystem::path& path);

/// Applies one "key=value" override. The value is parsed as JSON when
/// possible, otherwise taken as a string; modality sets also accept
/// "image+mask" or "image,mask".
void apply_override(ExperimentConfig& config, std::string_view assignment);

}  // namespace mail
