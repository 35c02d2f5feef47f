#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mail/config.hpp"
#include "mail/image.hpp"
#include "mail/rng.hpp"

namespace mail {

enum class ShapeKind { circle, square, triangle };
enum class Relation { leftmost, rightmost, topmost, bottommost, largest, smallest, color_unique, none };
enum class NoiseLevel { clean, light, heavy };

inline constexpr std::array<std::string_view, 3> kShapeNames{"circle", "square", "triangle"};
inline constexpr std::array<std::string_view, 8> kColorNames{"red",    "green",  "blue",  "yellow",
                                                             "purple", "orange", "white", "cyan"};
inline constexpr std::array<std::array<std::uint8_t, 3>, 8> kPalette{{{220, 40, 40},
                                                                      {40, 190, 60},
                                                                      {50, 80, 230},
                                                                      {235, 225, 50},
                                                                      {150, 60, 200},
                                                                      {245, 140, 30},
                                                                      {245, 245, 245},
                                                                      {60, 220, 225}}};
inline constexpr std::array<std::uint8_t, 3> kBackground{40, 40, 40};

std::string_view to_string(ShapeKind s);
std::string_view to_string(Relation r);
std::string_view to_string(NoiseLevel n);
NoiseLevel parse_noise_level(std::string_view text);

struct Instance {
  ShapeKind shape;
  int color;        // index into kPalette
  double center_y;  // pixels
  double center_x;
  double size;      // half-extent in pixels
  bool operator==(const Instance&) const = default;
};

struct SceneSpec {
  std::vector<Instance> instances;
  int referent_index = 0;
  Relation relation = Relation::none;
};

/// One training example. Tokens are unpadded (1 <= T <= T_max).
struct SampleRecord {
  std::string sample_id;
  RgbImage image;
  std::string expression;
  std::vector<int> tokens;
  std::vector<BinaryMask> candidate_masks;
  BinaryMask gt_mask;
  std::optional<int> gt_instance_index;

  bool operator==(const SampleRecord&) const = default;
};

/// Word-level tokenizer with reserved ids 0 = PAD and 1 = UNK.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;

  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> words);

  int id(std::string_view word) const;
  std::vector<int> tokenize(std::string_view text) const;
  /// Number of ids including the two reserved ones.
  int size() const { return static_cast<int>(words_.size()) + 2; }
  const std::vector<std::string>& words() const { return words_; }
  bool operator==(const Vocabulary& other) const { return words_ == other.words_; }

 private:
  std::vector<std::string> words_;  // id - 2 -> word
  std::map<std::string, int, std::less<>> ids_;
};

/// Words ordered by descending frequency, then lexicographically.
Vocabulary build_vocabulary(const std::vector<std::string>& expressions);
/// Every expression the template grammar can produce, once each.
std::vector<std::string> grammar_corpus();
/// Vocabulary of grammar_corpus(); shared by every split.
Vocabulary canonical_vocabulary();

/// Text for a (relation, referent) pair, e.g. "the leftmost square".
std::string describe(const SceneSpec& scene);

/// Renders one scene with a unique referring expression. The returned
/// record holds the exact visible instance masks as candidates, in instance
/// order, with gt_instance_index = referent.
std::pair<SceneSpec, SampleRecord> generate_scene(Rng& rng, const ExperimentConfig& config, const Vocabulary& vocab);

struct CandidateSet {
  std::vector<BinaryMask> masks;
  std::optional<int> referent_index;  // absent when the referent was dropped
  std::vector<int> source_instance;   // instance index per candidate, -1 for spurious blobs
};

struct NoiseParams {
  int max_radius;        // erosion/dilation radius drawn from [-max_radius, max_radius]
  double identity_prob;  // probability the radius is forced to zero
  double jitter_prob;    // per boundary pixel flip probability
  double drop_prob;
  double spurious_prob;
};
NoiseParams noise_params(NoiseLevel level);

/// Simulates an off-the-shelf instance segmenter: morphological boundary
/// noise, edge jitter, instance drops and distractor blobs, then shuffles.
CandidateSet perturb_candidates(const SceneSpec& scene, const std::vector<BinaryMask>& instance_masks,
                                NoiseLevel level, Rng& rng, int max_candidates = 8);

/// Scene plus perturbed candidates; sample i of a split uses
/// Rng(seed).split(split).split(i).
SampleRecord generate_sample(Rng& rng, const ExperimentConfig& config, const Vocabulary& vocab, NoiseLevel level,
                             std::string sample_id);
std::vector<SampleRecord> generate_split(const ExperimentConfig& config, const Vocabulary& vocab,
                                         std::string_view split, int count, NoiseLevel level);

struct Dataset {
  std::vector<SampleRecord> samples;
  Vocabulary vocab;
};

/// Layout: manifest.jsonl, images/<id>.png, masks/<id>/<k>.png, gt/<id>.png,
/// vocab.json. The manifest is written last. Returns the manifest path.
std::filesystem::path write_dataset(const std::vector<SampleRecord>& samples, const Vocabulary& vocab,
                                    const std::filesystem::path& directory);
Dataset read_dataset(const std::filesystem::path& directory);

/// Binary morphology with a 3x3 square structuring element, repeated.
BinaryMask dilate(const BinaryMask& mask, int radius);
BinaryMask erode(const BinaryMask& mask, int radius);

}  // namespace mail
