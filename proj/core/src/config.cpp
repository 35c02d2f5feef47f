#include "mail/config.hpp"

#include <bit>
#include <fstream>
#include <sstream>

namespace mail {

namespace {

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

nlohmann::json modalities_to_json(const ModalitySet& set) {
  auto arr = nlohmann::json::array();
  // Canonical order, independent of enum ordering in the set.
  for (Modality m : {Modality::mask, Modality::image, Modality::language})
    if (set.count(m)) arr.push_back(std::string(to_string(m)));
  return arr;
}

ModalitySet modalities_from_json(const nlohmann::json& j) {
  ModalitySet out;
  if (j.is_string()) {
    std::string text = j.get<std::string>();
    for (char& c : text)
      if (c == '+' || c == ',') c = ' ';
    std::istringstream in(text);
    std::string word;
    while (in >> word) out.insert(parse_modality(word));
    return out;
  }
  if (!j.is_array()) throw std::invalid_argument("modality set must be an array or a string");
  for (const auto& item : j) out.insert(parse_modality(item.get<std::string>()));
  return out;
}

}  // namespace

std::string_view to_string(Modality m) {
  switch (m) {
    case Modality::mask: return "mask";
    case Modality::image: return "image";
    case Modality::language: return "language";
  }
  return "?";
}

std::string_view to_string(SelectionStrategy s) {
  switch (s) {
    case SelectionStrategy::adaptive: return "adaptive";
    case SelectionStrategy::mean: return "mean";
    case SelectionStrategy::maximum: return "maximum";
    case SelectionStrategy::weighted_sum: return "weighted_sum";
  }
  return "?";
}

std::string_view to_string(ScoreSource s) {
  switch (s) {
    case ScoreSource::aligned_image: return "aligned_image";
    case ScoreSource::mask_feature: return "mask_feature";
  }
  return "?";
}

Modality parse_modality(std::string_view text) {
  if (text == "mask") return Modality::mask;
  if (text == "image") return Modality::image;
  if (text == "language") return Modality::language;
  throw std::invalid_argument("unknown modality '" + std::string(text) + "'");
}

SelectionStrategy parse_strategy(std::string_view text) {
  if (text == "adaptive") return SelectionStrategy::adaptive;
  if (text == "mean") return SelectionStrategy::mean;
  if (text == "maximum") return SelectionStrategy::maximum;
  if (text == "weighted_sum") return SelectionStrategy::weighted_sum;
  throw std::invalid_argument("unknown selection strategy '" + std::string(text) + "'");
}

ScoreSource parse_score_source(std::string_view text) {
  if (text == "aligned_image") return ScoreSource::aligned_image;
  if (text == "mask_feature") return ScoreSource::mask_feature;
  throw std::invalid_argument("unknown score source '" + std::string(text) + "'");
}

ConfigError::ConfigError(std::vector<std::string> violations)
    : std::runtime_error("invalid config: " + join(violations, "; ")), violations_(std::move(violations)) {}

ExperimentConfig ExperimentConfig::full_scale() {
  ExperimentConfig c;
  c.image_height = 416;
  c.image_width = 416;
  c.patch_size = 32;
  c.embed_dim = 768;
  c.num_blocks = 12;
  c.num_heads = 12;
  c.max_text_len = 15;
  c.channel_reduce = 3;
  c.loss_weight = 0.1;
  c.batch_size = 128;
  c.grad_clip = 0.0;
  return c;
}

ExperimentConfig validate(const ExperimentConfig& c) {
  std::vector<std::string> v;
  auto positive = [&](int value, const char* name) {
    if (value <= 0) v.push_back(std::string(name) + " must be positive");
    return value > 0;
  };
  const bool hp = positive(c.image_height, "image_height");
  const bool wp = positive(c.image_width, "image_width");
  const bool pp = positive(c.patch_size, "patch_size");
  const bool dp = positive(c.embed_dim, "embed_dim");
  const bool headp = positive(c.num_heads, "num_heads");
  const bool rp = positive(c.channel_reduce, "channel_reduce");
  positive(c.max_text_len, "max_text_len");
  positive(c.epochs, "epochs");
  positive(c.batch_size, "batch_size");
  positive(c.max_candidates, "max_candidates");
  if (c.num_blocks < 0) v.push_back("num_blocks must be non-negative");

  if (hp && pp && c.image_height % c.patch_size != 0) v.push_back("H mod P != 0");
  if (wp && pp && c.image_width % c.patch_size != 0) v.push_back("W mod P != 0");
  if (pp && !std::has_single_bit(static_cast<unsigned>(c.patch_size))) v.push_back("P is not a power of two");
  if (dp && headp && c.embed_dim % c.num_heads != 0) v.push_back("d mod num_heads != 0");
  if (dp && rp && c.embed_dim % c.channel_reduce != 0) v.push_back("d mod r != 0");

  if (c.loss_weight < 0) v.push_back("loss_weight must be non-negative");
  if (c.focal_gamma < 0) v.push_back("focal_gamma must be non-negative");
  if (c.focal_alpha < 0 || c.focal_alpha > 1) v.push_back("focal_alpha outside [0, 1]");
  if (c.dice_smooth < 0) v.push_back("dice_smooth must be non-negative");
  if (c.learning_rate < 0) v.push_back("learning_rate must be non-negative");
  if (c.weight_decay < 0) v.push_back("weight_decay must be non-negative");
  if (c.warmup_fraction < 0 || c.warmup_fraction > 1) v.push_back("warmup_fraction outside [0, 1]");
  if (c.dropout < 0 || c.dropout >= 1) v.push_back("dropout outside [0, 1)");
  if (c.grad_clip < 0) v.push_back("grad_clip must be non-negative");

  const auto& enc = c.encoder_modalities;
  const auto& dec = c.decoder_modalities;
  if (!enc.count(Modality::language)) v.push_back("encoder_modalities must include language");
  if (!enc.count(Modality::mask) && !enc.count(Modality::image))
    v.push_back("encoder_modalities must include mask or image");
  if (dec.empty()) v.push_back("decoder_modalities is empty");
  if (dec.count(Modality::language)) v.push_back("decoder_modalities may not include language");
  for (Modality m : dec)
    if (m != Modality::language && !enc.count(m))
      v.push_back("decoder modality '" + std::string(to_string(m)) + "' is not encoded");
  if (c.score_source == ScoreSource::aligned_image && dec.count(Modality::mask) && !enc.count(Modality::image))
    v.push_back("score_source aligned_image requires image in encoder_modalities");

  if (!v.empty()) throw ConfigError(std::move(v));
  return c;
}

DerivedDims derived_dims(const ExperimentConfig& c) {
  DerivedDims d{};
  d.grid_height = c.image_height / c.patch_size;
  d.grid_width = c.image_width / c.patch_size;
  d.num_patches = d.grid_height * d.grid_width;
  d.head_blocks = std::countr_zero(static_cast<unsigned>(c.patch_size));
  return d;
}

int fused_channels(const ExperimentConfig& c) {
  const int reduced = c.embed_dim / c.channel_reduce;
  return reduced * static_cast<int>(c.decoder_modalities.count(Modality::image)) +
         reduced * static_cast<int>(c.decoder_modalities.count(Modality::mask)) + 2;
}

nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["image_height"] = c.image_height;
  j["image_width"] = c.image_width;
  j["patch_size"] = c.patch_size;
  j["embed_dim"] = c.embed_dim;
  j["num_blocks"] = c.num_blocks;
  j["num_heads"] = c.num_heads;
  j["max_text_len"] = c.max_text_len;
  j["channel_reduce"] = c.channel_reduce;
  j["loss_weight"] = c.loss_weight;
  j["focal_gamma"] = c.focal_gamma;
  j["focal_alpha"] = c.focal_alpha;
  j["dice_smooth"] = c.dice_smooth;
  j["learning_rate"] = c.learning_rate;
  j["weight_decay"] = c.weight_decay;
  j["warmup_fraction"] = c.warmup_fraction;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["seed"] = c.seed;
  j["encoder_modalities"] = modalities_to_json(c.encoder_modalities);
  j["decoder_modalities"] = modalities_to_json(c.decoder_modalities);
  j["selection_strategy"] = std::string(to_string(c.selection_strategy));
  j["score_source"] = std::string(to_string(c.score_source));
  j["dropout"] = c.dropout;
  j["grad_clip"] = c.grad_clip;
  j["max_candidates"] = c.max_candidates;
  return j;
}

namespace {

void set_field(ExperimentConfig& c, const std::string& key, const nlohmann::json& value) {
  auto as_int = [&] { return value.get<int>(); };
  auto as_double = [&] { return value.get<double>(); };
  if (key == "image_height") c.image_height = as_int();
  else if (key == "image_width") c.image_width = as_int();
  else if (key == "patch_size") c.patch_size = as_int();
  else if (key == "embed_dim") c.embed_dim = as_int();
  else if (key == "num_blocks") c.num_blocks = as_int();
  else if (key == "num_heads") c.num_heads = as_int();
  else if (key == "max_text_len") c.max_text_len = as_int();
  else if (key == "channel_reduce") c.channel_reduce = as_int();
  else if (key == "loss_weight") c.loss_weight = as_double();
  else if (key == "focal_gamma") c.focal_gamma = as_double();
  else if (key == "focal_alpha") c.focal_alpha = as_double();
  else if (key == "dice_smooth") c.dice_smooth = as_double();
  else if (key == "learning_rate") c.learning_rate = as_double();
  else if (key == "weight_decay") c.weight_decay = as_double();
  else if (key == "warmup_fraction") c.warmup_fraction = as_double();
  else if (key == "epochs") c.epochs = as_int();
  else if (key == "batch_size") c.batch_size = as_int();
  else if (key == "seed") c.seed = value.get<std::uint64_t>();
  else if (key == "encoder_modalities") c.encoder_modalities = modalities_from_json(value);
  else if (key == "decoder_modalities") c.decoder_modalities = modalities_from_json(value);
  else if (key == "selection_strategy") c.selection_strategy = parse_strategy(value.get<std::string>());
  else if (key == "score_source") c.score_source = parse_score_source(value.get<std::string>());
  else if (key == "dropout") c.dropout = as_double();
  else if (key == "grad_clip") c.grad_clip = as_double();
  else if (key == "max_candidates") c.max_candidates = as_int();
  else throw std::invalid_argument("unknown config key '" + key + "'");
}

}  // namespace

ExperimentConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");
  ExperimentConfig c;
  for (const auto& [key, value] : j.items()) {
    try {
      set_field(c, key, value);
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument("config key '" + key + "': " + e.what());
    }
  }
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  return config_from_json(nlohmann::json::parse(in));
}

void save_config(const ExperimentConfig& config, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write config " + path.string());
  out << to_json(config).dump(2) << '\n';
}

void apply_override(ExperimentConfig& config, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0)
    throw std::invalid_argument("override must look like key=value: " + std::string(assignment));
  const std::string key(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));
  nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  try {
    set_field(config, key, value);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("override '" + key + "': " + e.what());
  }
}

}  // namespace mail
