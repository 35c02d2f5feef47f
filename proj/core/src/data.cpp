#include "mail/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace mail {

std::string_view to_string(ShapeKind s) { return kShapeNames[static_cast<int>(s)]; }

std::string_view to_string(Relation r) {
  switch (r) {
    case Relation::leftmost: return "leftmost";
    case Relation::rightmost: return "rightmost";
    case Relation::topmost: return "topmost";
    case Relation::bottommost: return "bottommost";
    case Relation::largest: return "largest";
    case Relation::smallest: return "smallest";
    case Relation::color_unique: return "color-unique";
    case Relation::none: return "none";
  }
  return "?";
}

std::string_view to_string(NoiseLevel n) {
  switch (n) {
    case NoiseLevel::clean: return "clean";
    case NoiseLevel::light: return "light";
    case NoiseLevel::heavy: return "heavy";
  }
  return "?";
}

NoiseLevel parse_noise_level(std::string_view text) {
  if (text == "clean") return NoiseLevel::clean;
  if (text == "light") return NoiseLevel::light;
  if (text == "heavy") return NoiseLevel::heavy;
  throw std::invalid_argument("unknown noise level '" + std::string(text) + "'");
}

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary::Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {
  for (std::size_t i = 0; i < words_.size(); ++i) {
    if (!ids_.emplace(words_[i], static_cast<int>(i) + 2).second)
      throw std::invalid_argument("duplicate vocabulary word '" + words_[i] + "'");
  }
}

int Vocabulary::id(std::string_view word) const {
  auto it = ids_.find(word);
  return it == ids_.end() ? kUnk : it->second;
}

std::vector<int> Vocabulary::tokenize(std::string_view text) const {
  std::vector<int> out;
  std::istringstream in{std::string(text)};
  std::string word;
  while (in >> word) out.push_back(id(word));
  return out;
}

Vocabulary build_vocabulary(const std::vector<std::string>& expressions) {
  std::map<std::string, int> freq;
  for (const auto& e : expressions) {
    std::istringstream in(e);
    std::string word;
    while (in >> word) ++freq[word];
  }
  std::vector<std::pair<std::string, int>> items(freq.begin(), freq.end());
  std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<std::string> words;
  words.reserve(items.size());
  for (auto& [w, n] : items) words.push_back(w);
  return Vocabulary(std::move(words));
}

namespace {

constexpr std::array<Relation, 6> kOrdinalRelations{Relation::leftmost, Relation::rightmost, Relation::topmost,
                                                    Relation::bottommost, Relation::largest,  Relation::smallest};

bool is_ordinal(Relation r) {
  return std::find(kOrdinalRelations.begin(), kOrdinalRelations.end(), r) != kOrdinalRelations.end();
}

}  // namespace

std::vector<std::string> grammar_corpus() {
  std::vector<std::string> out;
  for (Relation r : kOrdinalRelations)
    for (auto shape : kShapeNames) out.push_back("the " + std::string(to_string(r)) + " " + std::string(shape));
  for (auto color : kColorNames)
    for (auto shape : kShapeNames) out.push_back("the " + std::string(color) + " " + std::string(shape));
  return out;
}

Vocabulary canonical_vocabulary() { return build_vocabulary(grammar_corpus()); }

std::string describe(const SceneSpec& scene) {
  const Instance& ref = scene.instances.at(static_cast<std::size_t>(scene.referent_index));
  const std::string shape(to_string(ref.shape));
  if (is_ordinal(scene.relation)) return "the " + std::string(to_string(scene.relation)) + " " + shape;
  return "the " + std::string(kColorNames[static_cast<std::size_t>(ref.color)]) + " " + shape;
}

// ---------------------------------------------------------------------------
// Rendering

namespace {

bool inside(const Instance& inst, double py, double px) {
  const double dy = py - inst.center_y, dx = px - inst.center_x, r = inst.size;
  switch (inst.shape) {
    case ShapeKind::circle: return dy * dy + dx * dx <= r * r;
    case ShapeKind::square: return std::abs(dy) <= r && std::abs(dx) <= r;
    case ShapeKind::triangle: return dy >= -r && dy <= r && std::abs(dx) <= (dy + r) / 2.0;
  }
  return false;
}

BinaryMask full_mask(const Instance& inst, int h, int w) {
  BinaryMask m(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (inside(inst, y + 0.5, x + 0.5)) m.set(y, x, true);
  return m;
}

std::int64_t overlap(const BinaryMask& a, const BinaryMask& b) {
  std::int64_t n = 0;
  for (std::size_t i = 0; i < a.bits.size(); ++i) n += a.bits[i] && b.bits[i];
  return n;
}

/// Generator-side uniqueness with margins so the referent is visually
/// separable, not merely distinct.
bool referent_is_unique(const SceneSpec& scene, double scale) {
  const Instance& ref = scene.instances[static_cast<std::size_t>(scene.referent_index)];
  const double pos_margin = 4.0 * scale, size_margin = 1.5 * scale;
  for (std::size_t i = 0; i < scene.instances.size(); ++i) {
    if (static_cast<int>(i) == scene.referent_index) continue;
    const Instance& o = scene.instances[i];
    switch (scene.relation) {
      case Relation::color_unique:
        if (o.color == ref.color) return false;
        break;
      case Relation::none:
        if (o.color == ref.color && o.shape == ref.shape) return false;
        break;
      default:
        if (o.shape != ref.shape) break;
        if (scene.relation == Relation::leftmost && o.center_x < ref.center_x + pos_margin) return false;
        if (scene.relation == Relation::rightmost && o.center_x > ref.center_x - pos_margin) return false;
        if (scene.relation == Relation::topmost && o.center_y < ref.center_y + pos_margin) return false;
        if (scene.relation == Relation::bottommost && o.center_y > ref.center_y - pos_margin) return false;
        if (scene.relation == Relation::largest && o.size > ref.size - size_margin) return false;
        if (scene.relation == Relation::smallest && o.size < ref.size + size_margin) return false;
        break;
    }
  }
  return true;
}

struct Attr {
  ShapeKind shape;
  int color;
};

std::vector<Attr> sample_attributes(Rng& rng, Relation relation, int n) {
  const auto random_shape = [&] { return static_cast<ShapeKind>(rng.uniform_int(0, 2)); };
  const auto random_color = [&] { return rng.uniform_int(0, 7); };
  const auto other_color = [&](int c) {
    int o = rng.uniform_int(0, 6);
    return o >= c ? o + 1 : o;
  };
  const auto other_shape = [&](ShapeKind s) {
    int o = rng.uniform_int(0, 1);
    return static_cast<ShapeKind>(o >= static_cast<int>(s) ? o + 1 : o);
  };

  std::vector<Attr> a(static_cast<std::size_t>(n));
  const ShapeKind target_shape = random_shape();
  const int target_color = random_color();
  a[0] = {target_shape, target_color};
  if (is_ordinal(relation)) {
    a[1] = {target_shape, random_color()};
    for (int i = 2; i < n; ++i) a[i] = {random_shape(), random_color()};
  } else if (relation == Relation::color_unique) {
    for (int i = 1; i < n; ++i) a[i] = {random_shape(), other_color(target_color)};
  } else {
    // Same-shape distractor of another colour plus the target colour on
    // another shape, so neither attribute alone identifies the referent.
    a[1] = {target_shape, other_color(target_color)};
    a[2] = {other_shape(target_shape), target_color};
    for (int i = 3; i < n; ++i) {
      Attr x{random_shape(), random_color()};
      if (x.shape == target_shape && x.color == target_color) x.color = other_color(target_color);
      a[i] = x;
    }
  }
  return a;
}

}  // namespace

std::pair<SceneSpec, SampleRecord> generate_scene(Rng& rng, const ExperimentConfig& config, const Vocabulary& vocab) {
  const int h = config.image_height, w = config.image_width;
  const double scale = std::min(h, w) / 64.0;
  const int max_instances = std::min(6, config.max_candidates);
  if (max_instances < 2) throw std::invalid_argument("generate_scene: max_candidates must allow two instances");
  constexpr int kMaxAttempts = 500;

  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    const auto relation = static_cast<Relation>(rng.uniform_int(0, 7));
    int n = rng.uniform_int(2, max_instances);
    if (relation == Relation::none) n = std::max(n, std::min(3, max_instances));
    if (relation == Relation::none && n < 3) continue;
    const auto attrs = sample_attributes(rng, relation, n);

    // Place instances with bounded pairwise overlap.
    SceneSpec scene;
    scene.relation = relation;
    std::vector<BinaryMask> full;
    bool placed_all = true;
    for (int i = 0; i < n && placed_all; ++i) {
      bool placed = false;
      for (int tries = 0; tries < 60 && !placed; ++tries) {
        Instance inst{attrs[i].shape, attrs[i].color, 0, 0, rng.uniform(5.0, 12.0) * scale};
        inst.center_y = rng.uniform(inst.size, h - inst.size);
        inst.center_x = rng.uniform(inst.size, w - inst.size);
        BinaryMask m = full_mask(inst, h, w);
        const auto area = m.count();
        if (area == 0) continue;
        bool ok = true;
        for (const auto& other : full) {
          if (overlap(m, other) * 5 >= std::min(area, other.count())) {
            ok = false;
            break;
          }
        }
        if (!ok) continue;
        scene.instances.push_back(inst);
        full.push_back(std::move(m));
        placed = true;
      }
      placed_all = placed;
    }
    if (!placed_all) continue;
    scene.referent_index = 0;
    if (!referent_is_unique(scene, scale)) continue;

    // Shuffle drawing order so the referent is not always painted first.
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order.begin(), order.end());
    SceneSpec shuffled;
    shuffled.relation = relation;
    std::vector<BinaryMask> shuffled_full;
    for (int i = 0; i < n; ++i) {
      shuffled.instances.push_back(scene.instances[order[i]]);
      shuffled_full.push_back(full[order[i]]);
      if (order[i] == 0) shuffled.referent_index = i;
    }

    // Paint in order; later instances occlude earlier ones.
    RgbImage image(h, w);
    std::vector<int> owner(static_cast<std::size_t>(h) * w, -1);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < 3; ++c) image.at(y, x, c) = kBackground[c];
    for (int i = 0; i < n; ++i) {
      const auto& color = kPalette[static_cast<std::size_t>(shuffled.instances[i].color)];
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          if (shuffled_full[i].at(y, x)) {
            owner[static_cast<std::size_t>(y) * w + x] = i;
            for (int c = 0; c < 3; ++c) image.at(y, x, c) = color[c];
          }
    }
    std::vector<BinaryMask> visible(static_cast<std::size_t>(n), BinaryMask(h, w));
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (int o = owner[static_cast<std::size_t>(y) * w + x]; o >= 0) visible[o].set(y, x, true);
    bool visible_ok = true;
    for (int i = 0; i < n; ++i)
      if (visible[i].count() * 2 < shuffled_full[i].count()) visible_ok = false;
    if (!visible_ok) continue;

    SampleRecord rec;
    rec.image = std::move(image);
    rec.expression = describe(shuffled);
    rec.tokens = vocab.tokenize(rec.expression);
    if (rec.tokens.empty() || static_cast<int>(rec.tokens.size()) > config.max_text_len) continue;
    rec.gt_mask = visible[shuffled.referent_index];
    rec.candidate_masks = std::move(visible);
    rec.gt_instance_index = shuffled.referent_index;
    return {std::move(shuffled), std::move(rec)};
  }
  throw std::runtime_error("generate_scene: no valid scene after bounded retries");
}

// ---------------------------------------------------------------------------
// Candidate perturbation

namespace {

BinaryMask morph(const BinaryMask& mask, bool grow) {
  BinaryMask out(mask.height, mask.width);
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x) {
      bool any = false, all = true;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int yy = y + dy, xx = x + dx;
          const bool v = yy >= 0 && yy < mask.height && xx >= 0 && xx < mask.width && mask.at(yy, xx);
          any = any || v;
          all = all && v;
        }
      out.set(y, x, grow ? any : all);
    }
  return out;
}

bool on_boundary(const BinaryMask& m, int y, int x) {
  const std::uint8_t v = m.at(y, x);
  constexpr int dy[4] = {-1, 1, 0, 0}, dx[4] = {0, 0, -1, 1};
  for (int k = 0; k < 4; ++k) {
    const int yy = y + dy[k], xx = x + dx[k];
    if (yy < 0 || yy >= m.height || xx < 0 || xx >= m.width) continue;
    if (m.at(yy, xx) != v) return true;
  }
  return false;
}

}  // namespace

BinaryMask dilate(const BinaryMask& mask, int radius) {
  BinaryMask out = mask;
  for (int i = 0; i < radius; ++i) out = morph(out, true);
  return out;
}

BinaryMask erode(const BinaryMask& mask, int radius) {
  BinaryMask out = mask;
  for (int i = 0; i < radius; ++i) out = morph(out, false);
  return out;
}

NoiseParams noise_params(NoiseLevel level) {
  switch (level) {
    case NoiseLevel::clean: return {0, 1.0, 0.0, 0.0, 0.0};
    case NoiseLevel::light: return {1, 0.5, 0.1, 0.05, 0.1};
    case NoiseLevel::heavy: return {2, 0.2, 0.3, 0.15, 0.3};
  }
  return {0, 1.0, 0.0, 0.0, 0.0};
}

CandidateSet perturb_candidates(const SceneSpec& scene, const std::vector<BinaryMask>& instance_masks,
                                NoiseLevel level, Rng& rng, int max_candidates) {
  if (instance_masks.size() != scene.instances.size())
    throw std::invalid_argument("perturb_candidates: one mask per instance required");
  if (instance_masks.empty()) throw std::invalid_argument("perturb_candidates: empty scene");
  const NoiseParams p = noise_params(level);
  const int h = instance_masks[0].height, w = instance_masks[0].width;
  const double scale = std::min(h, w) / 64.0;

  std::vector<BinaryMask> masks;
  std::vector<int> source;
  for (std::size_t i = 0; i < instance_masks.size(); ++i) {
    if (p.drop_prob > 0 && rng.bernoulli(p.drop_prob)) continue;
    BinaryMask m = instance_masks[i];
    if (p.max_radius > 0 && !rng.bernoulli(p.identity_prob)) {
      const int radius = rng.uniform_int(-p.max_radius, p.max_radius);
      BinaryMask moved = radius >= 0 ? dilate(m, radius) : erode(m, -radius);
      if (moved.any()) m = std::move(moved);
    }
    if (p.jitter_prob > 0) {
      BinaryMask jittered = m;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          if (on_boundary(m, y, x) && rng.bernoulli(p.jitter_prob)) jittered.set(y, x, !m.at(y, x));
      if (jittered.any()) m = std::move(jittered);
    }
    masks.push_back(std::move(m));
    source.push_back(static_cast<int>(i));
  }
  if (masks.empty()) {
    // Never emit an empty candidate set: restore one instance unperturbed.
    const int keep = rng.uniform_int(0, static_cast<int>(instance_masks.size()) - 1);
    masks.push_back(instance_masks[static_cast<std::size_t>(keep)]);
    source.push_back(keep);
  }
  if (p.spurious_prob > 0 && rng.bernoulli(p.spurious_prob) && static_cast<int>(masks.size()) < max_candidates) {
    Instance blob{ShapeKind::circle, 0, 0, 0, rng.uniform(3.0, 7.0) * scale};
    blob.center_y = rng.uniform(blob.size, h - blob.size);
    blob.center_x = rng.uniform(blob.size, w - blob.size);
    BinaryMask m = full_mask(blob, h, w);
    if (m.any()) {
      masks.push_back(std::move(m));
      source.push_back(-1);
    }
  }
  while (static_cast<int>(masks.size()) > max_candidates) {
    masks.pop_back();
    source.pop_back();
  }

  std::vector<int> order(masks.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order.begin(), order.end());
  CandidateSet out;
  for (int idx : order) {
    out.masks.push_back(std::move(masks[static_cast<std::size_t>(idx)]));
    out.source_instance.push_back(source[static_cast<std::size_t>(idx)]);
    if (source[static_cast<std::size_t>(idx)] == scene.referent_index)
      out.referent_index = static_cast<int>(out.masks.size()) - 1;
  }
  return out;
}

SampleRecord generate_sample(Rng& rng, const ExperimentConfig& config, const Vocabulary& vocab, NoiseLevel level,
                             std::string sample_id) {
  auto [scene, rec] = generate_scene(rng, config, vocab);
  CandidateSet cands = perturb_candidates(scene, rec.candidate_masks, level, rng, config.max_candidates);
  rec.candidate_masks = std::move(cands.masks);
  rec.gt_instance_index = cands.referent_index;
  rec.sample_id = std::move(sample_id);
  return rec;
}

std::vector<SampleRecord> generate_split(const ExperimentConfig& config, const Vocabulary& vocab,
                                         std::string_view split, int count, NoiseLevel level) {
  const Rng base = Rng(config.seed).split("data").split(split);
  std::vector<SampleRecord> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    Rng rng = base.split(static_cast<std::uint64_t>(i));
    char id[64];
    std::snprintf(id, sizeof id, "%.*s_%06d", static_cast<int>(split.size()), split.data(), i);
    out.push_back(generate_sample(rng, config, vocab, level, id));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset I/O

namespace {

void check_sample(const SampleRecord& s) {
  auto fail = [&](const std::string& what) { throw std::invalid_argument("sample " + s.sample_id + ": " + what); };
  if (s.sample_id.empty()) throw std::invalid_argument("sample with empty id");
  if (s.candidate_masks.empty()) fail("no candidate masks");
  if (s.tokens.empty()) fail("empty expression");
  if (!s.gt_mask.any()) fail("empty ground-truth mask");
  for (const auto& m : s.candidate_masks) {
    if (!m.any()) fail("empty candidate mask");
    if (m.height != s.image.height || m.width != s.image.width) fail("candidate mask shape mismatch");
  }
  if (s.gt_mask.height != s.image.height || s.gt_mask.width != s.image.width) fail("gt mask shape mismatch");
  if (s.gt_instance_index && (*s.gt_instance_index < 0 ||
                              *s.gt_instance_index >= static_cast<int>(s.candidate_masks.size())))
    fail("gt_instance_index out of range");
}

}  // namespace

std::filesystem::path write_dataset(const std::vector<SampleRecord>& samples, const Vocabulary& vocab,
                                    const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  for (const auto& s : samples) check_sample(s);
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "masks");
  fs::create_directories(dir / "gt");

  std::vector<std::string> lines;
  lines.reserve(samples.size());
  for (const auto& s : samples) {
    const std::string image_rel = "images/" + s.sample_id + ".png";
    const std::string gt_rel = "gt/" + s.sample_id + ".png";
    write_png(dir / image_rel, s.image);
    write_png(dir / gt_rel, s.gt_mask);
    fs::create_directories(dir / "masks" / s.sample_id);
    nlohmann::json masks = nlohmann::json::array();
    for (std::size_t k = 0; k < s.candidate_masks.size(); ++k) {
      const std::string rel = "masks/" + s.sample_id + "/" + std::to_string(k) + ".png";
      write_png(dir / rel, s.candidate_masks[k]);
      masks.push_back(rel);
    }
    nlohmann::json j;
    j["sample_id"] = s.sample_id;
    j["image"] = image_rel;
    j["gt"] = gt_rel;
    j["masks"] = std::move(masks);
    j["expression"] = s.expression;
    j["tokens"] = s.tokens;
    j["gt_instance_index"] = s.gt_instance_index ? nlohmann::json(*s.gt_instance_index) : nlohmann::json(nullptr);
    j["mask_pixels"] = s.gt_mask.count();
    lines.push_back(j.dump());
  }

  {
    nlohmann::json v;
    v["pad"] = Vocabulary::kPad;
    v["unk"] = Vocabulary::kUnk;
    v["words"] = vocab.words();
    std::ofstream out(dir / "vocab.json");
    out << v.dump(2) << '\n';
  }
  const fs::path manifest = dir / "manifest.jsonl";
  std::ofstream out(manifest);
  if (!out) throw std::runtime_error("cannot write " + manifest.string());
  for (const auto& line : lines) out << line << '\n';
  return manifest;
}

Dataset read_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  {
    std::ifstream in(dir / "vocab.json");
    if (!in) throw std::runtime_error("missing vocab.json in " + dir.string());
    const auto v = nlohmann::json::parse(in);
    ds.vocab = Vocabulary(v.at("words").get<std::vector<std::string>>());
  }
  std::ifstream in(dir / "manifest.jsonl");
  if (!in) throw std::runtime_error("missing manifest.jsonl in " + dir.string());
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw std::runtime_error("manifest line " + std::to_string(line_no) + ": invalid JSON");
    SampleRecord s;
    s.sample_id = j.value("sample_id", std::string{});
    try {
      s.image = read_png_rgb(dir / j.at("image").get<std::string>());
      s.gt_mask = read_png_mask(dir / j.at("gt").get<std::string>());
      for (const auto& rel : j.at("masks")) s.candidate_masks.push_back(read_png_mask(dir / rel.get<std::string>()));
      s.expression = j.at("expression").get<std::string>();
      s.tokens = j.at("tokens").get<std::vector<int>>();
      if (!j.at("gt_instance_index").is_null()) s.gt_instance_index = j.at("gt_instance_index").get<int>();
      if (j.contains("mask_pixels") && j["mask_pixels"].get<std::int64_t>() != s.gt_mask.count())
        throw std::runtime_error("gt mask pixel count does not match manifest");
    } catch (const std::exception& e) {
      throw std::runtime_error("sample " + s.sample_id + ": " + e.what());
    }
    check_sample(s);
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace mail
