#include "mail/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include "mail/trainer.hpp"

namespace mail {

namespace {

std::string num(double v, const char* f = "%.6f") {
  char buf[48];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

constexpr std::uint8_t kCandidateTints[8][3] = {{230, 25, 75},  {60, 180, 75},  {255, 225, 25}, {0, 130, 200},
                                                 {245, 130, 48}, {145, 30, 180}, {70, 240, 240}, {240, 50, 230}};

void blend(RgbImage& img, int y, int x, const std::uint8_t* color, double a) {
  for (int c = 0; c < 3; ++c)
    img.at(y, x, c) = static_cast<std::uint8_t>(std::lround((1.0 - a) * img.at(y, x, c) + a * color[c]));
}

bool on_boundary(const BinaryMask& m, int y, int x) {
  if (!m.at(y, x)) return false;
  for (auto [dy, dx] : {std::pair{-1, 0}, {1, 0}, {0, -1}, {0, 1}}) {
    const int yy = y + dy, xx = x + dx;
    if (yy < 0 || yy >= m.height || xx < 0 || xx >= m.width || !m.at(yy, xx)) return true;
  }
  return false;
}

void paste(RgbImage& dst, const RgbImage& src, int x0) {
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x)
      for (int c = 0; c < 3; ++c) dst.at(y, x0 + x, c) = src.at(y, x, c);
}

}  // namespace

std::string dataset_hash(const std::filesystem::path& directory) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(directory))
    if (e.is_regular_file()) files.push_back(std::filesystem::relative(e.path(), directory));
  std::sort(files.begin(), files.end());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const char* data, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      h ^= static_cast<unsigned char>(data[i]);
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& rel : files) {
    const std::string name = rel.generic_string();
    feed(name.data(), name.size() + 1);
    std::ifstream in(directory / rel, std::ios::binary);
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    feed(bytes.data(), bytes.size());
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void write_score_dump(const std::filesystem::path& path, std::span<const SampleRecord> samples,
                      std::span<const SamplePrediction> predictions, std::span<const double> ious) {
  if (samples.size() != predictions.size() || samples.size() != ious.size())
    throw std::invalid_argument("write_score_dump: length mismatch");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "sample_id,scores,rho,alpha,iou\n";
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& p = predictions[i];
    std::string scores;
    for (std::size_t k = 0; k < p.scores.size(); ++k) scores += (k ? ";" : "") + num(p.scores[k], "%.9g");
    out << samples[i].sample_id << ',' << scores << ',' << (p.rho ? std::to_string(*p.rho) : "") << ','
        << (p.alpha ? std::to_string(*p.alpha) : "") << ',' << num(ious[i]) << '\n';
  }
}

AblationManifest default_manifest() {
  AblationManifest m;
  m.seeds = {0, 1, 2};
  m.variants = {
      {"v1_image_language", {"encoder_modalities=image+language", "decoder_modalities=image"}, ""},
      {"v2_mask_language",
       {"encoder_modalities=mask+language", "decoder_modalities=mask", "score_source=mask_feature"},
       ""},
      {"v3_trimodal_image_decoder", {"decoder_modalities=image"}, ""},
      {"v4_trimodal_mask_decoder", {"decoder_modalities=mask"}, ""},
      {"v5_trimodal_image_mask_decoder", {}, ""},
      {"v6_no_multimodal_pretraining", {}, "needs pre-trained multimodal weights, which do not exist at this scale"},
      {"strategy_adaptive", {"selection_strategy=adaptive"}, ""},
      {"strategy_mean", {"selection_strategy=mean"}, ""},
      {"strategy_maximum", {"selection_strategy=maximum"}, ""},
      {"strategy_weighted_sum", {"selection_strategy=weighted_sum"}, ""},
      {"score_source_mask_feature", {"score_source=mask_feature"}, ""},
  };
  return m;
}

AblationManifest manifest_from_json(const nlohmann::json& j) {
  AblationManifest m;
  for (const auto& s : j.at("seeds")) m.seeds.push_back(s.get<std::uint64_t>());
  for (const auto& v : j.at("variants")) {
    AblationVariant var;
    var.name = v.at("name").get<std::string>();
    if (v.contains("overrides"))
      for (const auto& o : v.at("overrides")) var.overrides.push_back(o.get<std::string>());
    var.skip_reason = v.value("skip_reason", std::string());
    m.variants.push_back(std::move(var));
  }
  if (m.seeds.empty()) throw std::invalid_argument("ablation manifest lists no seeds");
  return m;
}

nlohmann::json to_json(const AblationManifest& manifest) {
  nlohmann::json j;
  j["seeds"] = manifest.seeds;
  j["variants"] = nlohmann::json::array();
  for (const auto& v : manifest.variants) {
    nlohmann::json e{{"name", v.name}, {"overrides", v.overrides}};
    if (!v.skip_reason.empty()) e["skip_reason"] = v.skip_reason;
    j["variants"].push_back(e);
  }
  return j;
}

std::vector<AblationRun> run_ablation(const AblationManifest& manifest, const ExperimentConfig& base,
                                      std::span<const SampleRecord> train_set, std::span<const SampleRecord> val_set,
                                      const AblationOptions& options) {
  std::vector<AblationRun> runs;
  std::map<std::string, AblationRun> done;  // resolved config dump -> run
  const int vocab_size = canonical_vocabulary().size();
  for (const auto& variant : manifest.variants) {
    for (std::uint64_t seed : manifest.seeds) {
      AblationRun run;
      run.variant = variant.name;
      run.seed = seed;
      if (!variant.skip_reason.empty()) {
        run.status = "skipped";
        run.message = variant.skip_reason;
        runs.push_back(run);
        continue;
      }
      try {
        ExperimentConfig config = base;
        for (const auto& o : variant.overrides) apply_override(config, o);
        config.seed = seed;
        config = validate(config);
        const std::string key = to_json(config).dump();
        if (auto it = done.find(key); it != done.end()) {
          AblationRun reused = it->second;
          reused.variant = variant.name;
          reused.message = reused.message.empty() ? "same config as " + it->second.variant : reused.message;
          runs.push_back(reused);
          continue;
        }
        if (options.progress) options.progress("training " + variant.name + " seed " + std::to_string(seed));
        MailModel<float> model(config, vocab_size);
        model.init(config.seed);
        TrainOptions topt;
        topt.out_dir = options.out_dir / variant.name / ("seed_" + std::to_string(seed));
        topt.progress = options.progress;
        std::filesystem::create_directories(topt.out_dir);
        save_config(config, topt.out_dir / "config.json");
        train(model, train_set, topt);
        run.summary = evaluate(model, val_set, config.batch_size).summary;
        run.status = "ok";
        done.emplace(key, run);
      } catch (const ConfigError& e) {
        run.status = "failed";
        for (const auto& v : e.violations()) run.message += (run.message.empty() ? "" : "; ") + v;
      } catch (const std::exception& e) {
        run.status = "failed";
        run.message = e.what();
      }
      runs.push_back(run);
    }
  }
  return runs;
}

void write_ablation_csv(const std::filesystem::path& path, std::span<const AblationRun> runs,
                        const std::string& data_hash) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "# dataset_hash=" << data_hash << '\n';
  out << "variant,seed,status,mean_iou,pr50,pr60,pr70,pr80,pr90,n_samples,message\n";
  for (const auto& r : runs) {
    out << r.variant << ',' << r.seed << ',' << r.status;
    if (r.status == "ok") {
      out << ',' << num(r.summary.mean_iou);
      for (double p : r.summary.precision_at) out << ',' << num(p);
      out << ',' << r.summary.n_samples;
    } else {
      out << ",,,,,,,";
    }
    out << ',' << csv_field(r.message) << '\n';
  }
}

std::string format_ablation_table(std::span<const AblationRun> runs) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<const AblationRun*>> by_variant;
  for (const auto& r : runs) {
    if (!by_variant.count(r.variant)) order.push_back(r.variant);
    by_variant[r.variant].push_back(&r);
  }
  std::size_t width = 7;
  for (const auto& v : order) width = std::max(width, v.size());

  auto pad = [](std::string s, std::size_t w) {
    s.resize(std::max(s.size(), w), ' ');
    return s;
  };
  std::ostringstream out;
  out << pad("variant", width) << "  seeds  " << pad("mIoU", 15);
  for (const char* h : {"Pr@0.5", "Pr@0.6", "Pr@0.7", "Pr@0.8", "Pr@0.9"}) out << "  " << pad(h, 15);
  out << '\n';
  for (const auto& v : order) {
    const auto& rs = by_variant[v];
    std::vector<const AblationRun*> ok;
    for (const auto* r : rs)
      if (r->status == "ok") ok.push_back(r);
    out << pad(v, width) << "  " << pad(std::to_string(ok.size()) + "/" + std::to_string(rs.size()), 5) << "  ";
    if (ok.empty()) {
      const std::string status = rs.front()->status == "skipped" ? "SKIPPED" : "FAILED";
      out << status << ": " << rs.front()->message << '\n';
      continue;
    }
    auto stats = [&](auto get) {
      double mean = 0.0, sq = 0.0;
      for (const auto* r : ok) mean += get(*r);
      mean /= static_cast<double>(ok.size());
      for (const auto* r : ok) sq += (get(*r) - mean) * (get(*r) - mean);
      const double sd = ok.size() > 1 ? std::sqrt(sq / static_cast<double>(ok.size() - 1)) : 0.0;
      return pad(num(100.0 * mean, "%.2f") + " +- " + num(100.0 * sd, "%.2f"), 15);
    };
    out << stats([](const AblationRun& r) { return r.summary.mean_iou; });
    for (std::size_t i = 0; i < kPrecisionThresholds.size(); ++i)
      out << "  " << stats([i](const AblationRun& r) { return r.summary.precision_at[i]; });
    out << '\n';
  }
  return out.str();
}

RgbImage render_overlay(const SampleRecord& sample, const SamplePrediction& prediction) {
  const int h = sample.image.height, w = sample.image.width;
  RgbImage out(h, 4 * w);
  paste(out, sample.image, 0);

  RgbImage cands = sample.image;
  for (std::size_t k = 0; k < sample.candidate_masks.size(); ++k)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (sample.candidate_masks[k].at(y, x)) blend(cands, y, x, kCandidateTints[k % 8], 0.45);
  if (prediction.rho) {
    static constexpr std::uint8_t kWhite[3] = {255, 255, 255};
    const BinaryMask& sel = sample.candidate_masks.at(static_cast<std::size_t>(*prediction.rho));
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (on_boundary(sel, y, x)) blend(cands, y, x, kWhite, 1.0);
  }
  paste(out, cands, w);

  static constexpr std::uint8_t kRed[3] = {255, 40, 40};
  static constexpr std::uint8_t kGreen[3] = {40, 255, 40};
  RgbImage pred = sample.image, gt = sample.image;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (prediction.mask.at(y, x)) blend(pred, y, x, kRed, 0.6);
      if (sample.gt_mask.at(y, x)) blend(gt, y, x, kGreen, 0.6);
    }
  paste(out, pred, 2 * w);
  paste(out, gt, 3 * w);
  return out;
}

GrayImage attention_to_gray(const Mat<float>& map, int height, int width) {
  GrayImage g(height, width);
  const float peak = map.maxCoeff();
  const auto rows = map.rows(), cols = map.cols();
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const float v = map(y * rows / height, x * cols / width);
      g.data[static_cast<std::size_t>(y) * width + x] =
          peak > 0.0f ? static_cast<std::uint8_t>(std::lround(255.0f * v / peak)) : 0;
    }
  return g;
}

RgbImage attention_composite(const RgbImage& image, std::span<const Mat<float>> maps) {
  const int h = image.height, w = image.width;
  RgbImage out(h, w * static_cast<int>(maps.size()));
  for (std::size_t b = 0; b < maps.size(); ++b) {
    const GrayImage g = attention_to_gray(maps[b], h, w);
    RgbImage panel = image;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double a = g.data[static_cast<std::size_t>(y) * w + x] / 255.0;
        const std::uint8_t heat[3] = {255, static_cast<std::uint8_t>(std::lround(200 * a)), 0};
        blend(panel, y, x, heat, 0.75 * a);
      }
    paste(out, panel, static_cast<int>(b) * w);
  }
  return out;
}

}  // namespace mail
