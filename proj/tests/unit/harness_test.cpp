#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "fixtures.hpp"
#include "mail/harness.hpp"
#include "mail/trainer.hpp"

using namespace mail;
using mail::testing::train_config;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class HarnessTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("mail_harness_" + std::to_string(::getpid()) + "_" +
                                        ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    base_ = train_config();
    base_.epochs = 1;
    train_ = generate_split(base_, canonical_vocabulary(), "train", 8, NoiseLevel::light);
    val_ = generate_split(base_, canonical_vocabulary(), "val", 4, NoiseLevel::light);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::vector<AblationRun> ablate(const AblationManifest& m, const std::string& name) {
    AblationOptions o;
    o.out_dir = dir_ / name;
    return run_ablation(m, base_, train_, val_, o);
  }

  fs::path dir_;
  ExperimentConfig base_;
  std::vector<SampleRecord> train_, val_;
};

int rows_in(const std::string& table) {
  int n = 0;
  for (char c : table) n += c == '\n';
  return n;
}

}  // namespace

TEST(Manifest, DefaultCoversEveryVariant) {
  const AblationManifest m = default_manifest();
  EXPECT_GE(m.seeds.size(), 3u);
  std::set<std::string> names;
  for (const auto& v : m.variants) names.insert(v.name);
  for (const char* n : {"v1_image_language", "v2_mask_language", "v3_trimodal_image_decoder", "v4_trimodal_mask_decoder",
                        "v5_trimodal_image_mask_decoder", "v6_no_multimodal_pretraining", "strategy_adaptive",
                        "strategy_mean", "strategy_maximum", "strategy_weighted_sum", "score_source_mask_feature"})
    EXPECT_TRUE(names.count(n)) << n;
  for (const auto& v : m.variants) {
    EXPECT_EQ(v.name == "v6_no_multimodal_pretraining", !v.skip_reason.empty()) << v.name;
    ExperimentConfig c;
    for (const auto& o : v.overrides) apply_override(c, o);
    EXPECT_NO_THROW(validate(c)) << v.name;
  }
  const AblationManifest back = manifest_from_json(to_json(m));
  ASSERT_EQ(back.variants.size(), m.variants.size());
  EXPECT_EQ(back.seeds, m.seeds);
  for (std::size_t i = 0; i < m.variants.size(); ++i) {
    EXPECT_EQ(back.variants[i].name, m.variants[i].name);
    EXPECT_EQ(back.variants[i].overrides, m.variants[i].overrides);
    EXPECT_EQ(back.variants[i].skip_reason, m.variants[i].skip_reason);
  }
}

TEST_F(HarnessTest, CountsRunsAndRows) {
  AblationManifest m;
  m.seeds = {0, 1, 2};
  m.variants = {{"v1", {"encoder_modalities=image+language", "decoder_modalities=image"}, ""}, {"v5", {}, ""}};
  const auto runs = ablate(m, "count");
  ASSERT_EQ(runs.size(), 6u);
  for (const auto& r : runs) EXPECT_EQ(r.status, "ok") << r.message;
  for (const auto& r : runs) {
    EXPECT_TRUE(fs::exists(dir_ / "count" / r.variant / ("seed_" + std::to_string(r.seed)) / "config.json"));
    for (std::size_t k = 1; k < r.summary.precision_at.size(); ++k)
      EXPECT_LE(r.summary.precision_at[k], r.summary.precision_at[k - 1]);
  }
  const std::string table = format_ablation_table(runs);
  EXPECT_EQ(rows_in(table), 3) << table;  // header + two variants
  EXPECT_NE(table.find("v1"), std::string::npos);
}

TEST_F(HarnessTest, InvalidVariantFailsOthersContinue) {
  AblationManifest m;
  m.seeds = {0};
  m.variants = {{"v2_bad", {"encoder_modalities=mask+language", "decoder_modalities=image"}, ""},
                {"v5", {}, ""},
                {"v6", {}, "no pre-trained weights"}};
  const auto runs = ablate(m, "fail");
  ASSERT_EQ(runs.size(), 3u);
  EXPECT_EQ(runs[0].status, "failed");
  EXPECT_FALSE(runs[0].message.empty());
  EXPECT_EQ(runs[1].status, "ok");
  EXPECT_EQ(runs[2].status, "skipped");
  const std::string table = format_ablation_table(runs);
  EXPECT_NE(table.find("FAILED"), std::string::npos);
  EXPECT_NE(table.find("SKIPPED"), std::string::npos);
}

TEST_F(HarnessTest, CsvIsDeterministicAndCarriesHash) {
  AblationManifest m;
  m.seeds = {0};
  m.variants = {{"mean", {"selection_strategy=mean"}, ""}, {"also_adaptive", {"selection_strategy=adaptive"}, ""},
                {"adaptive", {}, ""}};
  const auto a = ablate(m, "a");
  const auto b = ablate(m, "b");
  // Identical resolved configs are trained once.
  EXPECT_EQ(a[1].summary.mean_iou, a[2].summary.mean_iou);
  write_ablation_csv(dir_ / "a.csv", a, "abc123");
  write_ablation_csv(dir_ / "b.csv", b, "abc123");
  EXPECT_EQ(slurp(dir_ / "a.csv"), slurp(dir_ / "b.csv"));
  EXPECT_EQ(slurp(dir_ / "a.csv").rfind("# dataset_hash=abc123\n", 0), 0u);
}

TEST_F(HarnessTest, DatasetHashTracksContent) {
  write_dataset(train_, canonical_vocabulary(), dir_ / "d1");
  write_dataset(train_, canonical_vocabulary(), dir_ / "d2");
  EXPECT_EQ(dataset_hash(dir_ / "d1"), dataset_hash(dir_ / "d2"));
  std::ofstream(dir_ / "d2" / "vocab.json", std::ios::app) << " ";
  EXPECT_NE(dataset_hash(dir_ / "d1"), dataset_hash(dir_ / "d2"));
}

TEST_F(HarnessTest, OverlayLayout) {
  SampleRecord s = train_[0];
  std::fill(s.image.data.begin(), s.image.data.end(), 0);
  SamplePrediction p;
  p.mask = s.candidate_masks.back();
  p.rho = 0;
  const RgbImage o = render_overlay(s, p);
  EXPECT_EQ(o.width, 4 * s.image.width);
  EXPECT_EQ(o.height, s.image.height);
  const int w = s.image.width;
  for (int y = 0; y < s.image.height; ++y)
    for (int x = 0; x < w; ++x) {
      auto changed = [&](int panel) {
        return o.at(y, panel * w + x, 0) || o.at(y, panel * w + x, 1) || o.at(y, panel * w + x, 2);
      };
      EXPECT_FALSE(changed(0));
      EXPECT_EQ(changed(2), static_cast<bool>(p.mask.at(y, x)));
      EXPECT_EQ(changed(3), static_cast<bool>(s.gt_mask.at(y, x)));
    }
}

TEST_F(HarnessTest, ScoreDumpAgreesWithPredictions) {
  MailModel<float> m(base_, canonical_vocabulary().size());
  m.init(0);
  const Evaluation e = evaluate(m, val_, 4);
  write_score_dump(dir_ / "scores.csv", val_, e.predictions, e.ious);
  std::ifstream in(dir_ / "scores.csv");
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "sample_id,scores,rho,alpha,iou");
  for (std::size_t i = 0; i < val_.size(); ++i) {
    ASSERT_TRUE(std::getline(in, line));
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string x; std::getline(ss, x, ',');) f.push_back(x);
    ASSERT_EQ(f.size(), 5u);
    EXPECT_EQ(f[0], val_[i].sample_id);
    std::vector<double> scores;
    std::stringstream sc(f[1]);
    for (std::string x; std::getline(sc, x, ';');) scores.push_back(std::stod(x));
    ASSERT_EQ(scores.size(), val_[i].candidate_masks.size());
    const int argmax = static_cast<int>(std::max_element(scores.begin(), scores.end()) - scores.begin());
    EXPECT_EQ(std::stoi(f[2]), argmax);
    EXPECT_EQ(std::stoi(f[2]), *e.predictions[i].rho);
    // The overlay outlines that same candidate.
    SampleRecord black = val_[i];
    std::fill(black.image.data.begin(), black.image.data.end(), 0);
    for (auto& c : black.candidate_masks) c = BinaryMask(c.height, c.width);
    black.candidate_masks[static_cast<std::size_t>(argmax)] = val_[i].candidate_masks[static_cast<std::size_t>(argmax)];
    const RgbImage o = render_overlay(black, e.predictions[i]);
    bool white = false;
    for (int y = 0; y < black.image.height; ++y)
      for (int x = 0; x < black.image.width; ++x) {
        const int xx = black.image.width + x;
        white |= o.at(y, xx, 0) == 255 && o.at(y, xx, 1) == 255 && o.at(y, xx, 2) == 255;
      }
    EXPECT_TRUE(white);
  }
}

TEST(Attention, GrayScaling) {
  Mat<float> m(2, 2);
  m << 0.0f, 0.5f, 0.25f, 1.0f;
  const GrayImage g = attention_to_gray(m, 4, 4);
  EXPECT_EQ(g.data[0], 0);
  EXPECT_EQ(g.data[3], 128);
  EXPECT_EQ(g.data[15], 255);
  const GrayImage z = attention_to_gray(Mat<float>::Zero(2, 2), 4, 4);
  EXPECT_EQ(*std::max_element(z.data.begin(), z.data.end()), 0);
  RgbImage img(4, 4);
  std::vector<Mat<float>> maps{m, m, m};
  EXPECT_EQ(attention_composite(img, maps).width, 12);
}
