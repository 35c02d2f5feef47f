// Command line front end: datagen, train, eval, ablate, dump-attention, overlay.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mail/config.hpp"
#include "mail/data.hpp"
#include "mail/encoder.hpp"
#include "mail/harness.hpp"
#include "mail/metrics.hpp"
#include "mail/trainer.hpp"

namespace fs = std::filesystem;
using namespace mail;

namespace {

// Raised for violated invariants that are not configuration errors.
struct InvariantViolation : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> sets;
};

void add_common(CLI::App* app, Common& c, bool out_required = true) {
  app->add_option("--config", c.config_path, "experiment config JSON")->check(CLI::ExistingFile);
  app->add_option("--seed", c.seed, "overrides the config seed");
  auto* out = app->add_option("--out", c.out, "output directory or file");
  if (out_required) out->required();
  app->add_option("--set", c.sets, "config override key=value (repeatable)");
}

ExperimentConfig resolve_config(const Common& c) {
  ExperimentConfig config = c.config_path.empty() ? ExperimentConfig{} : load_config(c.config_path);
  for (const auto& s : c.sets) apply_override(config, s);
  if (c.seed) config.seed = *c.seed;
  return validate(config);
}

void log_line(const std::string& s) { std::fprintf(stderr, "%s\n", s.c_str()); }

const SampleRecord& find_sample(const Dataset& data, const std::string& id) {
  for (const auto& s : data.samples)
    if (s.sample_id == id) return s;
  throw std::invalid_argument("unknown sample_id '" + id + "'");
}

void check_monotone(const EvalSummary& e) {
  for (std::size_t i = 1; i < e.precision_at.size(); ++i)
    if (e.precision_at[i] > e.precision_at[i - 1])
      throw InvariantViolation("Pr@X is not monotone non-increasing");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mask-aware referring segmentation toolkit"};
  app.require_subcommand(1);

  Common gen_c;
  std::string split = "train", noise = "light";
  int count = 100;
  auto* gen = app.add_subcommand("datagen", "generate a synthetic referring-segmentation split");
  add_common(gen, gen_c);
  gen->add_option("--split", split, "split name")->check(CLI::IsMember({"train", "val"}));
  gen->add_option("--count", count, "number of samples")->check(CLI::PositiveNumber);
  gen->add_option("--noise", noise, "candidate noise level")->check(CLI::IsMember({"clean", "light", "heavy"}));

  Common train_c;
  std::string train_data, val_data, resume;
  auto* tr = app.add_subcommand("train", "train a model");
  add_common(tr, train_c);
  tr->add_option("--data", train_data, "training split directory")->required()->check(CLI::ExistingDirectory);
  tr->add_option("--val", val_data, "validation split directory")->check(CLI::ExistingDirectory);
  tr->add_option("--resume", resume, "checkpoint to resume from")->check(CLI::ExistingFile);

  Common eval_c;
  std::string eval_ckpt, eval_data, dump_scores;
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(ev, eval_c, false);
  ev->add_option("--checkpoint", eval_ckpt)->required()->check(CLI::ExistingFile);
  ev->add_option("--data", eval_data)->required()->check(CLI::ExistingDirectory);
  ev->add_option("--dump-scores", dump_scores, "per-sample scores CSV");

  Common abl_c;
  std::string abl_manifest, abl_train, abl_val;
  auto* ab = app.add_subcommand("ablate", "run the ablation matrix");
  add_common(ab, abl_c);
  ab->add_option("--manifest", abl_manifest, "manifest JSON (default: full matrix)")->check(CLI::ExistingFile);
  ab->add_option("--data", abl_train)->required()->check(CLI::ExistingDirectory);
  ab->add_option("--val", abl_val)->required()->check(CLI::ExistingDirectory);

  Common att_c;
  std::string att_ckpt, att_data, att_sample;
  int att_row = -1, att_col = -1;
  auto* at = app.add_subcommand("dump-attention", "write per-block attention maps for one sample");
  add_common(at, att_c);
  at->add_option("--checkpoint", att_ckpt)->required()->check(CLI::ExistingFile);
  at->add_option("--data", att_data)->required()->check(CLI::ExistingDirectory);
  at->add_option("--sample", att_sample)->required();
  at->add_option("--row", att_row, "query patch row (default: grid centre)");
  at->add_option("--col", att_col, "query patch column (default: grid centre)");

  Common ov_c;
  std::string ov_ckpt, ov_data;
  std::vector<std::string> ov_samples;
  auto* ov = app.add_subcommand("overlay", "render four-panel overlays");
  add_common(ov, ov_c);
  ov->add_option("--checkpoint", ov_ckpt)->required()->check(CLI::ExistingFile);
  ov->add_option("--data", ov_data)->required()->check(CLI::ExistingDirectory);
  ov->add_option("--sample", ov_samples)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      const ExperimentConfig config = resolve_config(gen_c);
      const Vocabulary vocab = canonical_vocabulary();
      const NoiseLevel level = noise == "clean" ? NoiseLevel::clean : noise == "heavy" ? NoiseLevel::heavy : NoiseLevel::light;
      const auto samples = generate_split(config, vocab, split, count, level);
      write_dataset(samples, vocab, gen_c.out);
      log_line("wrote " + std::to_string(samples.size()) + " samples to " + gen_c.out);
    } else if (tr->parsed()) {
      const ExperimentConfig config = resolve_config(train_c);
      const Dataset train_set = read_dataset(train_data);
      std::optional<Dataset> val_set;
      if (!val_data.empty()) val_set = read_dataset(val_data);
      MailModel<float> model(config, train_set.vocab.size());
      model.init(config.seed);
      TrainOptions opt;
      opt.out_dir = train_c.out;
      if (val_set) opt.validation = val_set->samples;
      if (!resume.empty()) opt.resume_from = fs::path(resume);
      opt.progress = log_line;
      fs::create_directories(opt.out_dir);
      save_config(config, opt.out_dir / "config.json");
      const TrainResult r = train(model, train_set.samples, opt);
      if (r.last_eval) {
        check_monotone(*r.last_eval);
        std::cout << format_table(*r.last_eval);
      }
      log_line("checkpoint: " + r.last_checkpoint.string());
    } else if (ev->parsed()) {
      auto model = load_model(eval_ckpt);
      const Dataset data = read_dataset(eval_data);
      const Evaluation e = evaluate(*model, data.samples, model->config().batch_size);
      check_monotone(e.summary);
      std::cout << format_table(e.summary) << to_json(e.summary).dump() << '\n';
      if (!eval_c.out.empty()) {
        fs::path out = eval_c.out;
        fs::create_directories(out);
        std::ofstream(out / "eval.json") << to_json(e.summary).dump(2) << '\n';
      }
      if (!dump_scores.empty()) write_score_dump(dump_scores, data.samples, e.predictions, e.ious);
    } else if (ab->parsed()) {
      const ExperimentConfig base = resolve_config(abl_c);
      AblationManifest manifest = default_manifest();
      if (!abl_manifest.empty()) {
        std::ifstream in(abl_manifest);
        manifest = manifest_from_json(nlohmann::json::parse(in));
      }
      const Dataset train_set = read_dataset(abl_train);
      const Dataset val_set = read_dataset(abl_val);
      AblationOptions opt;
      opt.out_dir = abl_c.out;
      opt.data_hash = dataset_hash(abl_train) + ":" + dataset_hash(abl_val);
      opt.progress = log_line;
      fs::create_directories(opt.out_dir);
      std::ofstream(opt.out_dir / "manifest.json") << to_json(manifest).dump(2) << '\n';
      const auto runs = run_ablation(manifest, base, train_set.samples, val_set.samples, opt);
      write_ablation_csv(opt.out_dir / "ablation.csv", runs, opt.data_hash);
      const std::string table = format_ablation_table(runs);
      std::ofstream(opt.out_dir / "ablation.txt") << table;
      std::cout << table;
      for (const auto& r : runs)
        if (r.status == "ok") check_monotone(r.summary);
    } else if (at->parsed()) {
      auto model = load_model(att_ckpt);
      const ExperimentConfig& config = model->config();
      const Dataset data = read_dataset(att_data);
      const SampleRecord& sample = find_sample(data, att_sample);
      const DerivedDims dims = derived_dims(config);
      const int row = att_row < 0 ? dims.grid_height / 2 : att_row;
      const int col = att_col < 0 ? dims.grid_width / 2 : att_col;
      Tape<float> tape;
      Context<float> ctx{tape, false, nullptr};
      const auto seq = embed_sample(ctx, sample, model->embedding, config);
      const auto maps = attention_maps(seq, model->encoder, config, row, col);
      fs::path out = att_c.out;
      fs::create_directories(out);
      for (std::size_t b = 0; b < maps.size(); ++b) {
        char name[32];
        std::snprintf(name, sizeof name, "block_%02zu.png", b);
        write_png(out / name, attention_to_gray(maps[b], config.image_height, config.image_width));
      }
      write_png(out / "composite.png", attention_composite(sample.image, maps));
      log_line("wrote " + std::to_string(maps.size()) + " attention maps to " + out.string());
    } else if (ov->parsed()) {
      auto model = load_model(ov_ckpt);
      const Dataset data = read_dataset(ov_data);
      std::vector<SampleRecord> chosen;
      for (const auto& id : ov_samples) chosen.push_back(find_sample(data, id));
      const auto preds = predict(*model, std::span<const SampleRecord>(chosen), model->config().batch_size);
      fs::path out = ov_c.out;
      fs::create_directories(out);
      for (std::size_t i = 0; i < chosen.size(); ++i)
        write_png(out / (chosen[i].sample_id + ".png"), render_overlay(chosen[i], preds[i]));
    }
  } catch (const ConfigError& e) {
    for (const auto& v : e.violations()) std::fprintf(stderr, "config error: %s\n", v.c_str());
    return 2;
  } catch (const InvariantViolation& e) {
    std::fprintf(stderr, "invariant violated: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
