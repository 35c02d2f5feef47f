#include "mail/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace mail {

namespace {

constexpr int kCheckpointVersion = 1;

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string eval_columns(const std::optional<EvalSummary>& e) {
  if (!e) return ",,,,,";
  std::string s = fmt(e->mean_iou);
  for (double p : e->precision_at) s += "," + fmt(p);
  return s;
}

// Keeps the header and every row at or before the resume step.
void truncate_log(const std::filesystem::path& path, std::int64_t step) {
  std::ifstream in(path);
  if (!in) return;
  std::vector<std::string> keep;
  std::string line;
  while (std::getline(in, line)) {
    if (keep.empty()) {
      keep.push_back(line);
      continue;
    }
    std::stringstream ss(line);
    std::string kind, epoch, s;
    std::getline(ss, kind, ',');
    std::getline(ss, epoch, ',');
    std::getline(ss, s, ',');
    if (std::stoll(s) <= step) keep.push_back(line);
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  for (const auto& l : keep) out << l << '\n';
}

}  // namespace

AdamWOptions optimizer_options(const ExperimentConfig& config) {
  AdamWOptions o;
  o.weight_decay = config.weight_decay;
  o.clip_norm = config.grad_clip;
  return o;
}

Checkpoint snapshot(MailModel<float>& model, const AdamW<float>* optimizer, nlohmann::json meta) {
  Checkpoint c;
  c.meta = std::move(meta);
  c.meta["format_version"] = kCheckpointVersion;
  c.meta["config"] = to_json(model.config());
  c.meta["vocab_size"] = model.vocab_size();
  c.meta["optimizer_step"] = optimizer ? optimizer->steps() : 0;
  for (Parameter<float>* p : model.parameters()) c.tensors.push_back({p->name, p->value});
  if (optimizer) {
    for (const auto& [name, m] : optimizer->first_moments()) c.tensors.push_back({"adam.m." + name, m});
    for (const auto& [name, v] : optimizer->second_moments()) c.tensors.push_back({"adam.v." + name, v});
  }
  return c;
}

void restore(MailModel<float>& model, AdamW<float>* optimizer, const Checkpoint& checkpoint) {
  for (Parameter<float>* p : model.parameters()) {
    const NamedTensor* t = checkpoint.find(p->name);
    if (!t) throw std::runtime_error("checkpoint is missing tensor " + p->name);
    if (t->value.rows() != p->value.rows() || t->value.cols() != p->value.cols())
      throw std::runtime_error("checkpoint tensor " + p->name + " has shape " + std::to_string(t->value.rows()) + "x" +
                               std::to_string(t->value.cols()) + ", model expects " + std::to_string(p->value.rows()) +
                               "x" + std::to_string(p->value.cols()));
    p->value = t->value;
  }
  if (!optimizer) return;
  optimizer->first_moments().clear();
  optimizer->second_moments().clear();
  for (const auto& t : checkpoint.tensors) {
    if (t.name.rfind("adam.m.", 0) == 0) optimizer->first_moments()[t.name.substr(7)] = t.value;
    if (t.name.rfind("adam.v.", 0) == 0) optimizer->second_moments()[t.name.substr(7)] = t.value;
  }
  optimizer->set_steps(checkpoint.meta.value("optimizer_step", std::int64_t{0}));
}

std::unique_ptr<MailModel<float>> load_model(const std::filesystem::path& path) {
  const Checkpoint c = load_checkpoint(path);
  const ExperimentConfig config = validate(config_from_json(c.meta.at("config")));
  auto model = std::make_unique<MailModel<float>>(config, c.meta.at("vocab_size").get<int>());
  restore(*model, nullptr, c);
  return model;
}

Evaluation evaluate(MailModel<float>& model, std::span<const SampleRecord> samples, int batch_size) {
  Evaluation e;
  e.predictions = predict(model, samples, batch_size);
  for (std::size_t i = 0; i < samples.size(); ++i) e.ious.push_back(iou(e.predictions[i].mask, samples[i].gt_mask));
  e.summary = summarize(e.ious);
  return e;
}

TrainResult train(MailModel<float>& model, std::span<const SampleRecord> train_set, const TrainOptions& options) {
  const ExperimentConfig& config = model.config();
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");
  const auto n = static_cast<std::int64_t>(train_set.size());
  const std::int64_t per_epoch = (n + config.batch_size - 1) / config.batch_size;
  const Schedule schedule = make_schedule(per_epoch * config.epochs, config.warmup_fraction);
  const std::vector<Parameter<float>*> params = model.parameters();
  AdamW<float> optimizer(optimizer_options(config));

  TrainResult result;
  std::filesystem::create_directories(options.out_dir);
  result.log_path = options.out_dir / "train_log.csv";
  std::int64_t step = 0;
  double epoch_total = 0.0;
  int epoch_batches = 0;
  if (options.resume_from) {
    const Checkpoint c = load_checkpoint(*options.resume_from);
    if (config_from_json(c.meta.at("config")) != config)
      throw std::runtime_error("train: checkpoint config differs from the requested config");
    restore(model, &optimizer, c);
    step = c.meta.at("step").get<std::int64_t>();
    epoch_total = c.meta.value("epoch_loss_sum", 0.0);
    epoch_batches = c.meta.value("epoch_batches", 0);
    if (c.meta.contains("metrics") && !c.meta["metrics"].is_null()) {
      EvalSummary e;
      e.mean_iou = c.meta["metrics"].at("mean_iou").get<double>();
      for (std::size_t i = 0; i < e.precision_at.size(); ++i)
        e.precision_at[i] = c.meta["metrics"].at("pr" + std::to_string(50 + 10 * i)).get<double>();
      e.n_samples = c.meta["metrics"].at("n_samples").get<int>();
      result.last_eval = e;
    }
    truncate_log(result.log_path, step);
  } else {
    std::ofstream(result.log_path, std::ios::trunc) << kTrainLogHeader << '\n';
  }
  std::ofstream log(result.log_path, std::ios::app);

  auto save = [&](const std::filesystem::path& path, std::int64_t epoch) {
    nlohmann::json meta;
    meta["step"] = step;
    meta["epoch"] = epoch;
    meta["epoch_loss_sum"] = epoch_total;
    meta["epoch_batches"] = epoch_batches;
    meta["metrics"] = result.last_eval ? to_json(*result.last_eval) : nlohmann::json(nullptr);
    save_checkpoint(snapshot(model, &optimizer, meta), path);
    result.last_checkpoint = path;
  };

  auto interrupted = [&] {
    return options.stop_after_steps >= 0 && step >= options.stop_after_steps && step < schedule.total_steps;
  };
  auto stop = [&](std::int64_t epoch) {
    log.flush();
    if (options.write_checkpoints) save(options.out_dir / "checkpoints" / "interrupted.ckpt", epoch);
    result.steps = step;
    return result;
  };
  const Rng seed_rng(config.seed);
  std::vector<int> order(static_cast<std::size_t>(n));
  while (step < schedule.total_steps) {
    const std::int64_t epoch = step / per_epoch;
    const std::int64_t offset = step % per_epoch;
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng = seed_rng.split("shuffle").split(static_cast<std::uint64_t>(epoch));
    shuffle_rng.shuffle(order.begin(), order.end());
    if (offset == 0) {
      epoch_total = 0.0;
      epoch_batches = 0;
    }

    for (std::int64_t b = offset; b < per_epoch; ++b) {
      std::vector<const SampleRecord*> batch;
      for (std::int64_t i = b * config.batch_size; i < std::min(n, (b + 1) * config.batch_size); ++i)
        batch.push_back(&train_set[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]);
      ++step;
      const double lr = lr_at(step, schedule, config.learning_rate);
      Rng dropout_rng = seed_rng.split("dropout").split(static_cast<std::uint64_t>(step));
      Tape<float> tape;
      Context<float> ctx{tape, true, &dropout_rng};
      for (Parameter<float>* p : params) p->zero_grad();
      BatchOutput<float> out = forward_batch(ctx, model, std::span<const SampleRecord* const>(batch), true);
      const LossReport& r = out.loss->report;
      if (!std::isfinite(r.total)) throw std::runtime_error("train: non-finite loss at step " + std::to_string(step));
      tape.backward(out.loss->total);
      const double norm = optimizer.step(params, lr);
      epoch_total += r.total;
      ++epoch_batches;
      log << "step," << epoch << ',' << step << ',' << fmt(lr) << ',' << fmt(r.focal) << ',' << fmt(r.dice) << ','
          << fmt(r.select) << ',' << fmt(r.total) << ',' << fmt(norm) << ",,,,,," << '\n';
      // An interruption on the last batch waits for the epoch-end row.
      if (interrupted() && b + 1 < per_epoch) return stop(epoch);
    }

    if (!options.validation.empty()) result.last_eval = evaluate(model, options.validation, config.batch_size).summary;
    log << "epoch," << epoch << ',' << step << ",,,,," << fmt(epoch_total / std::max(1, epoch_batches)) << ",,"
        << eval_columns(result.last_eval) << '\n';
    log.flush();
    if (options.progress) {
      std::string msg = "epoch " + std::to_string(epoch + 1) + "/" + std::to_string(config.epochs) +
                        " loss " + fmt(epoch_total / std::max(1, epoch_batches));
      if (result.last_eval) msg += " val mIoU " + fmt(result.last_eval->mean_iou);
      options.progress(msg);
    }
    if (options.write_checkpoints) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%03lld.ckpt", static_cast<long long>(epoch + 1));
      save(options.out_dir / "checkpoints" / name, epoch + 1);
    }
    if (interrupted()) return stop(epoch + 1);
  }
  if (options.write_checkpoints) save(options.out_dir / "model.ckpt", config.epochs);
  result.steps = step;
  result.completed = true;
  return result;
}

}  // namespace mail
