#include "gradnet/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "gradnet/errors.hpp"
#include "gradnet/optim.hpp"

namespace gradnet {

namespace {

constexpr std::uint64_t kFlipTag = 0xf11b;

std::size_t count_correct(const Tensor& logits, std::span<const int> labels) {
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  auto v = logits.data();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j) {
      if (v[i * k + j] > v[i * k + best]) best = j;
    }
    correct += static_cast<int>(best) == labels[i] ? 1 : 0;
  }
  return correct;
}

void check_classes(const Model& model, std::size_t num_classes) {
  const Shape& out = model.output_shape();
  if (out.size() != 1 || out[0] != num_classes) {
    throw ContractError("model emits " + to_string(out) + " logits for a " +
                        std::to_string(num_classes) + "-class dataset");
  }
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string to_string(RunStatus status) {
  switch (status) {
    case RunStatus::Completed: return "completed";
    case RunStatus::EarlyStopped: return "early_stopped";
    case RunStatus::Diverged: return "diverged";
  }
  return "unknown";
}

EvalResult evaluate(Model& model, const Dataset& dataset, std::size_t batch_size) {
  check_classes(model, dataset.num_classes);
  if (dataset.size() == 0) throw ContractError("cannot evaluate on an empty dataset");
  if (batch_size == 0) throw ConfigError("eval batch size must be >= 1");
  double loss_sum = 0.0;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < dataset.size(); start += batch_size) {
    const std::size_t stop = std::min(dataset.size(), start + batch_size);
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < stop; ++i) idx.push_back(i);
    Batch b = gather(dataset, idx);
    Tape tape;
    ForwardContext ctx(tape, Mode::Eval, model.gate());
    Var logits = model.forward(tape.constant(b.images), ctx);
    Var loss = softmax_cross_entropy(logits, b.labels);
    loss_sum += loss.value().item() * static_cast<double>(idx.size());
    correct += count_correct(logits.value(), b.labels);
  }
  const auto n = static_cast<double>(dataset.size());
  return {loss_sum / n, static_cast<double>(correct) / n};
}

Tensor predict_logits(Model& model, const Tensor& images, std::size_t batch_size) {
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  const std::size_t n = images.dim(0);
  const std::size_t per = n == 0 ? 0 : images.size() / n;
  const std::size_t k = numel(model.output_shape());
  Tensor out(Shape{n, k});
  auto dst = out.mutable_data();
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t stop = std::min(n, start + batch_size);
    Shape shape = images.shape();
    shape[0] = stop - start;
    std::vector<double> chunk(images.data().begin() + start * per,
                              images.data().begin() + stop * per);
    Tape tape;
    ForwardContext ctx(tape, Mode::Eval, model.gate());
    Var logits = model.forward(tape.constant(Tensor(shape, std::move(chunk))), ctx);
    std::copy(logits.value().data().begin(), logits.value().data().end(),
              dst.begin() + start * k);
  }
  return out;
}

std::pair<Dataset, Dataset> load_datasets(const ExperimentConfig& config) {
  const DatasetConfig& d = config.dataset;
  Dataset all;
  if (d.name == "synth_blobs") {
    all = synth_blobs(d.blobs_n, d.blobs_d, d.blobs_k, d.blobs_seed);
  } else if (d.name == "cifar10") {
    const auto dir = resolve_data_dir(d);
    std::vector<std::filesystem::path> paths;
    if (d.cifar_files.empty()) {
      for (int i = 1; i <= 5; ++i) paths.push_back(dir / ("data_batch_" + std::to_string(i) + ".bin"));
    } else {
      for (const auto& f : d.cifar_files) paths.push_back(dir / f);
    }
    all = load_cifar10_bin(paths);
  } else {
    const auto dir = resolve_data_dir(d);
    all = load_idx(dir / d.train_images, dir / d.train_labels, d.num_classes);
  }
  if (all.num_classes != d.num_classes) {
    throw ConfigError("dataset has " + std::to_string(all.num_classes) +
                      " classes, config says " + std::to_string(d.num_classes));
  }
  if (d.limit > 0) all = take(all, d.limit);
  return split_tail(all, d.val_fraction);
}

RunHistory train(const ExperimentConfig& config, Model& model, const Dataset& train_set,
                 const Dataset& val_set) {
  check_classes(model, train_set.num_classes);
  check_classes(model, val_set.num_classes);
  if (train_set.size() == 0) throw ConfigError("training set is empty");
  if (config.batch_size == 0) throw ConfigError("batch_size must be >= 1");

  RunHistory history;
  history.parameter_count = model.parameter_count();

  LinearSchedule schedule(config.tau, config.schedule_mode);
  Adam adam(config.optimizer);
  EarlyStopConfig stop_config = config.early_stop;
  if (!config.early_stopping) stop_config.patience = EarlyStopping::kNoPatienceLimit;
  EarlyStopping stopper(stop_config);
  Snapshot best = capture(model);

  const BatchPlan plan{config.batch_size, config.seed, false};
  const auto start = std::chrono::steady_clock::now();
  const auto params = model.parameters();

  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    const auto plan_batches = batch_indices(train_set.size(), plan, epoch);
    double loss_sum = 0.0;
    std::size_t correct = 0, seen = 0;
    bool diverged = false;

    for (std::size_t b = 0; b < plan_batches.size(); ++b) {
      const GateValue g = schedule.at_step(b, plan_batches.size());
      model.set_gate(g);
      Batch batch = gather(train_set, plan_batches[b]);
      if (config.dataset.hflip_p > 0.0) {
        Rng flip{config.seed, kFlipTag, epoch, b};
        batch.images = augment_hflip(batch.images, config.dataset.hflip_p, flip);
      }
      Tape tape;
      ForwardContext ctx(tape, Mode::Train, g, config.seed, epoch, b);
      Var logits = model.forward(tape.constant(batch.images), ctx);
      Var loss = softmax_cross_entropy(logits, batch.labels);
      const double loss_value = loss.value().item();
      if (!std::isfinite(loss_value)) {
        diverged = true;
        history.diverged_reason = "non-finite training loss in epoch " + std::to_string(epoch);
        break;
      }
      loss_sum += loss_value * static_cast<double>(batch.labels.size());
      correct += count_correct(logits.value(), batch.labels);
      seen += batch.labels.size();

      tape.backward(loss);
      std::map<const Parameter*, Tensor> grad_of;
      for (const auto& [param, var] : ctx.bindings()) {
        Tensor g_param = tape.grad(var);
        auto it = grad_of.find(param);
        if (it == grad_of.end()) {
          grad_of.emplace(param, std::move(g_param));
        } else {
          auto acc = it->second.mutable_data();
          for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g_param[i];
        }
      }
      std::vector<Tensor> grads;
      grads.reserve(params.size());
      for (Parameter* p : params) {
        auto it = grad_of.find(p);
        grads.push_back(it == grad_of.end() ? Tensor(p->value.shape(), 0.0) : it->second);
      }
      try {
        adam.step(params, grads);
      } catch (const NumericError& e) {
        diverged = true;
        history.diverged_reason = e.what();
        break;
      }
    }
    if (diverged) {
      history.status = RunStatus::Diverged;
      break;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.g = model.gate().value();
    rec.train_loss = loss_sum / static_cast<double>(seen);
    rec.train_acc = static_cast<double>(correct) / static_cast<double>(seen);
    const EvalResult val = evaluate(model, val_set, config.eval_batch_size);
    rec.val_loss = val.loss;
    rec.val_acc = val.accuracy;
    if (config.record_wall_time) {
      rec.wall_seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
    history.epochs.push_back(rec);
    if (!history.annealed_epoch && rec.g == 1.0) history.annealed_epoch = epoch;
    schedule.advance_epoch();

    if (!std::isfinite(val.loss)) {
      history.status = RunStatus::Diverged;
      history.diverged_reason = "non-finite validation loss in epoch " + std::to_string(epoch);
      break;
    }
    const StopDecision decision = stopper.update(rec.val_acc);
    if (decision == StopDecision::NewBest) best = capture(model);
    if (decision == StopDecision::Stop) {
      history.status = RunStatus::EarlyStopped;
      break;
    }
  }

  if (history.status != RunStatus::Diverged && !history.epochs.empty()) {
    const double chance = 1.0 / static_cast<double>(train_set.num_classes);
    const EpochRecord& last = history.epochs.back();
    if (last.train_acc <= chance + 0.02) {
      history.status = RunStatus::Diverged;
      history.diverged_reason = "training accuracy " + fmt(last.train_acc) +
                                " at or below chance + 2% in the last epoch";
    }
  }
  if (!history.epochs.empty()) history.final_g = history.epochs.back().g;
  if (stopper.has_best()) {
    history.best_epoch = stopper.best_epoch();
    history.best_val_acc = stopper.best();
  }
  restore(model, best);
  return history;
}

std::string metrics_csv(const RunHistory& history) {
  std::ostringstream os;
  os << "epoch,g,train_loss,train_acc,val_loss,val_acc,wall_seconds\n";
  for (const auto& r : history.epochs) {
    os << r.epoch << ',' << fmt(r.g) << ',' << fmt(r.train_loss) << ',' << fmt(r.train_acc) << ','
       << fmt(r.val_loss) << ',' << fmt(r.val_acc) << ',' << fmt(r.wall_seconds) << '\n';
  }
  return os.str();
}

void write_run_artifacts(const ExperimentConfig& config, const RunHistory& history,
                         const Snapshot& best, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "metrics.csv", std::ios::binary);
    out << metrics_csv(history);
    if (!out) throw Error("failed writing " + (dir / "metrics.csv").string());
  }
  write_snapshot(best, dir / "model.snapshot");

  Json run;
  run["status"] = to_string(history.status);
  if (!history.diverged_reason.empty()) run["diverged_reason"] = history.diverged_reason;
  run["best_epoch"] = history.best_epoch;
  run["best_val_acc"] = history.best_val_acc;
  run["epochs_run"] = history.epochs.size();
  run["final_g"] = history.final_g;
  run["parameter_count"] = history.parameter_count;
  run["annealed_epoch"] =
      history.annealed_epoch ? Json(*history.annealed_epoch) : Json(nullptr);
  run["depth"] = config.model.depth;
  run["depth_counts"] = "hidden layers (repetitions of model.block)";
  run["seed"] = config.seed;
  run["config"] = to_json(config);
  std::ofstream out(dir / "run.json");
  out << run.dump(2) << '\n';
}

RunHistory train(const ExperimentConfig& config) {
  auto [train_set, val_set] = load_datasets(config);
  validate_config(config, train_set.sample_shape());
  Model model = build_model(config, train_set.sample_shape());
  RunHistory history = train(config, model, train_set, val_set);
  if (!config.output_dir.empty()) {
    write_run_artifacts(config, history, capture(model), config.output_dir);
  }
  return history;
}

}  // namespace gradnet
