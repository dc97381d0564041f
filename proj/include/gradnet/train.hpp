#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gradnet/config.hpp"
#include "gradnet/data.hpp"
#include "gradnet/model.hpp"
#include "gradnet/snapshot.hpp"

namespace gradnet {

struct EpochRecord {
  std::size_t epoch = 0;
  double g = 0.0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
  double wall_seconds = 0.0;
};

enum class RunStatus { Completed, EarlyStopped, Diverged };

std::string to_string(RunStatus status);

struct RunHistory {
  std::vector<EpochRecord> epochs;
  RunStatus status = RunStatus::Completed;
  std::string diverged_reason;
  /// Index into `epochs` of the best validation accuracy, -1 if none.
  long best_epoch = -1;
  double best_val_acc = 0.0;
  std::size_t parameter_count = 0;
  /// Gate of the last completed epoch; below 1 when the run stopped before tau.
  double final_g = 0.0;
  /// First epoch trained at g = 1, if reached.
  std::optional<std::size_t> annealed_epoch;

  bool diverged() const { return status == RunStatus::Diverged; }
};

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
};

/// Eval-mode pass over `dataset` at the model's current gate. Does not touch
/// model state. Throws ContractError when the model's output width differs
/// from the dataset's class count.
EvalResult evaluate(Model& model, const Dataset& dataset, std::size_t batch_size = 500);

/// Eval-mode logits for N x sample_shape images, computed in chunks.
Tensor predict_logits(Model& model, const Tensor& images, std::size_t batch_size = 500);

/// Train and validation splits described by the dataset config.
std::pair<Dataset, Dataset> load_datasets(const ExperimentConfig& config);

/// Runs the epoch loop on `model` and leaves it at the best snapshot.
RunHistory train(const ExperimentConfig& config, Model& model, const Dataset& train_set,
                 const Dataset& val_set);

/// Loads data, builds the model, trains, and writes metrics.csv, run.json and
/// model.snapshot into config.output_dir when it is set.
RunHistory train(const ExperimentConfig& config);

std::string metrics_csv(const RunHistory& history);
void write_run_artifacts(const ExperimentConfig& config, const RunHistory& history,
                         const Snapshot& best, const std::filesystem::path& dir);

}  // namespace gradnet
