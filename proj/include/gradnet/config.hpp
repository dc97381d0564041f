#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gradnet/optim.hpp"
#include "gradnet/schedule.hpp"
#include "gradnet/tensor.hpp"

namespace gradnet {

using Json = nlohmann::json;

/// One entry of a model's layer list. Which optional fields apply depends on
/// the type tag; parse_layer_spec rejects fields a type does not take.
struct LayerSpec {
  std::string type;
  std::optional<std::size_t> units = std::nullopt;
  std::optional<std::size_t> filters = std::nullopt;
  std::optional<std::size_t> kernel = std::nullopt;
  std::optional<std::size_t> window = std::nullopt;
  std::optional<std::size_t> stride = std::nullopt;
  std::optional<std::string> padding = std::nullopt;
  std::optional<double> p = std::nullopt;
  std::optional<double> slope = std::nullopt;
  std::optional<double> fixed_g = std::nullopt;
  std::optional<double> momentum = std::nullopt;
  std::optional<double> eps = std::nullopt;
};

/// Every accepted type tag.
const std::vector<std::string>& layer_types();
bool is_gradnet_type(const std::string& type);

LayerSpec parse_layer_spec(const Json& j);
Json to_json(const LayerSpec& spec);

struct DatasetConfig {
  /// "mnist" / "idx", "cifar10", or "synth_blobs".
  std::string name = "mnist";
  std::filesystem::path dir;
  std::string train_images = "train-images-idx3-ubyte";
  std::string train_labels = "train-labels-idx1-ubyte";
  std::vector<std::string> cifar_files;
  /// Use only the first `limit` stored samples (0 = all).
  std::size_t limit = 0;
  /// Tail of the training file held out for validation.
  double val_fraction = 0.1;
  double hflip_p = 0.0;
  std::size_t num_classes = 10;
  std::size_t blobs_n = 1000;
  std::size_t blobs_d = 2;
  std::size_t blobs_k = 2;
  std::uint64_t blobs_seed = 0;
};

struct ModelConfig {
  /// Expanded layer list is layers ++ block x depth ++ head; depth counts
  /// repetitions of `block`, i.e. hidden layers for an MLP block.
  std::vector<LayerSpec> layers;
  std::vector<LayerSpec> block;
  std::size_t depth = 0;
  std::vector<LayerSpec> head;
  double init_gain = 1.0;

  std::vector<LayerSpec> expanded() const;
};

struct ExperimentConfig {
  DatasetConfig dataset;
  ModelConfig model;
  double tau = 5.0;
  ScheduleMode schedule_mode = ScheduleMode::Epoch;
  AdamConfig optimizer;
  std::size_t batch_size = 500;
  std::size_t eval_batch_size = 500;
  std::size_t max_epochs = 15;
  bool early_stopping = true;
  EarlyStopConfig early_stop;
  double bn_momentum = 0.9;
  double bn_eps = 1e-5;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir;
  /// When false the wall_seconds column is written as 0 so metrics files are
  /// byte-reproducible.
  bool record_wall_time = true;
};

/// Strict parse: unknown keys and unknown layer types raise ConfigError.
ExperimentConfig parse_config(const Json& j);
ExperimentConfig load_config(const std::filesystem::path& path);
Json read_json_file(const std::filesystem::path& path);
Json to_json(const ExperimentConfig& config);

/// Sets the value at a dotted path ("model.depth", "model.block.1.p").
/// `literal` is parsed as JSON when possible and kept as a string otherwise.
void apply_override(Json& j, const std::string& dotted_key, const std::string& literal);

/// Directory holding the dataset files. An empty dir means GRADNET_DATA_DIR
/// (or ./data); a relative dir that does not exist is looked up under it.
std::filesystem::path resolve_data_dir(const DatasetConfig& dataset);

/// Per-sample input shape implied by the dataset config, reading at most an
/// IDX header.
Shape infer_input_shape(const DatasetConfig& dataset);

}  // namespace gradnet
