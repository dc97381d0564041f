#include "gradnet/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>

#include "gradnet/errors.hpp"

namespace gradnet {

namespace {

struct TypeRule {
  std::set<std::string> required;
  std::set<std::string> optional;
};

const std::map<std::string, TypeRule>& type_rules() {
  static const std::map<std::string, TypeRule> rules = {
      {"dense", {{"units"}, {}}},
      {"relu", {{}, {}}},
      {"leaky_relu", {{}, {"slope"}}},
      {"grelu", {{}, {}}},
      {"inverse_grelu", {{}, {}}},
      {"dropout", {{"p"}, {}}},
      {"gradual_dropout", {{"p"}, {}}},
      {"mean_pool", {{"window"}, {"stride"}}},
      {"max_pool", {{"window"}, {"stride"}}},
      {"gradual_pool", {{"window"}, {"stride"}}},
      {"mixed_pool_const", {{"window"}, {"stride", "fixed_g"}}},
      {"batchnorm", {{}, {"momentum", "eps"}}},
      {"gradual_batchnorm", {{}, {"momentum", "eps"}}},
      {"conv", {{"filters", "kernel"}, {"stride", "padding"}}},
      {"gradual_conv", {{"kernel"}, {"filters"}}},
      {"gradual_nin", {{"filters", "kernel"}, {"padding"}}},
      {"flatten", {{}, {}}},
  };
  return rules;
}

void reject_unknown(const Json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
T get_as(const Json& j, const std::string& key, const std::string& where) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

std::size_t get_count(const Json& j, const std::string& key, const std::string& where) {
  const Json& v = j.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw ConfigError(where + "." + key + " must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

template <typename T>
void read_opt(const Json& j, const std::string& key, T& out, const std::string& where) {
  if (j.contains(key)) out = get_as<T>(j, key, where);
}

void read_opt_count(const Json& j, const std::string& key, std::size_t& out,
                    const std::string& where) {
  if (j.contains(key)) out = get_count(j, key, where);
}

std::vector<LayerSpec> parse_layer_list(const Json& j, const std::string& where) {
  if (!j.is_array()) throw ConfigError(where + " must be a list of layer objects");
  std::vector<LayerSpec> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    try {
      out.push_back(parse_layer_spec(j[i]));
    } catch (const ConfigError& e) {
      throw ConfigError(where + "[" + std::to_string(i) + "]: " + e.what());
    }
  }
  return out;
}

Json layer_list_json(const std::vector<LayerSpec>& specs) {
  Json arr = Json::array();
  for (const auto& s : specs) arr.push_back(to_json(s));
  return arr;
}

}  // namespace

const std::vector<std::string>& layer_types() {
  static const std::vector<std::string> types = [] {
    std::vector<std::string> t;
    for (const auto& [name, _] : type_rules()) t.push_back(name);
    return t;
  }();
  return types;
}

bool is_gradnet_type(const std::string& type) {
  return type == "grelu" || type == "inverse_grelu" || type == "gradual_dropout" ||
         type == "gradual_pool" || type == "gradual_batchnorm" || type == "gradual_conv" ||
         type == "gradual_nin";
}

LayerSpec parse_layer_spec(const Json& j) {
  if (!j.is_object() || !j.contains("type") || !j.at("type").is_string()) {
    throw ConfigError("layer entry needs a string 'type'");
  }
  LayerSpec s;
  s.type = j.at("type").get<std::string>();
  const auto it = type_rules().find(s.type);
  if (it == type_rules().end()) throw ConfigError("unknown layer type '" + s.type + "'");
  const TypeRule& rule = it->second;
  for (const auto& [key, _] : j.items()) {
    if (key == "type") continue;
    if (!rule.required.count(key) && !rule.optional.count(key)) {
      throw ConfigError("layer type '" + s.type + "' does not take '" + key + "'");
    }
  }
  for (const auto& key : rule.required) {
    if (!j.contains(key)) throw ConfigError("layer type '" + s.type + "' requires '" + key + "'");
  }
  const std::string where = "layer '" + s.type + "'";
  auto count = [&](const char* key, std::optional<std::size_t>& out) {
    if (j.contains(key)) {
      out = get_count(j, key, where);
      if (*out == 0) throw ConfigError(where + "." + key + " must be >= 1");
    }
  };
  auto real = [&](const char* key, std::optional<double>& out) {
    if (j.contains(key)) out = get_as<double>(j, key, where);
  };
  count("units", s.units);
  count("filters", s.filters);
  count("kernel", s.kernel);
  count("window", s.window);
  count("stride", s.stride);
  real("p", s.p);
  real("slope", s.slope);
  real("fixed_g", s.fixed_g);
  real("momentum", s.momentum);
  real("eps", s.eps);
  if (j.contains("padding")) {
    s.padding = get_as<std::string>(j, "padding", where);
    if (*s.padding != "same" && *s.padding != "valid") {
      throw ConfigError(where + ".padding must be 'same' or 'valid'");
    }
  }
  if (s.p && !(*s.p >= 0.0 && *s.p < 1.0)) throw ConfigError(where + ".p must be in [0, 1)");
  if (s.fixed_g && !(*s.fixed_g >= 0.0 && *s.fixed_g <= 1.0)) {
    throw ConfigError(where + ".fixed_g must be in [0, 1]");
  }
  return s;
}

Json to_json(const LayerSpec& s) {
  Json j{{"type", s.type}};
  if (s.units) j["units"] = *s.units;
  if (s.filters) j["filters"] = *s.filters;
  if (s.kernel) j["kernel"] = *s.kernel;
  if (s.window) j["window"] = *s.window;
  if (s.stride) j["stride"] = *s.stride;
  if (s.padding) j["padding"] = *s.padding;
  if (s.p) j["p"] = *s.p;
  if (s.slope) j["slope"] = *s.slope;
  if (s.fixed_g) j["fixed_g"] = *s.fixed_g;
  if (s.momentum) j["momentum"] = *s.momentum;
  if (s.eps) j["eps"] = *s.eps;
  return j;
}

std::vector<LayerSpec> ModelConfig::expanded() const {
  std::vector<LayerSpec> out = layers;
  for (std::size_t i = 0; i < depth; ++i) out.insert(out.end(), block.begin(), block.end());
  out.insert(out.end(), head.begin(), head.end());
  return out;
}

ExperimentConfig parse_config(const Json& j) {
  reject_unknown(j,
                 {"dataset", "model", "schedule", "optimizer", "batch_size", "eval_batch_size",
                  "max_epochs", "early_stopping", "batchnorm", "seed", "output_dir",
                  "record_wall_time"},
                 "config");
  ExperimentConfig c;

  if (!j.contains("dataset")) throw ConfigError("config needs a 'dataset' section");
  {
    const Json& d = j.at("dataset");
    const std::string w = "dataset";
    reject_unknown(d,
                   {"name", "dir", "train_images", "train_labels", "cifar_files", "limit",
                    "val_fraction", "hflip_p", "num_classes", "blobs"},
                   w);
    read_opt(d, "name", c.dataset.name, w);
    if (c.dataset.name == "idx") c.dataset.name = "mnist";
    if (c.dataset.name != "mnist" && c.dataset.name != "cifar10" &&
        c.dataset.name != "synth_blobs") {
      throw ConfigError("unknown dataset '" + c.dataset.name + "'");
    }
    if (d.contains("dir")) c.dataset.dir = get_as<std::string>(d, "dir", w);
    read_opt(d, "train_images", c.dataset.train_images, w);
    read_opt(d, "train_labels", c.dataset.train_labels, w);
    read_opt(d, "cifar_files", c.dataset.cifar_files, w);
    read_opt_count(d, "limit", c.dataset.limit, w);
    read_opt(d, "val_fraction", c.dataset.val_fraction, w);
    read_opt(d, "hflip_p", c.dataset.hflip_p, w);
    read_opt_count(d, "num_classes", c.dataset.num_classes, w);
    if (d.contains("blobs")) {
      const Json& b = d.at("blobs");
      reject_unknown(b, {"n", "d", "k", "seed"}, "dataset.blobs");
      read_opt_count(b, "n", c.dataset.blobs_n, "dataset.blobs");
      read_opt_count(b, "d", c.dataset.blobs_d, "dataset.blobs");
      read_opt_count(b, "k", c.dataset.blobs_k, "dataset.blobs");
      read_opt(b, "seed", c.dataset.blobs_seed, "dataset.blobs");
    }
    if (c.dataset.name == "synth_blobs") c.dataset.num_classes = c.dataset.blobs_k;
    if (!(c.dataset.val_fraction > 0.0 && c.dataset.val_fraction < 1.0)) {
      throw ConfigError("dataset.val_fraction must be in (0, 1)");
    }
    if (!(c.dataset.hflip_p >= 0.0 && c.dataset.hflip_p <= 1.0)) {
      throw ConfigError("dataset.hflip_p must be in [0, 1]");
    }
    if (c.dataset.num_classes < 2) throw ConfigError("dataset.num_classes must be >= 2");
  }

  if (!j.contains("model")) throw ConfigError("config needs a 'model' section");
  {
    const Json& m = j.at("model");
    reject_unknown(m, {"layers", "block", "depth", "head", "init_gain"}, "model");
    if (m.contains("layers")) c.model.layers = parse_layer_list(m.at("layers"), "model.layers");
    if (m.contains("block")) c.model.block = parse_layer_list(m.at("block"), "model.block");
    if (m.contains("head")) c.model.head = parse_layer_list(m.at("head"), "model.head");
    read_opt_count(m, "depth", c.model.depth, "model");
    read_opt(m, "init_gain", c.model.init_gain, "model");
    if (!(c.model.init_gain > 0.0)) throw ConfigError("model.init_gain must be > 0");
    if (c.model.depth > 0 && c.model.block.empty()) {
      throw ConfigError("model.depth is set but model.block is empty");
    }
    if (c.model.expanded().empty()) throw ConfigError("model has no layers");
  }

  if (j.contains("schedule")) {
    const Json& s = j.at("schedule");
    reject_unknown(s, {"tau", "mode"}, "schedule");
    read_opt(s, "tau", c.tau, "schedule");
    if (s.contains("mode")) {
      const auto mode = get_as<std::string>(s, "mode", "schedule");
      if (mode == "epoch") {
        c.schedule_mode = ScheduleMode::Epoch;
      } else if (mode == "step") {
        c.schedule_mode = ScheduleMode::Step;
      } else {
        throw ConfigError("schedule.mode must be 'epoch' or 'step'");
      }
    }
  }
  if (!(c.tau >= 0.0)) throw ConfigError("schedule.tau must be >= 0");

  if (j.contains("optimizer")) {
    const Json& o = j.at("optimizer");
    reject_unknown(o, {"lr", "beta1", "beta2", "eps"}, "optimizer");
    read_opt(o, "lr", c.optimizer.lr, "optimizer");
    read_opt(o, "beta1", c.optimizer.beta1, "optimizer");
    read_opt(o, "beta2", c.optimizer.beta2, "optimizer");
    read_opt(o, "eps", c.optimizer.eps, "optimizer");
  }
  try {
    c.optimizer.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("optimizer: ") + e.what());
  }

  read_opt_count(j, "batch_size", c.batch_size, "config");
  read_opt_count(j, "eval_batch_size", c.eval_batch_size, "config");
  read_opt_count(j, "max_epochs", c.max_epochs, "config");
  if (c.batch_size == 0 || c.eval_batch_size == 0) throw ConfigError("batch sizes must be >= 1");
  if (c.max_epochs == 0) throw ConfigError("max_epochs must be >= 1");

  if (j.contains("early_stopping")) {
    const Json& e = j.at("early_stopping");
    reject_unknown(e, {"enabled", "patience", "min_delta"}, "early_stopping");
    read_opt(e, "enabled", c.early_stopping, "early_stopping");
    if (e.contains("patience")) {
      const Json& p = e.at("patience");
      if (p.is_null() || (p.is_string() && p.get<std::string>() == "inf")) {
        c.early_stop.patience = EarlyStopping::kNoPatienceLimit;
      } else {
        c.early_stop.patience = get_count(e, "patience", "early_stopping");
      }
    }
    read_opt(e, "min_delta", c.early_stop.min_delta, "early_stopping");
    if (c.early_stop.patience == 0) throw ConfigError("early_stopping.patience must be >= 1");
    if (!(c.early_stop.min_delta >= 0.0)) throw ConfigError("early_stopping.min_delta must be >= 0");
  }

  if (j.contains("batchnorm")) {
    const Json& b = j.at("batchnorm");
    reject_unknown(b, {"momentum", "eps"}, "batchnorm");
    read_opt(b, "momentum", c.bn_momentum, "batchnorm");
    read_opt(b, "eps", c.bn_eps, "batchnorm");
  }
  if (!(c.bn_momentum > 0.0 && c.bn_momentum < 1.0)) {
    throw ConfigError("batchnorm.momentum must be in (0, 1)");
  }
  if (!(c.bn_eps > 0.0)) throw ConfigError("batchnorm.eps must be > 0");

  read_opt(j, "seed", c.seed, "config");
  if (j.contains("output_dir")) c.output_dir = get_as<std::string>(j, "output_dir", "config");
  read_opt(j, "record_wall_time", c.record_wall_time, "config");
  return c;
}

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  return parse_config(read_json_file(path));
}

Json to_json(const ExperimentConfig& c) {
  Json dataset{{"name", c.dataset.name},
               {"train_images", c.dataset.train_images},
               {"train_labels", c.dataset.train_labels},
               {"limit", c.dataset.limit},
               {"val_fraction", c.dataset.val_fraction},
               {"hflip_p", c.dataset.hflip_p},
               {"num_classes", c.dataset.num_classes}};
  if (!c.dataset.dir.empty()) dataset["dir"] = c.dataset.dir.string();
  if (!c.dataset.cifar_files.empty()) dataset["cifar_files"] = c.dataset.cifar_files;
  if (c.dataset.name == "synth_blobs") {
    dataset["blobs"] = {{"n", c.dataset.blobs_n},
                        {"d", c.dataset.blobs_d},
                        {"k", c.dataset.blobs_k},
                        {"seed", c.dataset.blobs_seed}};
  }
  Json model{{"layers", layer_list_json(c.model.layers)},
             {"block", layer_list_json(c.model.block)},
             {"depth", c.model.depth},
             {"head", layer_list_json(c.model.head)},
             {"init_gain", c.model.init_gain}};
  Json early{{"enabled", c.early_stopping}, {"min_delta", c.early_stop.min_delta}};
  if (c.early_stop.patience == EarlyStopping::kNoPatienceLimit) {
    early["patience"] = "inf";
  } else {
    early["patience"] = c.early_stop.patience;
  }
  Json j{{"dataset", dataset},
         {"model", model},
         {"schedule",
          {{"tau", c.tau}, {"mode", c.schedule_mode == ScheduleMode::Epoch ? "epoch" : "step"}}},
         {"optimizer",
          {{"lr", c.optimizer.lr},
           {"beta1", c.optimizer.beta1},
           {"beta2", c.optimizer.beta2},
           {"eps", c.optimizer.eps}}},
         {"batch_size", c.batch_size},
         {"eval_batch_size", c.eval_batch_size},
         {"max_epochs", c.max_epochs},
         {"early_stopping", early},
         {"batchnorm", {{"momentum", c.bn_momentum}, {"eps", c.bn_eps}}},
         {"seed", c.seed},
         {"record_wall_time", c.record_wall_time}};
  if (!c.output_dir.empty()) j["output_dir"] = c.output_dir.string();
  return j;
}

void apply_override(Json& j, const std::string& dotted_key, const std::string& literal) {
  Json value;
  try {
    value = Json::parse(literal);
  } catch (const nlohmann::json::parse_error&) {
    value = literal;
  }
  Json* node = &j;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = dotted_key.find('.', start);
    const std::string part = dotted_key.substr(start, dot == std::string::npos ? std::string::npos
                                                                                 : dot - start);
    if (part.empty()) throw ConfigError("bad override key '" + dotted_key + "'");
    const bool last = dot == std::string::npos;
    if (node->is_array()) {
      std::size_t idx = 0;
      try {
        idx = std::stoul(part);
      } catch (const std::exception&) {
        throw ConfigError("override key '" + dotted_key + "': '" + part + "' is not an index");
      }
      if (idx >= node->size()) {
        throw ConfigError("override key '" + dotted_key + "': index " + part + " out of range");
      }
      node = &(*node)[idx];
    } else {
      if (node->is_null()) *node = Json::object();
      if (!node->is_object()) {
        throw ConfigError("override key '" + dotted_key + "' descends into a non-object");
      }
      node = &(*node)[part];
    }
    if (last) {
      *node = value;
      return;
    }
    start = dot + 1;
  }
}

std::filesystem::path resolve_data_dir(const DatasetConfig& dataset) {
  const char* env = std::getenv("GRADNET_DATA_DIR");
  if (dataset.dir.empty()) return env ? std::filesystem::path(env) : std::filesystem::path("data");
  if (dataset.dir.is_relative() && !std::filesystem::exists(dataset.dir)) {
    const auto candidate = std::filesystem::path(env ? env : "data") / dataset.dir;
    if (std::filesystem::exists(candidate)) return candidate;
  }
  return dataset.dir;
}

Shape infer_input_shape(const DatasetConfig& dataset) {
  if (dataset.name == "cifar10") return {3, 32, 32};
  if (dataset.name == "synth_blobs") return {1, 1, dataset.blobs_d};
  const auto path = resolve_data_dir(dataset) / dataset.train_images;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open dataset images " + path.string());
  unsigned char header[16];
  in.read(reinterpret_cast<char*>(header), 16);
  if (in.gcount() != 16) throw FormatError(path.string() + ": truncated IDX header");
  auto be32 = [&](int off) {
    return (std::size_t{header[off]} << 24) | (std::size_t{header[off + 1]} << 16) |
           (std::size_t{header[off + 2]} << 8) | std::size_t{header[off + 3]};
  };
  return {1, be32(8), be32(12)};
}

}  // namespace gradnet
