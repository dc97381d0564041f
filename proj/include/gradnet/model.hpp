#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gradnet/config.hpp"
#include "gradnet/layers.hpp"

namespace gradnet {

struct BuildOptions {
  double init_gain = 1.0;
  double bn_momentum = 0.9;
  double bn_eps = 1e-5;
};

/// Instantiates one LayerSpec for a per-sample input shape. GradNet types
/// are assembled from their early and late components.
LayerPtr make_layer(const LayerSpec& spec, const Shape& input_shape, const BuildOptions& options,
                    Rng& init);

/// A compiled layer stack plus the gate its GradNet layers currently read.
class Model {
 public:
  Model(Shape input_shape, std::vector<LayerPtr> layers);

  /// x has shape N x input_shape. Sets the context's layer index as it goes.
  Var forward(Var x, ForwardContext& ctx);

  const Shape& input_shape() const { return input_shape_; }
  const Shape& output_shape() const { return output_shape_; }
  const std::vector<LayerPtr>& layers() const { return layers_; }

  /// Names are "<index>.<kind>.<local name>".
  std::vector<Parameter*> parameters();
  std::vector<Buffer> buffers();
  std::size_t parameter_count();
  std::size_t gradnet_layer_count() const;

  GateValue gate() const { return gate_; }
  void set_gate(GateValue g) { gate_ = g; }

  /// Copies of every parameter and buffer, in parameters() ++ buffers() order.
  std::vector<Tensor> state();
  void load_state(const std::vector<Tensor>& state);

  std::string summary();

 private:
  Shape input_shape_;
  Shape output_shape_;
  std::vector<LayerPtr> layers_;
  GateValue gate_;
};

/// Builds the expanded layer list with layer i initialized from the stream
/// (seed, i). Shape errors are rethrown as ConfigError naming the layer index.
Model build_model(const ModelConfig& config, const Shape& input_shape, std::uint64_t seed,
                  const BuildOptions& options = {});

Model build_model(const ExperimentConfig& config, const Shape& input_shape);

/// Full pre-training validation: propagates shapes through the model and
/// checks the output is a flat vector of num_classes logits.
void validate_config(const ExperimentConfig& config, const Shape& input_shape);

}  // namespace gradnet
