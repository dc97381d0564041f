#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gradnet/autodiff.hpp"
#include "gradnet/ops.hpp"
#include "gradnet/rng.hpp"
#include "gradnet/schedule.hpp"
#include "gradnet/tensor.hpp"

namespace gradnet {

enum class Mode { Train, Eval };

struct Parameter {
  std::string name;
  Tensor value;
};

/// Non-trainable state (running statistics) exposed for snapshots.
struct Buffer {
  std::string name;
  Tensor* value;
};

/// Per-forward-pass state handed to every layer: the tape, train/eval mode,
/// the gate for this batch, and the coordinates that key stochastic streams.
class ForwardContext {
 public:
  ForwardContext(Tape& tape, Mode mode, GateValue gate, std::uint64_t seed = 0,
                 std::uint64_t epoch = 0, std::uint64_t batch = 0)
      : tape_(tape), mode_(mode), gate_(gate), seed_(seed), epoch_(epoch), batch_(batch) {}

  Tape& tape() { return tape_; }
  Mode mode() const { return mode_; }
  bool training() const { return mode_ == Mode::Train; }
  GateValue gate() const { return gate_; }

  void set_layer_index(std::size_t index) { layer_index_ = index; }
  std::size_t layer_index() const { return layer_index_; }

  /// Random stream keyed by (seed, layer index, epoch, batch). Two calls with
  /// the same coordinates return identical streams.
  Rng stream() const { return Rng{seed_, layer_index_, epoch_, batch_}; }

  /// Puts a parameter on the tape; gradients are tracked in Train mode, or
  /// in any mode once track_parameters(true) is set.
  Var bind(Parameter& p);
  void track_parameters(bool on) { track_ = on; }
  const std::vector<std::pair<Parameter*, Var>>& bindings() const { return bindings_; }

 private:
  Tape& tape_;
  Mode mode_;
  GateValue gate_;
  std::uint64_t seed_;
  std::uint64_t epoch_;
  std::uint64_t batch_;
  std::size_t layer_index_ = 0;
  bool track_ = false;
  std::vector<std::pair<Parameter*, Var>> bindings_;
};

// ---------------------------------------------------------------------------
// Layer functions. Each takes Vars on one tape and returns the output Var.

/// (1 - g) * early + g * late. At g == 0 / g == 1 the matching input is
/// returned unchanged. Throws ConfigError when the shapes differ.
Var interpolate(Var early, Var late, GateValue g);

Var dense_forward(Var x, Var weight, Var bias);

/// Identity -> ReLU, folded into a leaky ReLU with negative slope 1 - g.
Var grelu_forward(Var x, GateValue g);

/// |x| -> ReLU, folded into a leaky ReLU with negative slope -(1 - g).
Var inverse_grelu_forward(Var x, GateValue g);

struct DropoutSpec {
  double p = 0.5;
  /// Throws ConfigError unless 0 <= p < 1.
  void validate() const;
};

/// Inverted dropout: Train keeps each element with probability 1 - p and
/// rescales survivors by 1 / (1 - p); Eval is the identity.
Var dropout_forward(Var x, const DropoutSpec& spec, Mode mode, Rng& rng);

/// Identity -> inverted dropout.
Var gradual_dropout_forward(Var x, const DropoutSpec& spec, GateValue g, Mode mode, Rng& rng);

/// Mean pooling -> max pooling over the same windows.
Var gradual_pool_forward(Var x, std::size_t window, std::size_t stride, GateValue g);

struct BatchNormStats {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.9;
  double eps = 1e-5;

  explicit BatchNormStats(std::size_t channels, double momentum = 0.9, double eps = 1e-5);
};

/// Train: normalize with biased batch statistics, then fold them into the
/// running averages (running = momentum * running + (1 - momentum) * batch).
/// Eval: normalize with the running averages.
Var batchnorm_forward(Var x, Var gamma, Var beta, BatchNormStats& stats, Mode mode);

/// Batch normalization -> identity. At g == 1 no statistics are read or
/// updated, so single-example batches are valid.
Var gradual_bn_forward(Var x, Var gamma, Var beta, BatchNormStats& stats, GateValue g, Mode mode);

/// Identity -> same-padded stride-1 convolution with as many filters as input
/// channels.
Var gradual_conv_forward(Var x, Var kernel, GateValue g);

/// conv -> conv followed by relu and a 1x1 convolution (network-in-network).
Var gradual_nin_forward(Var x, Var kernel, Var kernel_1x1, GateValue g, Padding padding = Padding::Same);

// ---------------------------------------------------------------------------
// Layer objects, assembled into models by build_model.

class Layer {
 public:
  /// `input_shape` is per sample, without the batch dimension.
  explicit Layer(Shape input_shape) : input_shape_(std::move(input_shape)) {}
  virtual ~Layer() = default;

  virtual std::string kind() const = 0;
  virtual Var forward(Var x, ForwardContext& ctx) = 0;

  const Shape& input_shape() const { return input_shape_; }
  const Shape& output_shape() const { return output_shape_; }

  /// Trainable tensors.
  virtual std::vector<Parameter*> parameters() { return {}; }
  /// Non-trainable state that belongs in snapshots.
  virtual std::vector<Buffer> buffers() { return {}; }

 protected:
  Shape input_shape_;
  Shape output_shape_;
};

using LayerPtr = std::unique_ptr<Layer>;

class IdentityLayer final : public Layer {
 public:
  explicit IdentityLayer(Shape input_shape);
  std::string kind() const override { return "identity"; }
  Var forward(Var x, ForwardContext&) override { return x; }
};

class FlattenLayer final : public Layer {
 public:
  explicit FlattenLayer(Shape input_shape);
  std::string kind() const override { return "flatten"; }
  Var forward(Var x, ForwardContext& ctx) override;
};

/// xW + b on the flattened per-sample input. W is orthogonally initialized
/// and b starts at zero.
class DenseLayer final : public Layer {
 public:
  DenseLayer(Shape input_shape, std::size_t units, double gain, Rng& init);
  std::string kind() const override { return "dense"; }
  Var forward(Var x, ForwardContext& ctx) override;
  std::vector<Parameter*> parameters() override { return {&weight_, &bias_}; }

 private:
  Parameter weight_;
  Parameter bias_;
};

enum class Activation { Relu, LeakyRelu, Abs, Identity };

class ActivationLayer final : public Layer {
 public:
  ActivationLayer(Shape input_shape, Activation kind, double slope = 0.0);
  std::string kind() const override;
  Var forward(Var x, ForwardContext& ctx) override;

 private:
  Activation activation_;
  double slope_;
};

class GReLULayer final : public Layer {
 public:
  explicit GReLULayer(Shape input_shape) : Layer(input_shape) { output_shape_ = input_shape_; }
  std::string kind() const override { return "grelu"; }
  Var forward(Var x, ForwardContext& ctx) override { return grelu_forward(x, ctx.gate()); }
};

class InverseGReLULayer final : public Layer {
 public:
  explicit InverseGReLULayer(Shape input_shape) : Layer(input_shape) {
    output_shape_ = input_shape_;
  }
  std::string kind() const override { return "inverse_grelu"; }
  Var forward(Var x, ForwardContext& ctx) override {
    return inverse_grelu_forward(x, ctx.gate());
  }
};

class DropoutLayer final : public Layer {
 public:
  DropoutLayer(Shape input_shape, DropoutSpec spec);
  std::string kind() const override { return "dropout"; }
  Var forward(Var x, ForwardContext& ctx) override;

 private:
  DropoutSpec spec_;
};

class PoolLayer final : public Layer {
 public:
  PoolLayer(Shape input_shape, PoolKind kind, std::size_t window, std::size_t stride);
  std::string kind() const override;
  Var forward(Var x, ForwardContext& ctx) override;

 private:
  PoolKind pool_;
  std::size_t window_;
  std::size_t stride_;
};

/// Normalizes axis 0 of the per-sample shape (features of a flat input,
/// channels of an image).
class BatchNormLayer final : public Layer {
 public:
  BatchNormLayer(Shape input_shape, double momentum, double eps);
  std::string kind() const override { return "batchnorm"; }
  Var forward(Var x, ForwardContext& ctx) override;
  std::vector<Parameter*> parameters() override { return {&gamma_, &beta_}; }
  std::vector<Buffer> buffers() override;

  const BatchNormStats& stats() const { return stats_; }

 private:
  Parameter gamma_;
  Parameter beta_;
  BatchNormStats stats_;
};

class ConvLayer final : public Layer {
 public:
  ConvLayer(Shape input_shape, std::size_t filters, std::size_t kernel, std::size_t stride,
            Padding padding, double gain, Rng& init);
  std::string kind() const override { return "conv"; }
  Var forward(Var x, ForwardContext& ctx) override;
  std::vector<Parameter*> parameters() override { return {&kernel_}; }

  Parameter& kernel() { return kernel_; }

 private:
  Parameter kernel_;
  std::size_t stride_;
  Padding padding_;
};

class SequentialLayer final : public Layer {
 public:
  explicit SequentialLayer(std::vector<LayerPtr> layers, std::string kind = "sequential");
  std::string kind() const override { return kind_; }
  Var forward(Var x, ForwardContext& ctx) override;
  std::vector<Parameter*> parameters() override;
  std::vector<Buffer> buffers() override;

  const std::vector<LayerPtr>& layers() const { return layers_; }

 private:
  std::vector<LayerPtr> layers_;
  std::string kind_;
};

/// The GradNet combinator: a gated weighted mean of two components with the
/// same input and output shapes. With `fixed_gate` set the schedule is
/// ignored (constant mixing baselines).
class GradNetLayer final : public Layer {
 public:
  GradNetLayer(std::string kind, LayerPtr early, LayerPtr late,
               std::optional<double> fixed_gate = std::nullopt);
  std::string kind() const override { return kind_; }
  Var forward(Var x, ForwardContext& ctx) override;
  std::vector<Parameter*> parameters() override;
  std::vector<Buffer> buffers() override;

  Layer& early() { return *early_; }
  Layer& late() { return *late_; }

 private:
  std::string kind_;
  LayerPtr early_;
  LayerPtr late_;
  std::optional<GateValue> fixed_gate_;
};

/// Orthogonal init applied to a conv kernel of shape [F, C, kh, kw] through
/// its F x (C*kh*kw) flattening.
Tensor orthogonal_kernel(std::size_t filters, std::size_t channels, std::size_t kh,
                         std::size_t kw, double gain, Rng& rng);

}  // namespace gradnet
