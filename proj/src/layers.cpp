#include "gradnet/layers.hpp"

#include <string>

#include "gradnet/errors.hpp"
#include "gradnet/optim.hpp"

namespace gradnet {

Var ForwardContext::bind(Parameter& p) {
  Var v = training() || track_ ? tape_.variable(p.value) : tape_.constant(p.value);
  bindings_.emplace_back(&p, v);
  return v;
}

Var interpolate(Var early, Var late, GateValue g) {
  if (early.shape() != late.shape()) {
    throw ConfigError("GradNet branches disagree on output shape: early " +
                      to_string(early.shape()) + ", late " + to_string(late.shape()));
  }
  if (g.at_early()) return early;
  if (g.at_late()) return late;
  return lerp(early, late, g.value());
}

Var dense_forward(Var x, Var weight, Var bias) { return add_bias(matmul(x, weight), bias); }

Var grelu_forward(Var x, GateValue g) { return leaky_relu(x, 1.0 - g.value()); }

Var inverse_grelu_forward(Var x, GateValue g) { return leaky_relu(x, -(1.0 - g.value())); }

void DropoutSpec::validate() const {
  if (!(p >= 0.0 && p < 1.0)) {
    throw ConfigError("dropout probability must be in [0, 1), got " + std::to_string(p));
  }
}

Var dropout_forward(Var x, const DropoutSpec& spec, Mode mode, Rng& rng) {
  spec.validate();
  if (mode == Mode::Eval || spec.p == 0.0) return x;
  Tensor mask(x.shape());
  const double keep_scale = 1.0 / (1.0 - spec.p);
  for (double& m : mask.mutable_data()) m = rng.bernoulli(spec.p) ? 0.0 : keep_scale;
  return mul(x, x.tape()->constant(std::move(mask)));
}

Var gradual_dropout_forward(Var x, const DropoutSpec& spec, GateValue g, Mode mode, Rng& rng) {
  spec.validate();
  if (g.at_early()) return x;
  return interpolate(x, dropout_forward(x, spec, mode, rng), g);
}

Var gradual_pool_forward(Var x, std::size_t window, std::size_t stride, GateValue g) {
  if (g.at_early()) return pool2d(x, window, stride, PoolKind::Mean);
  if (g.at_late()) return pool2d(x, window, stride, PoolKind::Max);
  return interpolate(pool2d(x, window, stride, PoolKind::Mean),
                     pool2d(x, window, stride, PoolKind::Max), g);
}

BatchNormStats::BatchNormStats(std::size_t channels, double momentum_, double eps_)
    : running_mean(Shape{channels}, 0.0),
      running_var(Shape{channels}, 1.0),
      momentum(momentum_),
      eps(eps_) {
  if (!(eps > 0.0)) throw ConfigError("batch norm eps must be > 0");
  if (!(momentum > 0.0 && momentum < 1.0)) {
    throw ConfigError("batch norm momentum must be in (0, 1)");
  }
}

Var batchnorm_forward(Var x, Var gamma, Var beta, BatchNormStats& stats, Mode mode) {
  if (mode == Mode::Eval) {
    return batch_norm_fixed(x, gamma, beta, stats.running_mean, stats.running_var, stats.eps);
  }
  Tensor mean, var;
  Var out = batch_norm_train(x, gamma, beta, stats.eps, &mean, &var);
  auto rm = stats.running_mean.mutable_data();
  auto rv = stats.running_var.mutable_data();
  for (std::size_t c = 0; c < rm.size(); ++c) {
    rm[c] = stats.momentum * rm[c] + (1.0 - stats.momentum) * mean[c];
    rv[c] = stats.momentum * rv[c] + (1.0 - stats.momentum) * var[c];
  }
  return out;
}

Var gradual_bn_forward(Var x, Var gamma, Var beta, BatchNormStats& stats, GateValue g,
                       Mode mode) {
  if (g.at_late()) return x;
  return interpolate(batchnorm_forward(x, gamma, beta, stats, mode), x, g);
}

Var gradual_conv_forward(Var x, Var kernel, GateValue g) {
  const Shape& ks = kernel.shape();
  if (x.shape().size() != 4 || ks.size() != 4 || ks[0] != x.shape()[1]) {
    throw ConfigError("gradual conv needs as many filters as input channels; kernel " +
                      to_string(ks) + ", input " + to_string(x.shape()));
  }
  if (g.at_early()) return x;
  return interpolate(x, conv2d(x, kernel, 1, Padding::Same), g);
}

Var gradual_nin_forward(Var x, Var kernel, Var kernel_1x1, GateValue g, Padding padding) {
  const Shape& k1 = kernel_1x1.shape();
  if (k1.size() != 4 || k1[2] != 1 || k1[3] != 1 || k1[0] != k1[1] ||
      k1[1] != kernel.shape()[0]) {
    throw ConfigError("NiN 1x1 kernel " + to_string(k1) + " must map the " +
                      std::to_string(kernel.shape()[0]) + " conv channels onto themselves");
  }
  Var c = conv2d(x, kernel, 1, padding);
  if (g.at_early()) return c;
  return interpolate(c, conv2d(relu(c), kernel_1x1, 1, Padding::Valid), g);
}

// ---------------------------------------------------------------------------

IdentityLayer::IdentityLayer(Shape input_shape) : Layer(std::move(input_shape)) {
  output_shape_ = input_shape_;
}

FlattenLayer::FlattenLayer(Shape input_shape) : Layer(std::move(input_shape)) {
  output_shape_ = {numel(input_shape_)};
}

Var FlattenLayer::forward(Var x, ForwardContext&) {
  const std::size_t n = x.shape().at(0);
  if (x.shape().size() == 2) return x;
  return reshape(x, Shape{n, x.value().size() / n});
}

DenseLayer::DenseLayer(Shape input_shape, std::size_t units, double gain, Rng& init)
    : Layer(std::move(input_shape)) {
  if (units == 0) throw ConfigError("dense layer needs units >= 1");
  const std::size_t in = numel(input_shape_);
  weight_ = {"W", orthogonal_init(in, units, gain, init)};
  bias_ = {"b", Tensor(Shape{units}, 0.0)};
  output_shape_ = {units};
}

Var DenseLayer::forward(Var x, ForwardContext& ctx) {
  const std::size_t n = x.shape().at(0);
  if (x.shape().size() != 2) x = reshape(x, Shape{n, x.value().size() / n});
  return dense_forward(x, ctx.bind(weight_), ctx.bind(bias_));
}

ActivationLayer::ActivationLayer(Shape input_shape, Activation kind, double slope)
    : Layer(std::move(input_shape)), activation_(kind), slope_(slope) {
  if (!std::isfinite(slope_)) throw ConfigError("leaky relu slope must be finite");
  output_shape_ = input_shape_;
}

std::string ActivationLayer::kind() const {
  switch (activation_) {
    case Activation::Relu: return "relu";
    case Activation::LeakyRelu: return "leaky_relu";
    case Activation::Abs: return "abs";
    case Activation::Identity: return "identity";
  }
  return "activation";
}

Var ActivationLayer::forward(Var x, ForwardContext&) {
  switch (activation_) {
    case Activation::Relu: return relu(x);
    case Activation::LeakyRelu: return leaky_relu(x, slope_);
    case Activation::Abs: return abs_value(x);
    case Activation::Identity: return x;
  }
  return x;
}

DropoutLayer::DropoutLayer(Shape input_shape, DropoutSpec spec)
    : Layer(std::move(input_shape)), spec_(spec) {
  spec_.validate();
  output_shape_ = input_shape_;
}

Var DropoutLayer::forward(Var x, ForwardContext& ctx) {
  Rng rng = ctx.stream();
  return dropout_forward(x, spec_, ctx.mode(), rng);
}

PoolLayer::PoolLayer(Shape input_shape, PoolKind kind, std::size_t window, std::size_t stride)
    : Layer(std::move(input_shape)), pool_(kind), window_(window), stride_(stride) {
  if (input_shape_.size() != 3) {
    throw DimensionError("pooling expects C x H x W input, got " + to_string(input_shape_));
  }
  if (stride_ == 0) throw ConfigError("pool stride must be >= 1");
  const std::size_t h = input_shape_[1], w = input_shape_[2];
  if (window_ == 0 || window_ > h || window_ > w) {
    throw DimensionError("pool window " + std::to_string(window_) + " does not fit " +
                         to_string(input_shape_));
  }
  output_shape_ = {input_shape_[0], (h - window_) / stride_ + 1, (w - window_) / stride_ + 1};
}

std::string PoolLayer::kind() const { return pool_ == PoolKind::Mean ? "mean_pool" : "max_pool"; }

Var PoolLayer::forward(Var x, ForwardContext&) { return pool2d(x, window_, stride_, pool_); }

BatchNormLayer::BatchNormLayer(Shape input_shape, double momentum, double eps)
    : Layer(std::move(input_shape)), stats_(input_shape_.empty() ? 0 : input_shape_[0], momentum, eps) {
  if (input_shape_.empty()) throw DimensionError("batch norm needs a non-scalar input");
  const std::size_t channels = input_shape_[0];
  gamma_ = {"gamma", Tensor(Shape{channels}, 1.0)};
  beta_ = {"beta", Tensor(Shape{channels}, 0.0)};
  output_shape_ = input_shape_;
}

Var BatchNormLayer::forward(Var x, ForwardContext& ctx) {
  return batchnorm_forward(x, ctx.bind(gamma_), ctx.bind(beta_), stats_, ctx.mode());
}

std::vector<Buffer> BatchNormLayer::buffers() {
  return {{"running_mean", &stats_.running_mean}, {"running_var", &stats_.running_var}};
}

Tensor orthogonal_kernel(std::size_t filters, std::size_t channels, std::size_t kh,
                         std::size_t kw, double gain, Rng& rng) {
  return orthogonal_init(filters, channels * kh * kw, gain, rng)
      .reshaped(Shape{filters, channels, kh, kw});
}

ConvLayer::ConvLayer(Shape input_shape, std::size_t filters, std::size_t kernel,
                     std::size_t stride, Padding padding, double gain, Rng& init)
    : Layer(std::move(input_shape)), stride_(stride), padding_(padding) {
  if (input_shape_.size() != 3) {
    throw DimensionError("conv expects C x H x W input, got " + to_string(input_shape_));
  }
  if (filters == 0) throw ConfigError("conv needs filters >= 1");
  const auto gh = conv_axis(input_shape_[1], kernel, stride, padding);
  const auto gw = conv_axis(input_shape_[2], kernel, stride, padding);
  kernel_ = {"K", orthogonal_kernel(filters, input_shape_[0], kernel, kernel, gain, init)};
  output_shape_ = {filters, gh.out, gw.out};
}

Var ConvLayer::forward(Var x, ForwardContext& ctx) {
  return conv2d(x, ctx.bind(kernel_), stride_, padding_);
}

SequentialLayer::SequentialLayer(std::vector<LayerPtr> layers, std::string kind)
    : Layer(layers.empty() ? Shape{} : layers.front()->input_shape()),
      layers_(std::move(layers)),
      kind_(std::move(kind)) {
  if (layers_.empty()) throw ConfigError("sequential block needs at least one layer");
  for (std::size_t i = 1; i < layers_.size(); ++i) {
    if (layers_[i]->input_shape() != layers_[i - 1]->output_shape()) {
      throw DimensionError("sequential block: layer " + std::to_string(i) + " expects " +
                           to_string(layers_[i]->input_shape()) + " but receives " +
                           to_string(layers_[i - 1]->output_shape()));
    }
  }
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    for (Parameter* p : layers_[i]->parameters()) p->name = std::to_string(i) + "." + p->name;
  }
  output_shape_ = layers_.back()->output_shape();
}

Var SequentialLayer::forward(Var x, ForwardContext& ctx) {
  for (auto& layer : layers_) x = layer->forward(x, ctx);
  return x;
}

std::vector<Parameter*> SequentialLayer::parameters() {
  std::vector<Parameter*> out;
  for (auto& layer : layers_) {
    for (Parameter* p : layer->parameters()) out.push_back(p);
  }
  return out;
}

std::vector<Buffer> SequentialLayer::buffers() {
  std::vector<Buffer> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    for (Buffer b : layers_[i]->buffers()) {
      b.name = std::to_string(i) + "." + b.name;
      out.push_back(b);
    }
  }
  return out;
}

GradNetLayer::GradNetLayer(std::string kind, LayerPtr early, LayerPtr late,
                           std::optional<double> fixed_gate)
    : Layer(early ? early->input_shape() : Shape{}),
      kind_(std::move(kind)),
      early_(std::move(early)),
      late_(std::move(late)) {
  if (!early_ || !late_) throw ConfigError(kind_ + ": both GradNet branches are required");
  if (early_->input_shape() != late_->input_shape() ||
      early_->output_shape() != late_->output_shape()) {
    throw ConfigError(kind_ + ": early branch maps " + to_string(early_->input_shape()) + " -> " +
                      to_string(early_->output_shape()) + " but late branch maps " +
                      to_string(late_->input_shape()) + " -> " +
                      to_string(late_->output_shape()));
  }
  if (fixed_gate) fixed_gate_ = GateValue(*fixed_gate);
  for (Parameter* p : early_->parameters()) p->name = "early." + p->name;
  for (Parameter* p : late_->parameters()) p->name = "late." + p->name;
  output_shape_ = early_->output_shape();
}

Var GradNetLayer::forward(Var x, ForwardContext& ctx) {
  const GateValue g = fixed_gate_ ? *fixed_gate_ : ctx.gate();
  // The inactive branch is skipped at the endpoints.
  if (g.at_early()) return early_->forward(x, ctx);
  if (g.at_late()) return late_->forward(x, ctx);
  Var e = early_->forward(x, ctx);
  Var l = late_->forward(x, ctx);
  return interpolate(e, l, g);
}

std::vector<Parameter*> GradNetLayer::parameters() {
  std::vector<Parameter*> out = early_->parameters();
  for (Parameter* p : late_->parameters()) out.push_back(p);
  return out;
}

std::vector<Buffer> GradNetLayer::buffers() {
  std::vector<Buffer> out;
  for (Buffer b : early_->buffers()) {
    b.name = "early." + b.name;
    out.push_back(b);
  }
  for (Buffer b : late_->buffers()) {
    b.name = "late." + b.name;
    out.push_back(b);
  }
  return out;
}

}  // namespace gradnet
