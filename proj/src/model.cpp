#include "gradnet/model.hpp"

#include <sstream>

#include "gradnet/errors.hpp"

namespace gradnet {

namespace {

Padding parse_padding(const std::optional<std::string>& p, Padding fallback) {
  if (!p) return fallback;
  return *p == "valid" ? Padding::Valid : Padding::Same;
}

std::vector<LayerPtr> layer_vec(LayerPtr a, LayerPtr b) {
  std::vector<LayerPtr> v;
  v.push_back(std::move(a));
  v.push_back(std::move(b));
  return v;
}

}  // namespace

LayerPtr make_layer(const LayerSpec& spec, const Shape& in, const BuildOptions& options,
                    Rng& init) {
  const std::string& t = spec.type;
  const double momentum = spec.momentum.value_or(options.bn_momentum);
  const double eps = spec.eps.value_or(options.bn_eps);

  if (t == "dense") return std::make_unique<DenseLayer>(in, *spec.units, options.init_gain, init);
  if (t == "flatten") return std::make_unique<FlattenLayer>(in);
  if (t == "relu") return std::make_unique<ActivationLayer>(in, Activation::Relu);
  if (t == "leaky_relu") {
    return std::make_unique<ActivationLayer>(in, Activation::LeakyRelu, spec.slope.value_or(0.01));
  }
  if (t == "grelu") return std::make_unique<GReLULayer>(in);
  if (t == "inverse_grelu") return std::make_unique<InverseGReLULayer>(in);
  if (t == "dropout") return std::make_unique<DropoutLayer>(in, DropoutSpec{*spec.p});
  if (t == "gradual_dropout") {
    return std::make_unique<GradNetLayer>(t, std::make_unique<IdentityLayer>(in),
                                          std::make_unique<DropoutLayer>(in, DropoutSpec{*spec.p}));
  }
  if (t == "mean_pool" || t == "max_pool") {
    return std::make_unique<PoolLayer>(in, t == "mean_pool" ? PoolKind::Mean : PoolKind::Max,
                                       *spec.window, spec.stride.value_or(*spec.window));
  }
  if (t == "gradual_pool" || t == "mixed_pool_const") {
    const std::size_t stride = spec.stride.value_or(*spec.window);
    std::optional<double> fixed;
    if (t == "mixed_pool_const") fixed = spec.fixed_g.value_or(0.5);
    return std::make_unique<GradNetLayer>(
        t, std::make_unique<PoolLayer>(in, PoolKind::Mean, *spec.window, stride),
        std::make_unique<PoolLayer>(in, PoolKind::Max, *spec.window, stride), fixed);
  }
  if (t == "batchnorm") return std::make_unique<BatchNormLayer>(in, momentum, eps);
  if (t == "gradual_batchnorm") {
    return std::make_unique<GradNetLayer>(t, std::make_unique<BatchNormLayer>(in, momentum, eps),
                                          std::make_unique<IdentityLayer>(in));
  }
  if (t == "conv") {
    return std::make_unique<ConvLayer>(in, *spec.filters, *spec.kernel, spec.stride.value_or(1),
                                       parse_padding(spec.padding, Padding::Same),
                                       options.init_gain, init);
  }
  if (t == "gradual_conv") {
    if (in.size() != 3) {
      throw DimensionError("gradual_conv expects C x H x W input, got " + to_string(in));
    }
    const std::size_t channels = in[0];
    if (spec.filters && *spec.filters != channels) {
      throw ConfigError("gradual_conv must keep the channel count (" + std::to_string(channels) +
                        "), got filters = " + std::to_string(*spec.filters));
    }
    return std::make_unique<GradNetLayer>(
        t, std::make_unique<IdentityLayer>(in),
        std::make_unique<ConvLayer>(in, channels, *spec.kernel, 1, Padding::Same,
                                    options.init_gain, init));
  }
  if (t == "gradual_nin") {
    auto conv = std::make_unique<ConvLayer>(in, *spec.filters, *spec.kernel, 1,
                                            parse_padding(spec.padding, Padding::Same),
                                            options.init_gain, init);
    const Shape mid = conv->output_shape();
    auto micro = std::make_unique<SequentialLayer>(layer_vec(
        std::make_unique<ActivationLayer>(mid, Activation::Relu),
        std::make_unique<ConvLayer>(mid, *spec.filters, 1, 1, Padding::Valid, options.init_gain,
                                    init)));
    auto combinator = std::make_unique<GradNetLayer>(t, std::make_unique<IdentityLayer>(mid),
                                                     std::move(micro));
    return std::make_unique<SequentialLayer>(layer_vec(std::move(conv), std::move(combinator)), t);
  }
  throw ConfigError("unknown layer type '" + t + "'");
}

Model::Model(Shape input_shape, std::vector<LayerPtr> layers)
    : input_shape_(std::move(input_shape)), layers_(std::move(layers)) {
  if (layers_.empty()) throw ConfigError("model has no layers");
  output_shape_ = layers_.back()->output_shape();
}

Var Model::forward(Var x, ForwardContext& ctx) {
  Shape expected{x.shape().empty() ? 0 : x.shape()[0]};
  expected.insert(expected.end(), input_shape_.begin(), input_shape_.end());
  if (x.shape() != expected) {
    throw DimensionError("model expects input N x " + to_string(input_shape_) + ", got " +
                         to_string(x.shape()));
  }
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    ctx.set_layer_index(i);
    x = layers_[i]->forward(x, ctx);
  }
  return x;
}

std::vector<Parameter*> Model::parameters() {
  std::vector<Parameter*> out;
  for (auto& layer : layers_) {
    for (Parameter* p : layer->parameters()) out.push_back(p);
  }
  return out;
}

std::vector<Buffer> Model::buffers() {
  std::vector<Buffer> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    for (Buffer b : layers_[i]->buffers()) {
      b.name = std::to_string(i) + "." + layers_[i]->kind() + "." + b.name;
      out.push_back(b);
    }
  }
  return out;
}

std::size_t Model::parameter_count() {
  std::size_t total = 0;
  for (Parameter* p : parameters()) total += p->value.size();
  return total;
}

std::size_t Model::gradnet_layer_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers_) n += is_gradnet_type(layer->kind()) ? 1 : 0;
  return n;
}

std::vector<Tensor> Model::state() {
  std::vector<Tensor> out;
  for (Parameter* p : parameters()) out.push_back(p->value);
  for (const Buffer& b : buffers()) out.push_back(*b.value);
  return out;
}

void Model::load_state(const std::vector<Tensor>& state) {
  auto params = parameters();
  auto bufs = buffers();
  if (state.size() != params.size() + bufs.size()) {
    throw ContractError("model state has " + std::to_string(state.size()) + " tensors, expected " +
                        std::to_string(params.size() + bufs.size()));
  }
  std::size_t i = 0;
  for (Parameter* p : params) {
    if (state[i].shape() != p->value.shape()) {
      throw DimensionError("state tensor for " + p->name + " has shape " +
                           to_string(state[i].shape()));
    }
    p->value = state[i++];
  }
  for (const Buffer& b : bufs) {
    if (state[i].shape() != b.value->shape()) {
      throw DimensionError("state tensor for " + b.name + " has shape " +
                           to_string(state[i].shape()));
    }
    *b.value = state[i++];
  }
}

std::string Model::summary() {
  std::ostringstream os;
  os << "input " << to_string(input_shape_) << '\n';
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    std::size_t count = 0;
    for (Parameter* p : layers_[i]->parameters()) count += p->value.size();
    os << "  " << i << ' ' << layers_[i]->kind() << " -> " << to_string(layers_[i]->output_shape())
       << "  params " << count << '\n';
  }
  os << "total parameters " << parameter_count() << '\n';
  return os.str();
}

Model build_model(const ModelConfig& config, const Shape& input_shape, std::uint64_t seed,
                  const BuildOptions& options) {
  const auto specs = config.expanded();
  if (specs.empty()) throw ConfigError("model has no layers");
  BuildOptions opts = options;
  opts.init_gain = config.init_gain;
  std::vector<LayerPtr> layers;
  Shape shape = input_shape;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    Rng init{seed, 0x1417, i};
    try {
      layers.push_back(make_layer(specs[i], shape, opts, init));
    } catch (const Error& e) {
      throw ConfigError("layer " + std::to_string(i) + " (" + specs[i].type + ") on input " +
                        to_string(shape) + ": " + e.what());
    }
    shape = layers.back()->output_shape();
    for (Parameter* p : layers.back()->parameters()) {
      p->name = std::to_string(i) + "." + specs[i].type + "." + p->name;
    }
  }
  return Model(input_shape, std::move(layers));
}

Model build_model(const ExperimentConfig& config, const Shape& input_shape) {
  return build_model(config.model, input_shape, config.seed,
                     BuildOptions{config.model.init_gain, config.bn_momentum, config.bn_eps});
}

void validate_config(const ExperimentConfig& config, const Shape& input_shape) {
  Model model = build_model(config, input_shape);
  const Shape& out = model.output_shape();
  if (out.size() != 1 || out[0] != config.dataset.num_classes) {
    throw ConfigError("model output " + to_string(out) + " does not match " +
                      std::to_string(config.dataset.num_classes) + " classes");
  }
}

}  // namespace gradnet
