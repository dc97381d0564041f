#include "gradnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "gradnet/config.hpp"
#include "gradnet/finite_diff.hpp"
#include "gradnet/layers.hpp"
#include "gradnet/model.hpp"
#include "gradnet/ops.hpp"
#include "gradnet/rng.hpp"

namespace gradnet {

namespace {

std::uint64_t name_hash(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) h = (h ^ c) * 1099511628211ull;
  return h;
}

Tensor gaussian(const Shape& shape, Rng& rng, double sd = 1.0) {
  Tensor t(shape);
  for (double& v : t.mutable_data()) v = sd * rng.normal();
  return t;
}

/// Magnitudes in [0.2, 1] with random sign.
Tensor off_kink(const Shape& shape, Rng& rng) {
  Tensor t(shape);
  for (double& v : t.mutable_data()) {
    const double m = 0.2 + 0.8 * rng.uniform();
    v = rng.bernoulli(0.5) ? m : -m;
  }
  return t;
}

/// Distinct values on an evenly spaced grid in [-1, 1], shuffled.
Tensor distinct(const Shape& shape, Rng& rng) {
  const std::size_t n = numel(shape);
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) {
    v[i] = n == 1 ? 0.5 : -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(n - 1);
  }
  for (std::size_t i = n; i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
  return Tensor(shape, std::move(v));
}

long double dot(const Tensor& a, const Tensor& b) {
  long double s = 0.0L;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<long double>(a[i]) * b[i];
  return s;
}

}  // namespace

GradCheckCase op_check(std::string name, std::vector<std::pair<std::string, Tensor>> inputs,
                       std::function<Var(const std::vector<Var>&)> fn, std::optional<double> g) {
  auto storage = std::make_shared<std::vector<Tensor>>();
  GradCheckCase c;
  c.layer = std::move(name);
  c.g = g;
  for (auto& [n, t] : inputs) {
    c.slot_names.push_back(n);
    storage->push_back(std::move(t));
  }
  for (auto& t : *storage) c.slots.push_back(&t);
  c.build = [storage, fn](Tape& tape) {
    std::vector<Var> vars;
    for (const Tensor& t : *storage) vars.push_back(tape.variable(t));
    return std::make_pair(fn(vars), vars);
  };
  c.owner = storage;
  return c;
}

namespace {

struct LayerOwner {
  LayerPtr layer;
  Tensor x;
};

enum class InputKind { OffKink, Distinct, Gaussian };

Tensor make_input(InputKind kind, const Shape& shape, Rng& rng) {
  switch (kind) {
    case InputKind::OffKink: return off_kink(shape, rng);
    case InputKind::Distinct: return distinct(shape, rng);
    case InputKind::Gaussian: return gaussian(shape, rng);
  }
  return Tensor(shape);
}

GradCheckCase layer_case(const std::string& label, const Json& spec_json, Shape sample,
                         std::size_t batch, std::optional<double> g, Mode mode, InputKind input,
                         std::uint64_t seed) {
  Rng rng{seed, name_hash(label), g ? static_cast<std::uint64_t>(*g * 1000) : 7};
  auto owner = std::make_shared<LayerOwner>();
  owner->layer = make_layer(parse_layer_spec(spec_json), sample, BuildOptions{}, rng);
  Shape full{batch};
  full.insert(full.end(), sample.begin(), sample.end());
  owner->x = make_input(input, full, rng);
  for (Parameter* p : owner->layer->parameters()) {
    const bool is_gamma = p->name.ends_with("gamma");
    Tensor t = gaussian(p->value.shape(), rng, 0.5);
    if (is_gamma) {
      for (double& v : t.mutable_data()) v += 1.0;
    }
    p->value = std::move(t);
  }
  for (const Buffer& b : owner->layer->buffers()) {
    const bool is_var = b.name.ends_with("var");
    for (double& v : b.value->mutable_data()) {
      v = is_var ? 0.5 + rng.uniform() : 0.3 * rng.normal();
    }
  }

  GradCheckCase c;
  c.layer = label;
  c.g = g;
  c.slot_names.push_back("x");
  c.slots.push_back(&owner->x);
  const auto params = owner->layer->parameters();
  for (Parameter* p : params) {
    c.slot_names.push_back(p->name);
    c.slots.push_back(&p->value);
  }
  const GateValue gate(g.value_or(0.0));
  c.build = [owner, params, gate, mode](Tape& tape) {
    ForwardContext ctx(tape, mode, gate, 11, 3, 5);
    ctx.track_parameters(true);
    Var x = tape.variable(owner->x);
    Var y = owner->layer->forward(x, ctx);
    std::vector<Var> vars{x};
    for (Parameter* p : params) {
      Var found;
      for (const auto& [bound, v] : ctx.bindings()) {
        if (bound == p) found = v;
      }
      vars.push_back(found);
    }
    return std::make_pair(y, vars);
  };
  c.owner = owner;
  return c;
}

struct ModelOwner {
  std::unique_ptr<Model> model;
  Tensor x;
  std::vector<int> labels;
};

GradCheckCase mlp_case(double g, std::uint64_t seed) {
  const Json spec = Json::array({
      {{"type", "dense"}, {"units", 6}},
      {{"type", "grelu"}},
      {{"type", "gradual_dropout"}, {"p", 0.3}},
      {{"type", "dense"}, {"units", 5}},
      {{"type", "inverse_grelu"}},
      {{"type", "dense"}, {"units", 3}},
  });
  ModelConfig mc;
  for (const auto& j : spec) mc.layers.push_back(parse_layer_spec(j));
  auto owner = std::make_shared<ModelOwner>();
  owner->model = std::make_unique<Model>(build_model(mc, Shape{4}, seed));
  Rng rng{seed, name_hash("mlp"), static_cast<std::uint64_t>(g * 1000)};
  owner->x = gaussian(Shape{5, 4}, rng);
  for (Parameter* p : owner->model->parameters()) p->value = gaussian(p->value.shape(), rng, 0.5);
  owner->labels = {0, 2, 1, 1, 0};

  GradCheckCase c;
  c.layer = "mlp3+softmax_ce";
  c.g = g;
  c.slot_names.push_back("x");
  c.slots.push_back(&owner->x);
  const auto params = owner->model->parameters();
  for (Parameter* p : params) {
    c.slot_names.push_back(p->name);
    c.slots.push_back(&p->value);
  }
  const GateValue gate(g);
  c.build = [owner, params, gate](Tape& tape) {
    ForwardContext ctx(tape, Mode::Train, gate, 5, 1, 2);
    Var x = tape.variable(owner->x);
    Var loss = softmax_cross_entropy(owner->model->forward(x, ctx), owner->labels);
    std::vector<Var> vars{x};
    for (Parameter* p : params) {
      Var found;
      for (const auto& [bound, v] : ctx.bindings()) {
        if (bound == p) found = v;
      }
      vars.push_back(found);
    }
    return std::make_pair(loss, vars);
  };
  c.owner = owner;
  return c;
}

}  // namespace

bool GradCheckReport::passed() const {
  return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed; });
}

std::string GradCheckReport::format() const {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%-28s %5s %12s  %s\n", "layer", "g", "max_rel_err", "status");
  os << line;
  for (const auto& e : entries) {
    const std::string g = e.g ? std::to_string(*e.g).substr(0, 3) : "-";
    std::snprintf(line, sizeof line, "%-28s %5s %12.3e  %s%s\n", e.layer.c_str(), g.c_str(),
                  e.max_rel_error, e.passed ? "ok" : "FAIL",
                  e.passed ? "" : (" (" + e.worst_slot + ")").c_str());
    os << line;
  }
  const auto failed = std::count_if(entries.begin(), entries.end(),
                                    [](const auto& e) { return !e.passed; });
  os << entries.size() << " checks, " << failed << " failed, tolerance " << tolerance << '\n';
  return os.str();
}

GradCheckEntry check_case(const GradCheckCase& c, double tolerance, std::uint64_t seed,
                          double eps) {
  GradCheckEntry entry;
  entry.layer = c.layer;
  entry.g = c.g;

  Tensor weights;
  {
    Tape tape;
    auto built = c.build(tape);
    Rng rng{seed, name_hash(c.layer), 0x5eed};
    weights = gaussian(built.first.shape(), rng);
  }

  Tape tape;
  auto [out, vars] = c.build(tape);
  Var loss = sum(mul(out, tape.constant(weights)));
  tape.backward(loss);

  // Offset by the unperturbed value so the returned double keeps the low
  // bits of the difference.
  const long double base = dot(out.value(), weights);
  auto objective = [&]() {
    Tape t;
    return static_cast<double>(dot(c.build(t).first.value(), weights) - base);
  };

  for (std::size_t s = 0; s < c.slots.size(); ++s) {
    Tensor* slot = c.slots[s];
    const Var& v = vars[s];
    const Tensor analytic =
        v.valid() && v.requires_grad() ? tape.grad(v) : Tensor(slot->shape(), 0.0);
    const Tensor numeric = finite_diff_grad(
        [&](const Tensor& value) {
          Tensor saved = *slot;
          *slot = value;
          const double f = objective();
          *slot = saved;
          return f;
        },
        *slot, eps);
    const double err = max_relative_error(analytic, numeric);
    if (s == 0 || err > entry.max_rel_error || std::isnan(err)) {
      entry.max_rel_error = err;
      entry.worst_slot = c.slot_names[s];
    }
  }
  entry.passed = entry.max_rel_error < tolerance;
  return entry;
}

GradCheckReport run_gradcheck(const std::vector<GradCheckCase>& cases, double tolerance,
                              std::uint64_t seed) {
  GradCheckReport report;
  report.tolerance = tolerance;
  for (const auto& c : cases) report.entries.push_back(check_case(c, tolerance, seed));
  return report;
}

std::vector<GradCheckCase> gradcheck_cases(std::uint64_t seed) {
  std::vector<GradCheckCase> cases;
  Rng rng{seed, 0x0b5};
  auto G = [&](Shape s) { return gaussian(s, rng); };
  auto K = [&](Shape s) { return off_kink(s, rng); };
  auto D = [&](Shape s) { return distinct(s, rng); };

  cases.push_back(op_check("matmul", {{"a", G({3, 4})}, {"b", G({4, 2})}},
                          [](const auto& v) { return matmul(v[0], v[1]); }));
  cases.push_back(op_check("add", {{"a", G({2, 3})}, {"b", G({2, 3})}},
                          [](const auto& v) { return add(v[0], v[1]); }));
  cases.push_back(op_check("sub", {{"a", G({2, 3})}, {"b", G({2, 3})}},
                          [](const auto& v) { return sub(v[0], v[1]); }));
  cases.push_back(op_check("mul", {{"a", G({2, 3})}, {"b", G({2, 3})}},
                          [](const auto& v) { return mul(v[0], v[1]); }));
  cases.push_back(op_check("scale", {{"a", G({2, 3})}},
                          [](const auto& v) { return scale(v[0], -1.7); }));
  cases.push_back(op_check("shift", {{"a", G({2, 3})}},
                          [](const auto& v) { return shift(v[0], 0.3); }));
  cases.push_back(op_check("lerp", {{"a", G({2, 3})}, {"b", G({2, 3})}},
                          [](const auto& v) { return lerp(v[0], v[1], 0.3); }));
  cases.push_back(op_check("add_bias", {{"x", G({3, 4})}, {"b", G({4})}},
                          [](const auto& v) { return add_bias(v[0], v[1]); }));
  cases.push_back(op_check("sum", {{"x", G({2, 3, 2})}},
                          [](const auto& v) { return sum(v[0]); }));
  cases.push_back(op_check("reshape", {{"x", G({2, 6})}},
                          [](const auto& v) { return reshape(v[0], Shape{3, 4}); }));
  cases.push_back(op_check("relu", {{"x", K({3, 4})}}, [](const auto& v) { return relu(v[0]); }));
  cases.push_back(op_check("leaky_relu", {{"x", K({3, 4})}},
                          [](const auto& v) { return leaky_relu(v[0], 0.2); }));
  cases.push_back(op_check("abs", {{"x", K({3, 4})}},
                          [](const auto& v) { return abs_value(v[0]); }));
  cases.push_back(op_check("softmax_cross_entropy", {{"logits", G({4, 5})}}, [](const auto& v) {
    static const int labels[] = {0, 4, 2, 2};
    return softmax_cross_entropy(v[0], labels);
  }));
  struct ConvVariant {
    const char* name;
    std::size_t stride;
    Padding padding;
  };
  for (const ConvVariant cv : {ConvVariant{"conv2d_valid", 1, Padding::Valid},
                               ConvVariant{"conv2d_same", 1, Padding::Same},
                               ConvVariant{"conv2d_same_stride2", 2, Padding::Same},
                               ConvVariant{"conv2d_valid_stride2", 2, Padding::Valid}}) {
    cases.push_back(op_check(cv.name, {{"x", G({2, 2, 5, 6})}, {"k", G({3, 2, 3, 3})}},
                            [cv](const auto& v) { return conv2d(v[0], v[1], cv.stride, cv.padding); }));
  }
  cases.push_back(op_check("mean_pool2d", {{"x", G({2, 2, 4, 6})}},
                          [](const auto& v) { return pool2d(v[0], 2, 2, PoolKind::Mean); }));
  cases.push_back(op_check("max_pool2d", {{"x", D({2, 2, 4, 6})}},
                          [](const auto& v) { return pool2d(v[0], 2, 2, PoolKind::Max); }));
  cases.push_back(op_check("max_pool2d_overlap", {{"x", D({1, 2, 5, 5})}},
                          [](const auto& v) { return pool2d(v[0], 3, 1, PoolKind::Max); }));
  cases.push_back(op_check("batch_norm_train_2d",
                          {{"x", G({5, 3})}, {"gamma", G({3})}, {"beta", G({3})}},
                          [](const auto& v) {
                            return batch_norm_train(v[0], v[1], v[2], 1e-5, nullptr, nullptr);
                          }));
  cases.push_back(op_check("batch_norm_train_4d",
                          {{"x", G({2, 3, 2, 2})}, {"gamma", G({3})}, {"beta", G({3})}},
                          [](const auto& v) {
                            return batch_norm_train(v[0], v[1], v[2], 1e-5, nullptr, nullptr);
                          }));
  {
    Tensor mean = G({3});
    Tensor var(Shape{3}, std::vector<double>{0.7, 1.3, 0.9});
    cases.push_back(op_check("batch_norm_fixed",
                            {{"x", G({2, 3, 2, 2})}, {"gamma", G({3})}, {"beta", G({3})}},
                            [mean, var](const auto& v) {
                              return batch_norm_fixed(v[0], v[1], v[2], mean, var, 1e-5);
                            }));
  }
  for (double g : {0.0, 0.5, 1.0}) {
    cases.push_back(op_check("interpolate", {{"early", G({2, 3})}, {"late", G({2, 3})}},
                            [g](const auto& v) { return interpolate(v[0], v[1], GateValue(g)); },
                            g));
  }

  const Shape flat{6};
  const Shape image{2, 5, 5};
  for (double g : {0.0, 0.5, 1.0}) {
    auto add = [&](const std::string& label, Json spec, Shape sample, Mode mode, InputKind input,
                   std::size_t batch = 4) {
      cases.push_back(layer_case(label, spec, sample, batch, g, mode, input, seed));
    };
    const auto T = Mode::Train;
    const auto E = Mode::Eval;
    add("dense", {{"type", "dense"}, {"units", 4}}, flat, T, InputKind::Gaussian);
    add("dense_from_image", {{"type", "dense"}, {"units", 3}}, image, T, InputKind::Gaussian, 2);
    add("flatten", {{"type", "flatten"}}, image, T, InputKind::Gaussian, 2);
    add("relu", {{"type", "relu"}}, flat, T, InputKind::OffKink);
    add("leaky_relu", {{"type", "leaky_relu"}, {"slope", 0.1}}, flat, T, InputKind::OffKink);
    add("grelu", {{"type", "grelu"}}, flat, T, InputKind::OffKink);
    add("inverse_grelu", {{"type", "inverse_grelu"}}, flat, T, InputKind::OffKink);
    add("dropout", {{"type", "dropout"}, {"p", 0.4}}, flat, T, InputKind::Gaussian);
    add("gradual_dropout", {{"type", "gradual_dropout"}, {"p", 0.4}}, flat, T,
        InputKind::Gaussian);
    add("mean_pool", {{"type", "mean_pool"}, {"window", 2}}, image, T, InputKind::Gaussian, 2);
    add("max_pool", {{"type", "max_pool"}, {"window", 2}}, image, T, InputKind::Distinct, 2);
    add("gradual_pool", {{"type", "gradual_pool"}, {"window", 2}, {"stride", 1}}, image, T,
        InputKind::Distinct, 2);
    add("mixed_pool_const", {{"type", "mixed_pool_const"}, {"window", 2}}, image, T,
        InputKind::Distinct, 2);
    add("batchnorm_train", {{"type", "batchnorm"}}, flat, T, InputKind::Gaussian, 5);
    add("batchnorm_eval", {{"type", "batchnorm"}}, flat, E, InputKind::Gaussian, 5);
    add("batchnorm_train_image", {{"type", "batchnorm"}}, image, T, InputKind::Gaussian, 2);
    add("gradual_batchnorm_train", {{"type", "gradual_batchnorm"}}, image, T,
        InputKind::Gaussian, 2);
    add("gradual_batchnorm_eval", {{"type", "gradual_batchnorm"}}, image, E,
        InputKind::Gaussian, 2);
    add("conv_same", {{"type", "conv"}, {"filters", 3}, {"kernel", 3}}, image, T,
        InputKind::Gaussian, 2);
    add("conv_valid_stride2",
        {{"type", "conv"}, {"filters", 3}, {"kernel", 2}, {"stride", 2}, {"padding", "valid"}},
        image, T, InputKind::Gaussian, 2);
    add("gradual_conv", {{"type", "gradual_conv"}, {"kernel", 3}}, image, T,
        InputKind::Gaussian, 2);
    add("gradual_nin", {{"type", "gradual_nin"}, {"filters", 3}, {"kernel", 3}}, image, T,
        InputKind::Gaussian, 2);
    cases.push_back(mlp_case(g, seed));
  }
  return cases;
}

GradCheckReport gradcheck_suite(double tolerance, std::uint64_t seed) {
  return run_gradcheck(gradcheck_cases(seed), tolerance, seed);
}

}  // namespace gradnet
