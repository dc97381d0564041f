#include <algorithm>
#include <cmath>
#include <vector>

#include "gradnet/errors.hpp"
#include "gradnet/layers.hpp"
#include "gradnet/model.hpp"
#include "helpers.hpp"

using namespace gradnet;
using testing::check_values;
using testing::off_kink_tensor;
using testing::random_tensor;

namespace {

LayerSpec spec_of(const std::string& type) {
  LayerSpec s;
  s.type = type;
  return s;
}

Tensor run_layer(Layer& layer, const Tensor& x, Mode mode, double g, std::uint64_t seed = 7) {
  Tape tape;
  ForwardContext ctx(tape, mode, GateValue(g), seed, 1, 2);
  return layer.forward(tape.constant(x), ctx).value();
}

}  // namespace

TEST_SUITE("layers") {

TEST_CASE("interpolate examples") {
  Tape tape;
  Var e = tape.constant(Tensor::vector({2, -4}));
  Var l = tape.constant(Tensor::vector({2, 0}));
  check_values(interpolate(e, l, GateValue(0.25)).value(), {2, -3});
  CHECK(bitwise_equal(interpolate(e, l, GateValue(0)).value(), e.value()));
  CHECK(bitwise_equal(interpolate(e, l, GateValue(1)).value(), l.value()));
  Var wrong = tape.constant(Tensor::vector({1, 2, 3}));
  CHECK_THROWS_AS(interpolate(e, wrong, GateValue(0.5)), ConfigError);
}

TEST_CASE("interpolate gradient is split by the gate") {
  Tape tape;
  Var e = tape.variable(Tensor::vector({1, 2}));
  Var l = tape.variable(Tensor::vector({3, 4}));
  tape.backward(sum(interpolate(e, l, GateValue(0.25))));
  check_values(tape.grad(e), {0.75, 0.75});
  check_values(tape.grad(l), {0.25, 0.25});
}

TEST_CASE("grelu examples") {
  Tape tape;
  check_values(grelu_forward(tape.constant(Tensor::vector({-2})), GateValue(0.25)).value(), {-1.5});
  for (double g : {0.0, 0.3, 1.0}) {
    check_values(grelu_forward(tape.constant(Tensor::vector({3})), GateValue(g)).value(), {3});
  }
  Rng rng{5};
  Var x = tape.constant(random_tensor({50}, rng));
  CHECK(bitwise_equal(grelu_forward(x, GateValue(0)).value(), x.value()));
  CHECK(bitwise_equal(grelu_forward(x, GateValue(1)).value(), relu(x).value()));
}

TEST_CASE("grelu equals leaky relu with slope 1 - g exactly") {
  Rng rng{9};
  Tape tape;
  Var x = tape.constant(random_tensor({200}, rng, -5, 5));
  for (double g : {0.0, 0.3, 0.7, 1.0}) {
    CHECK(bitwise_equal(grelu_forward(x, GateValue(g)).value(), leaky_relu(x, 1.0 - g).value()));
  }
}

TEST_CASE("grelu matches the explicit interpolation of identity and relu") {
  Rng rng{10};
  Tape tape;
  Var x = tape.constant(random_tensor({100}, rng));
  for (double g : {0.1, 0.5, 0.9}) {
    const Tensor folded = grelu_forward(x, GateValue(g)).value();
    const Tensor explicit_form = interpolate(x, relu(x), GateValue(g)).value();
    CHECK(max_abs_diff(folded, explicit_form) < 1e-15);
  }
}

TEST_CASE("inverse grelu examples") {
  Tape tape;
  Var neg = tape.constant(Tensor::vector({-2}));
  check_values(inverse_grelu_forward(neg, GateValue(0)).value(), {2});
  check_values(inverse_grelu_forward(neg, GateValue(0.5)).value(), {1});
  for (double g : {0.0, 0.5, 1.0}) {
    check_values(inverse_grelu_forward(tape.constant(Tensor::vector({4})), GateValue(g)).value(),
                 {4});
  }
  Rng rng{11};
  Var x = tape.constant(random_tensor({40}, rng));
  CHECK(bitwise_equal(inverse_grelu_forward(x, GateValue(0)).value(), abs_value(x).value()));
  CHECK(bitwise_equal(inverse_grelu_forward(x, GateValue(1)).value(), relu(x).value()));
}

TEST_CASE("gradual dropout endpoints and degenerate cases") {
  Rng data{12};
  Tape tape;
  Var x = tape.constant(random_tensor({4, 30}, data));
  Rng rng{1};
  CHECK(bitwise_equal(gradual_dropout_forward(x, {0.5}, GateValue(0), Mode::Train, rng).value(),
                      x.value()));
  for (double g : {0.0, 0.4, 1.0}) {
    CHECK(bitwise_equal(gradual_dropout_forward(x, {0.0}, GateValue(g), Mode::Train, rng).value(),
                        x.value()));
    for (double p : {0.1, 0.5, 0.9}) {
      CHECK(bitwise_equal(
          gradual_dropout_forward(x, {p}, GateValue(g), Mode::Eval, rng).value(), x.value()));
    }
  }
  CHECK_THROWS_AS(gradual_dropout_forward(x, {1.0}, GateValue(0.5), Mode::Train, rng), ConfigError);
  CHECK_THROWS_AS(DropoutSpec{-0.1}.validate(), ConfigError);
}

TEST_CASE("gradual dropout at g = 1 has expectation x") {
  Tape tape;
  Var ones = tape.constant(Tensor(Shape{1000}, 1.0));
  Rng rng{2024};
  const int masks = 10000;
  double total = 0.0;
  for (int m = 0; m < masks; ++m) {
    const Tensor out = gradual_dropout_forward(ones, {0.5}, GateValue(1), Mode::Train, rng).value();
    for (double v : out.data()) total += v;
  }
  const double n = 1000.0 * masks;
  const double mean = total / n;
  // each element is 0 or 2 with equal probability, so the per-element sd is 1
  const double se = 1.0 / std::sqrt(n);
  CHECK(std::abs(mean - 1.0) < 3.0 * se);
}

TEST_CASE("gradual dropout interpolates output, not rate") {
  Tape tape;
  Var x = tape.constant(Tensor(Shape{200}, 1.0));
  Rng a{3}, b{3};
  const Tensor mixed = gradual_dropout_forward(x, {0.5}, GateValue(0.25), Mode::Train, a).value();
  const Tensor dropped = dropout_forward(x, {0.5}, Mode::Train, b).value();
  for (std::size_t i = 0; i < mixed.size(); ++i) {
    CHECK(mixed[i] == doctest::Approx(0.75 + 0.25 * dropped[i]).epsilon(1e-14));
  }
}

TEST_CASE("gradual pool examples") {
  Tape tape;
  Var w = tape.constant(Tensor(Shape{1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4}));
  check_values(gradual_pool_forward(w, 2, 2, GateValue(0.5)).value(), {3.25});
  Var c = tape.constant(Tensor(Shape{2, 3, 4, 4}, 1.7));
  for (double g : {0.0, 0.3, 1.0}) {
    for (double v : gradual_pool_forward(c, 2, 2, GateValue(g)).value().data()) {
      CHECK(std::abs(v - 1.7) < 1e-15);
    }
  }
  CHECK_THROWS_AS(gradual_pool_forward(tape.constant(Tensor(Shape{1, 1, 2, 2})), 3, 1,
                                       GateValue(0.5)),
                  DimensionError);
}

TEST_CASE("gradual pool lies between mean and max pooling") {
  Rng rng{13};
  for (int trial = 0; trial < 20; ++trial) {
    Tape tape;
    Var x = tape.constant(random_tensor({2, 3, 6, 6}, rng, -3, 3));
    const Tensor lo = pool2d(x, 2, 2, PoolKind::Mean).value();
    const Tensor hi = pool2d(x, 2, 2, PoolKind::Max).value();
    for (double g : {0.0, 0.13, 0.5, 0.87, 1.0}) {
      const Tensor out = gradual_pool_forward(x, 2, 2, GateValue(g)).value();
      for (std::size_t i = 0; i < out.size(); ++i) {
        CHECK(out[i] >= lo[i] - 1e-12);
        CHECK(out[i] <= hi[i] + 1e-12);
      }
    }
  }
}

TEST_CASE("batchnorm two-point examples") {
  Tape tape;
  Var x = tape.constant(Tensor::matrix({{1}, {3}}));
  BatchNormStats s1(1, 0.9, 1e-12);
  check_values(batchnorm_forward(x, tape.constant(Tensor::vector({1})),
                                 tape.constant(Tensor::vector({0})), s1, Mode::Train)
                   .value(),
               {-1, 1}, 1e-9);
  BatchNormStats s2(1, 0.9, 1e-12);
  check_values(batchnorm_forward(x, tape.constant(Tensor::vector({2})),
                                 tape.constant(Tensor::vector({5})), s2, Mode::Train)
                   .value(),
               {3, 7}, 1e-9);
}

TEST_CASE("batchnorm running statistics") {
  Tape tape;
  Var x = tape.constant(Tensor::matrix({{1}, {3}}));
  BatchNormStats stats(1);
  batchnorm_forward(x, tape.constant(Tensor::vector({1})), tape.constant(Tensor::vector({0})),
                    stats, Mode::Train);
  CHECK(stats.running_mean[0] == doctest::Approx(0.9 * 0 + 0.1 * 2));
  CHECK(stats.running_var[0] == doctest::Approx(0.9 * 1 + 0.1 * 1));
  const Tensor eval = batchnorm_forward(x, tape.constant(Tensor::vector({1})),
                                        tape.constant(Tensor::vector({0})), stats, Mode::Eval)
                          .value();
  CHECK(eval[0] == doctest::Approx((1 - 0.2) / std::sqrt(1.0 + 1e-5)));
}

TEST_CASE("batchnorm train output is standardized") {
  Rng rng{14};
  Tape tape;
  Var x = tape.constant(random_tensor({64, 5}, rng, -4, 9));
  BatchNormStats stats(5);
  const Tensor out = batchnorm_forward(x, tape.constant(Tensor(Shape{5}, 1.0)),
                                       tape.constant(Tensor(Shape{5}, 0.0)), stats, Mode::Train)
                         .value();
  for (std::size_t f = 0; f < 5; ++f) {
    double mean = 0, var = 0;
    for (std::size_t n = 0; n < 64; ++n) mean += out[n * 5 + f];
    mean /= 64;
    for (std::size_t n = 0; n < 64; ++n) var += (out[n * 5 + f] - mean) * (out[n * 5 + f] - mean);
    var /= 64;
    CHECK(std::abs(mean) < 1e-10);
    CHECK(std::abs(var - 1.0) < 1e-3);
  }
}

TEST_CASE("batchnorm rejects single-sample training batches") {
  Tape tape;
  BatchNormStats stats(2);
  CHECK_THROWS_AS(batchnorm_forward(tape.constant(Tensor::matrix({{1, 2}})),
                                    tape.constant(Tensor(Shape{2}, 1.0)),
                                    tape.constant(Tensor(Shape{2}, 0.0)), stats, Mode::Train),
                  ContractError);
  CHECK_THROWS_AS(BatchNormStats(2, 0.9, 0.0), ConfigError);
}

TEST_CASE("gradual batchnorm examples") {
  Tape tape;
  Var x = tape.constant(Tensor::matrix({{1}, {3}}));
  Var gamma = tape.constant(Tensor::vector({1}));
  Var beta = tape.constant(Tensor::vector({0}));
  BatchNormStats s(1, 0.9, 1e-12);
  check_values(gradual_bn_forward(x, gamma, beta, s, GateValue(0.5), Mode::Train).value(), {0, 2},
               1e-9);

  BatchNormStats untouched(1);
  Var single = tape.constant(Tensor::matrix({{4.5}}));
  CHECK(bitwise_equal(
      gradual_bn_forward(single, gamma, beta, untouched, GateValue(1), Mode::Train).value(),
      single.value()));
  CHECK(untouched.running_mean[0] == 0.0);
  CHECK(untouched.running_var[0] == 1.0);

  BatchNormStats a(1), b(1);
  CHECK(bitwise_equal(gradual_bn_forward(x, gamma, beta, a, GateValue(0), Mode::Train).value(),
                      batchnorm_forward(x, gamma, beta, b, Mode::Train).value()));
}

TEST_CASE("gradual batchnorm at g = 1 is batch independent") {
  Rng rng{15};
  const Tensor data = random_tensor({16, 6}, rng);
  BuildOptions opts;
  Rng init{1};
  LayerPtr layer = make_layer(spec_of("gradual_batchnorm"), Shape{6}, opts, init);
  const Tensor full = run_layer(*layer, data, Mode::Eval, 1.0);
  for (std::size_t n = 0; n < 16; ++n) {
    Tensor one(Shape{1, 6});
    for (std::size_t f = 0; f < 6; ++f) one.mutable_data()[f] = data[n * 6 + f];
    const Tensor single = run_layer(*layer, one, Mode::Train, 1.0);
    for (std::size_t f = 0; f < 6; ++f) CHECK(std::abs(single[f] - full[n * 6 + f]) < 1e-12);
  }
}

TEST_CASE("gradual conv endpoints and identity kernel") {
  Rng rng{16};
  Tape tape;
  Var x = tape.constant(random_tensor({2, 3, 5, 5}, rng));
  Var k = tape.constant(random_tensor({3, 3, 3, 3}, rng));
  CHECK(bitwise_equal(gradual_conv_forward(x, k, GateValue(0)).value(), x.value()));
  CHECK(bitwise_equal(gradual_conv_forward(x, k, GateValue(1)).value(),
                      conv2d(x, k, 1, Padding::Same).value()));
  Tensor eye(Shape{3, 3, 3, 3});
  for (std::size_t c = 0; c < 3; ++c) eye.mutable_data()[((c * 3 + c) * 3 + 1) * 3 + 1] = 1.0;
  Var ik = tape.constant(eye);
  for (double g : {0.0, 0.25, 0.5, 1.0}) {
    CHECK(max_abs_diff(gradual_conv_forward(x, ik, GateValue(g)).value(), x.value()) < 1e-14);
  }
  CHECK_THROWS_AS(gradual_conv_forward(x, tape.constant(Tensor(Shape{4, 3, 3, 3})), GateValue(0.5)),
                  ConfigError);
}

TEST_CASE("gradual conv rejects channel changes at build time") {
  LayerSpec s = spec_of("gradual_conv");
  s.kernel = 3;
  s.filters = 8;
  Rng init{1};
  CHECK_THROWS_AS(make_layer(s, Shape{4, 6, 6}, {}, init), ConfigError);
}

TEST_CASE("gradual nin endpoints and identity 1x1 kernel") {
  Rng rng{17};
  Tape tape;
  Var x = tape.constant(random_tensor({2, 2, 5, 5}, rng));
  Var k = tape.constant(random_tensor({3, 2, 3, 3}, rng));
  Var k1 = tape.constant(random_tensor({3, 3, 1, 1}, rng));
  const Tensor c = conv2d(x, k, 1, Padding::Same).value();
  CHECK(bitwise_equal(gradual_nin_forward(x, k, k1, GateValue(0)).value(), c));

  Var pos_x = tape.constant(random_tensor({2, 2, 5, 5}, rng, 0, 1));
  Var pos_k = tape.constant(random_tensor({3, 2, 3, 3}, rng, 0, 1));
  Tensor eye(Shape{3, 3, 1, 1});
  for (std::size_t f = 0; f < 3; ++f) eye.mutable_data()[f * 3 + f] = 1.0;
  Var ik1 = tape.constant(eye);
  const Tensor pc = conv2d(pos_x, pos_k, 1, Padding::Same).value();
  for (double g : {0.0, 0.3, 0.6, 1.0}) {
    CHECK(max_abs_diff(gradual_nin_forward(pos_x, pos_k, ik1, GateValue(g)).value(), pc) < 1e-14);
  }
}

TEST_CASE("gradual nin gradient check") {
  Rng rng{18};
  auto c = op_check("gradual_nin",
                    {{"x", random_tensor({2, 2, 4, 4}, rng)},
                     {"k", random_tensor({3, 2, 3, 3}, rng)},
                     {"k1", random_tensor({3, 3, 1, 1}, rng)}},
                    [](const auto& v) { return gradual_nin_forward(v[0], v[1], v[2], GateValue(0.4)); });
  CHECK(testing::gradcheck_error(c) < 1e-4);
}

TEST_CASE("dense examples") {
  Tape tape;
  Var x = tape.constant(Tensor::matrix({{1, 2}}));
  check_values(dense_forward(x, tape.constant(Tensor::matrix({{1}, {1}})),
                             tape.constant(Tensor::vector({3})))
                   .value(),
               {6});
  check_values(dense_forward(x, tape.constant(Tensor::matrix({{1, 0}, {0, 1}})),
                             tape.constant(Tensor::vector({0, 0})))
                   .value(),
               {1, 2});
  CHECK_THROWS_AS(dense_forward(x, tape.constant(Tensor(Shape{3, 1})),
                                tape.constant(Tensor::vector({0}))),
                  DimensionError);
}

TEST_CASE("dense gradient check") {
  Rng rng{19};
  auto c = op_check("dense",
                    {{"x", random_tensor({4, 5}, rng)},
                     {"w", random_tensor({5, 3}, rng)},
                     {"b", random_tensor({3}, rng)}},
                    [](const auto& v) { return dense_forward(v[0], v[1], v[2]); });
  CHECK(testing::gradcheck_error(c) < 1e-6);
}

TEST_CASE("gradnet layers are exact at their endpoints") {
  Rng rng{20};
  struct Item {
    std::string type;
    Shape in;
  };
  const std::vector<Item> items = {
      {"gradual_dropout", {12}},   {"gradual_pool", {2, 4, 4}},     {"mixed_pool_const", {2, 4, 4}},
      {"gradual_batchnorm", {6}},  {"gradual_conv", {2, 5, 5}},     {"gradual_nin", {2, 5, 5}},
  };
  for (const auto& item : items) {
    CAPTURE(item.type);
    LayerSpec s = spec_of(item.type);
    s.p = 0.4;
    s.window = 2;
    s.kernel = 3;
    s.filters = 2;
    s.fixed_g = 0.5;
    Rng init{3};
    LayerPtr layer = make_layer(s, item.in, {}, init);
    auto* gn = dynamic_cast<GradNetLayer*>(layer.get());
    if (!gn) {
      auto* seq = dynamic_cast<SequentialLayer*>(layer.get());
      REQUIRE(seq != nullptr);
      continue;  // nin: the conv stem is shared, the combinator is checked below
    }
    Shape batch{3};
    batch.insert(batch.end(), item.in.begin(), item.in.end());
    const Tensor x = random_tensor(batch, rng);
    for (Mode mode : {Mode::Train, Mode::Eval}) {
      if (item.type == "mixed_pool_const") continue;
      CHECK(max_abs_diff(run_layer(*layer, x, mode, 0.0), run_layer(gn->early(), x, mode, 0.0)) <
            1e-12);
      CHECK(max_abs_diff(run_layer(*layer, x, mode, 1.0), run_layer(gn->late(), x, mode, 1.0)) <
            1e-12);
    }
  }
}

TEST_CASE("gradual nin combinator is exact at its endpoints") {
  LayerSpec s = spec_of("gradual_nin");
  s.kernel = 3;
  s.filters = 3;
  Rng init{4};
  LayerPtr layer = make_layer(s, Shape{2, 5, 5}, {}, init);
  auto* seq = dynamic_cast<SequentialLayer*>(layer.get());
  REQUIRE(seq != nullptr);
  CHECK(seq->kind() == "gradual_nin");
  auto* gn = dynamic_cast<GradNetLayer*>(seq->layers()[1].get());
  REQUIRE(gn != nullptr);
  Rng rng{21};
  const Tensor c = random_tensor({2, 3, 5, 5}, rng);
  CHECK(max_abs_diff(run_layer(*gn, c, Mode::Train, 0.0), c) < 1e-12);
  CHECK(max_abs_diff(run_layer(*gn, c, Mode::Train, 1.0), run_layer(gn->late(), c, Mode::Train, 1.0)) <
        1e-12);
}

TEST_CASE("gradual dropout layer replays the mask of its late branch") {
  LayerSpec s = spec_of("gradual_dropout");
  s.p = 0.5;
  Rng init{5};
  LayerPtr layer = make_layer(s, Shape{40}, {}, init);
  auto* gn = dynamic_cast<GradNetLayer*>(layer.get());
  REQUIRE(gn != nullptr);
  Rng rng{22};
  const Tensor x = random_tensor({4, 40}, rng);
  const Tensor at_late = run_layer(*layer, x, Mode::Train, 1.0, 99);
  const Tensor late_only = run_layer(gn->late(), x, Mode::Train, 1.0, 99);
  CHECK(bitwise_equal(at_late, late_only));
  CHECK_FALSE(bitwise_equal(at_late, x));
}

TEST_CASE("layer output shapes hold in both modes and for all g") {
  Rng rng{23};
  const std::vector<std::pair<std::string, Shape>> items = {
      {"dense", {2, 4, 4}},         {"relu", {7}},           {"leaky_relu", {7}},
      {"grelu", {7}},               {"inverse_grelu", {7}},  {"dropout", {7}},
      {"gradual_dropout", {7}},     {"mean_pool", {2, 4, 4}}, {"max_pool", {2, 4, 4}},
      {"gradual_pool", {2, 4, 4}},  {"mixed_pool_const", {2, 4, 4}}, {"batchnorm", {2, 4, 4}},
      {"gradual_batchnorm", {7}},   {"conv", {2, 5, 5}},     {"gradual_conv", {2, 5, 5}},
      {"gradual_nin", {2, 5, 5}},   {"flatten", {2, 3, 3}},
  };
  for (const auto& [type, in] : items) {
    CAPTURE(type);
    LayerSpec s = spec_of(type);
    s.units = 5;
    s.p = 0.3;
    s.window = 2;
    s.kernel = 3;
    s.filters = 2;
    Rng init{6};
    LayerPtr layer = make_layer(s, in, {}, init);
    Shape batch{4};
    batch.insert(batch.end(), in.begin(), in.end());
    Shape expected{4};
    expected.insert(expected.end(), layer->output_shape().begin(), layer->output_shape().end());
    const Tensor x = random_tensor(batch, rng);
    for (Mode mode : {Mode::Train, Mode::Eval}) {
      for (double g : {0.0, 0.5, 1.0}) CHECK(run_layer(*layer, x, mode, g).shape() == expected);
    }
  }
}

TEST_CASE("combinator parameters receive gradients inside the ramp") {
  LayerSpec s = spec_of("gradual_conv");
  s.kernel = 3;
  Rng init{7};
  LayerPtr layer = make_layer(s, Shape{2, 4, 4}, {}, init);
  Rng rng{24};
  Tape tape;
  ForwardContext ctx(tape, Mode::Train, GateValue(0.5));
  Var out = layer->forward(tape.constant(random_tensor({2, 2, 4, 4}, rng)), ctx);
  tape.backward(sum(mul(out, out)));
  REQUIRE(ctx.bindings().size() == 1);
  const Tensor grad = tape.grad(ctx.bindings()[0].second);
  double norm = 0;
  for (double v : grad.data()) norm += v * v;
  CHECK(norm > 0.0);
}

TEST_CASE("a dense and grelu stack at g = 0 collapses to one affine map") {
  ModelConfig mc;
  LayerSpec dense = spec_of("dense");
  dense.units = 9;
  mc.block = {dense, spec_of("grelu")};
  mc.depth = 4;
  LayerSpec head = spec_of("dense");
  head.units = 3;
  mc.head = {head};
  Model model = build_model(mc, Shape{6}, 11);
  Rng rng{25};
  for (Parameter* p : model.parameters()) p->value = random_tensor(p->value.shape(), rng);

  Rng data{26};
  const Tensor x = random_tensor({5, 6}, data);
  Tape tape;
  ForwardContext ctx(tape, Mode::Eval, GateValue(0));
  const Tensor out = model.forward(tape.constant(x), ctx).value();

  // multiply the layers out in long double
  std::vector<std::vector<long double>> w(6, std::vector<long double>(6, 0));
  for (std::size_t i = 0; i < 6; ++i) w[i][i] = 1;
  std::vector<long double> b(6, 0);
  for (Parameter* p : model.parameters()) {
    if (p->value.rank() == 2) {
      const std::size_t in = p->value.dim(0), outd = p->value.dim(1);
      std::vector<std::vector<long double>> nw(6, std::vector<long double>(outd, 0));
      std::vector<long double> nb(outd, 0);
      for (std::size_t r = 0; r < 6; ++r) {
        for (std::size_t c = 0; c < outd; ++c) {
          for (std::size_t k = 0; k < in; ++k) nw[r][c] += w[r][k] * p->value[k * outd + c];
        }
      }
      for (std::size_t c = 0; c < outd; ++c) {
        for (std::size_t k = 0; k < in; ++k) nb[c] += b[k] * p->value[k * outd + c];
      }
      w = nw;
      b = nb;
    } else {
      for (std::size_t c = 0; c < b.size(); ++c) b[c] += p->value[c];
    }
  }
  for (std::size_t n = 0; n < 5; ++n) {
    for (std::size_t c = 0; c < 3; ++c) {
      long double ref = b[c];
      for (std::size_t k = 0; k < 6; ++k) ref += x[n * 6 + k] * w[k][c];
      const double got = out[n * 3 + c];
      CHECK(std::abs(got - static_cast<double>(ref)) <=
            1e-6 * std::max(1.0, std::abs(static_cast<double>(ref))));
    }
  }
}

TEST_CASE("dropout draws are keyed by layer, epoch and batch") {
  LayerSpec s = spec_of("dropout");
  s.p = 0.5;
  Rng init{8};
  LayerPtr layer = make_layer(s, Shape{64}, {}, init);
  const Tensor x(Shape{2, 64}, 1.0);
  auto draw = [&](std::uint64_t epoch, std::uint64_t batch) {
    Tape tape;
    ForwardContext ctx(tape, Mode::Train, GateValue(1), 5, epoch, batch);
    return layer->forward(tape.constant(x), ctx).value();
  };
  CHECK(bitwise_equal(draw(1, 1), draw(1, 1)));
  CHECK_FALSE(bitwise_equal(draw(1, 1), draw(1, 2)));
  CHECK_FALSE(bitwise_equal(draw(1, 1), draw(2, 1)));
}

}  // TEST_SUITE
