// Acceptance gate: runs each criterion and prints one PASS/FAIL line for it.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Dense>

#include "gradnet/config.hpp"
#include "gradnet/data.hpp"
#include "gradnet/errors.hpp"
#include "gradnet/finite_diff.hpp"
#include "gradnet/gradcheck.hpp"
#include "gradnet/model.hpp"
#include "gradnet/optim.hpp"
#include "gradnet/train.hpp"

using namespace gradnet;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

fs::path source_path(const std::string& rel) { return fs::path(GRADNET_SOURCE_DIR) / rel; }

ExperimentConfig load_with(const std::string& config, std::uint64_t seed,
                           const std::vector<std::pair<std::string, std::string>>& sets = {}) {
  Json j = read_json_file(source_path(config));
  for (const auto& [k, v] : sets) apply_override(j, k, v);
  ExperimentConfig c = parse_config(j);
  c.seed = seed;
  c.record_wall_time = false;
  return c;
}

RunHistory run(const std::string& label, const ExperimentConfig& c) {
  const auto t0 = std::chrono::steady_clock::now();
  RunHistory h = train(c);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const double final_val = h.epochs.empty() ? 0.0 : h.epochs.back().val_acc;
  std::fprintf(stderr, "  %s seed %llu: %s best %.4f final %.4f (%zu epochs, %.1fs)\n",
               label.c_str(), static_cast<unsigned long long>(c.seed),
               to_string(h.status).c_str(), h.best_val_acc, final_val, h.epochs.size(), secs);
  return h;
}

Tensor forward(Layer& layer, const Tensor& x, Mode mode, double g) {
  Tape tape;
  ForwardContext ctx(tape, mode, GateValue(g), 17, 3, 5);
  return layer.forward(tape.constant(x), ctx).value();
}

Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(shape);
  for (double& v : t.mutable_data()) v = lo + (hi - lo) * rng.uniform();
  return t;
}

// 1
Outcome gradcheck_criterion() {
  const auto t0 = std::chrono::steady_clock::now();
  const GradCheckReport r = gradcheck_suite(1e-4, 0);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::set<std::string> kinds;
  double worst = 0.0;
  for (const auto& e : r.entries) {
    worst = std::max(worst, e.max_rel_error);
    if (e.g) kinds.insert(e.layer.substr(0, e.layer.find('[')));
  }
  std::size_t covered = 0;
  std::string missing;
  for (const std::string& t : layer_types()) {
    bool found = false;
    for (const std::string& k : kinds) found = found || k.rfind(t, 0) == 0;
    if (found) {
      ++covered;
    } else {
      missing += " " + t;
    }
  }
  for (const auto& e : r.entries) {
    if (!e.passed) std::fprintf(stderr, "  failed: %s\n", e.layer.c_str());
  }
  const bool ok = r.passed() && secs < 120.0 && missing.empty();
  return {ok, std::to_string(r.entries.size()) + " checks, worst rel err " + fmt("%.2e", worst) +
                  ", " + std::to_string(covered) + "/" + std::to_string(layer_types().size()) +
                  " layer kinds" + (missing.empty() ? "" : " (missing" + missing + ")") + ", " +
                  fmt("%.2fs", secs)};
}

// 2
Outcome endpoint_criterion() {
  struct Item {
    std::string type;
    Shape in;
  };
  const std::vector<Item> items = {
      {"grelu", {16}},           {"inverse_grelu", {16}},  {"gradual_dropout", {16}},
      {"gradual_pool", {2, 6, 6}}, {"gradual_batchnorm", {5}}, {"gradual_conv", {2, 5, 5}},
      {"gradual_nin", {2, 5, 5}},
  };
  Rng rng{2024};
  double worst = 0.0;
  for (const auto& item : items) {
    LayerSpec s;
    s.type = item.type;
    s.p = 0.5;
    s.window = 2;
    s.kernel = 3;
    if (item.type == "gradual_nin") s.filters = 3;
    Rng init{7};
    LayerPtr layer = make_layer(s, item.in, {}, init);

    std::function<Tensor(const Tensor&, Mode)> early, late;
    if (item.type == "grelu" || item.type == "inverse_grelu") {
      early = [inv = item.type == "inverse_grelu"](const Tensor& x, Mode) {
        Tape t;
        Var v = t.constant(x);
        return (inv ? abs_value(v) : v).value();
      };
      late = [](const Tensor& x, Mode) {
        Tape t;
        return relu(t.constant(x)).value();
      };
    } else if (item.type == "gradual_nin") {
      auto* seq = dynamic_cast<SequentialLayer*>(layer.get());
      Layer* stem = seq->layers()[0].get();
      auto* gn = dynamic_cast<GradNetLayer*>(seq->layers()[1].get());
      early = [stem](const Tensor& x, Mode m) { return forward(*stem, x, m, 0.0); };
      late = [stem, gn](const Tensor& x, Mode m) {
        return forward(gn->late(), forward(*stem, x, m, 1.0), m, 1.0);
      };
    } else {
      auto* gn = dynamic_cast<GradNetLayer*>(layer.get());
      early = [gn](const Tensor& x, Mode m) { return forward(gn->early(), x, m, 0.0); };
      late = [gn](const Tensor& x, Mode m) { return forward(gn->late(), x, m, 1.0); };
    }
    double item_worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      Shape batch{4};
      batch.insert(batch.end(), item.in.begin(), item.in.end());
      const Tensor x = random_tensor(batch, rng, -2.0, 2.0);
      for (Mode m : {Mode::Train, Mode::Eval}) {
        item_worst = std::max(item_worst, max_abs_diff(forward(*layer, x, m, 0.0), early(x, m)));
        item_worst = std::max(item_worst, max_abs_diff(forward(*layer, x, m, 1.0), late(x, m)));
      }
    }
    std::fprintf(stderr, "  %s: max abs diff %.3g\n", item.type.c_str(), item_worst);
    worst = std::max(worst, item_worst);
  }
  return {worst < 1e-12, "7 instantiations x 100 inputs x 2 modes, max abs diff " +
                             fmt("%.3g", worst)};
}

// 3
Outcome collapse_criterion() {
  ModelConfig mc;
  LayerSpec dense{"dense"};
  dense.units = 32;
  mc.block = {dense, LayerSpec{"grelu"}};
  mc.depth = 10;
  LayerSpec head{"dense"};
  head.units = 10;
  mc.head = {head};
  const std::size_t in_dim = 20;
  Model model = build_model(mc, Shape{in_dim}, 3);
  Rng rng{4};
  for (Parameter* p : model.parameters()) {
    if (p->value.rank() == 1) p->value = random_tensor(p->value.shape(), rng);
  }
  const Tensor x = random_tensor({8, in_dim}, rng);
  Tape tape;
  ForwardContext ctx(tape, Mode::Eval, GateValue(0));
  const Tensor out = model.forward(tape.constant(x), ctx).value();

  using Mat = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
  Mat w = Mat::Identity(in_dim, in_dim);
  Mat b = Mat::Zero(1, in_dim);
  for (Parameter* p : model.parameters()) {
    if (p->value.rank() == 2) {
      Mat m(p->value.dim(0), p->value.dim(1));
      for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = p->value[r * m.cols() + c];
      }
      w = w * m;
      b = b * m;
    } else {
      for (Eigen::Index c = 0; c < b.cols(); ++c) b(0, c) += p->value[c];
    }
  }
  Mat xm(8, in_dim);
  for (Eigen::Index r = 0; r < 8; ++r) {
    for (Eigen::Index c = 0; c < static_cast<Eigen::Index>(in_dim); ++c) xm(r, c) = x[r * in_dim + c];
  }
  const Mat ref = (xm * w).rowwise() + b.row(0);
  Tensor reft(out.shape());
  for (Eigen::Index r = 0; r < ref.rows(); ++r) {
    for (Eigen::Index c = 0; c < ref.cols(); ++c) {
      reft.mutable_data()[r * ref.cols() + c] = static_cast<double>(ref(r, c));
    }
  }
  const double err = max_relative_error(out, reft);
  return {err < 1e-6, "depth 10 width 32, max rel err " + fmt("%.3g", err)};
}

// 4
Outcome depth_criterion(int seeds) {
  int grelu_ok = 0, relu_ok = 0;
  for (int s = 1; s <= seeds; ++s) {
    const RunHistory g = run("grelu", load_with("configs/mnist_depth_grelu.json", s,
                                                {{"schedule.mode", "step"}}));
    grelu_ok += (!g.diverged() && g.best_val_acc >= 0.70) ? 1 : 0;
    const RunHistory r = run("relu", load_with("configs/mnist_depth_relu.json", s));
    relu_ok += r.best_val_acc <= 0.30 ? 1 : 0;
  }
  const RunHistory deep = run("grelu depth 200",
                              load_with("configs/mnist_depth_grelu.json", 1,
                                        {{"schedule.mode", "step"}, {"model.depth", "200"}}));
  const int need = (4 * seeds + 4) / 5;
  const bool ok = grelu_ok >= need && relu_ok >= need;
  return {ok, "grelu >= 0.70 in " + std::to_string(grelu_ok) + "/" + std::to_string(seeds) +
                  ", relu <= 0.30 in " + std::to_string(relu_ok) + "/" + std::to_string(seeds) +
                  "; depth 200 (non-blocking): " + to_string(deep.status) + " best " +
                  fmt("%.4f", deep.best_val_acc)};
}

// 5
Outcome dropout_criterion(int seeds) {
  int static_ok = 0, gradual_ok = 0, trend_ok = 0;
  for (int s = 1; s <= seeds; ++s) {
    const RunHistory st = run("static p=0.9", load_with("configs/mnist_dropout_static.json", s));
    const RunHistory gr = run("gradual p=0.9", load_with("configs/mnist_dropout_gradual.json", s));
    static_ok += st.epochs.back().val_acc <= 0.20 ? 1 : 0;
    gradual_ok += gr.best_val_acc >= 0.85 ? 1 : 0;
    const RunHistory st5 = run("static p=0.5", load_with("configs/mnist_dropout_static.json", s,
                                                         {{"model.block.2.p", "0.5"}}));
    const RunHistory gr5 = run("gradual p=0.5", load_with("configs/mnist_dropout_gradual.json", s,
                                                          {{"model.block.2.p", "0.5"}}));
    trend_ok += gr5.best_val_acc >= st5.best_val_acc ? 1 : 0;
  }
  const int need = (4 * seeds + 4) / 5;
  const bool ok = static_ok >= need && gradual_ok >= need && trend_ok >= need;
  const std::string n = "/" + std::to_string(seeds);
  return {ok, "static p=0.9 final <= 0.20 in " + std::to_string(static_ok) + n +
                  ", gradual p=0.9 >= 0.85 in " + std::to_string(gradual_ok) + n +
                  ", gradual >= static at p=0.5 in " + std::to_string(trend_ok) + n};
}

// 6
Outcome gradual_bn_criterion() {
  Json j = Json::parse(R"({
    "dataset": {"name": "mnist", "dir": "mnist-subset", "limit": 3000, "val_fraction": 0.2},
    "model": {"layers": [{"type": "dense", "units": 64}, {"type": "gradual_batchnorm"},
                         {"type": "relu"}, {"type": "dense", "units": 10}]},
    "schedule": {"tau": 1},
    "batch_size": 100,
    "max_epochs": 4,
    "early_stopping": {"enabled": false},
    "record_wall_time": false,
    "seed": 1
  })");
  const ExperimentConfig c = parse_config(j);
  auto [tr, va] = load_datasets(c);
  Model model = build_model(c, tr.sample_shape());
  const RunHistory h = train(c, model, tr, va);
  if (model.gate().value() != 1.0) {
    return {false, "best snapshot is before tau (g = " + fmt("%g", model.gate().value()) + ")"};
  }
  const Dataset eval = take(va, 256);
  const Tensor batch = predict_logits(model, eval.images, 256);
  const Shape sample = eval.sample_shape();
  const std::size_t per = eval.images.size() / eval.size();
  const std::size_t classes = batch.dim(1);
  double worst = 0.0;
  for (std::size_t n = 0; n < eval.size(); ++n) {
    Shape one{1};
    one.insert(one.end(), sample.begin(), sample.end());
    Tensor x(one);
    std::copy_n(eval.images.data().begin() + static_cast<std::ptrdiff_t>(n * per), per,
                x.mutable_data().begin());
    // Train mode with one sample: batch norm would reject this unless bypassed
    Tape tape;
    ForwardContext ctx(tape, Mode::Train, model.gate());
    const Tensor alone = model.forward(tape.constant(x), ctx).value();
    const Tensor alone_eval = predict_logits(model, x, 1);
    for (std::size_t k = 0; k < classes; ++k) {
      worst = std::max(worst, std::abs(alone[k] - batch[n * classes + k]));
      worst = std::max(worst, std::abs(alone_eval[k] - batch[n * classes + k]));
    }
  }
  return {worst < 1e-12, "trained to g = 1 (val acc " + fmt("%.4f", h.best_val_acc) +
                             "), 256 samples, max abs diff " + fmt("%.3g", worst)};
}

// 7
Outcome combo_criterion(int seeds) {
  int ok_count = 0;
  for (int s = 1; s <= seeds; ++s) {
    const RunHistory both = run("grelu + gradual dropout", load_with("configs/mnist_combo_both.json", s));
    const RunHistory g = run("grelu", load_with("configs/mnist_combo_grelu.json", s));
    const RunHistory d = run("gradual dropout", load_with("configs/mnist_combo_dropout.json", s));
    const bool ok = !both.diverged() && both.best_val_acc >= g.best_val_acc - 0.01 &&
                    both.best_val_acc >= d.best_val_acc - 0.01;
    ok_count += ok ? 1 : 0;
  }
  return {ok_count * 2 > seeds, "combined >= each single technique - 1% in " +
                                    std::to_string(ok_count) + "/" + std::to_string(seeds)};
}

// 8
Outcome dropout_mc_criterion() {
  Tape tape;
  Var ones = tape.constant(Tensor(Shape{1000}, 1.0));
  std::string detail;
  bool ok = true;
  for (auto [p, g] : {std::pair{0.5, 0.5}, std::pair{0.9, 1.0}}) {
    Rng rng{static_cast<std::uint64_t>(p * 1000 + g * 10)};
    long double sum = 0, sum_sq = 0;
    const int masks = 10000;
    for (int m = 0; m < masks; ++m) {
      Tape t;
      const Tensor out =
          gradual_dropout_forward(t.constant(ones.value()), {p}, GateValue(g), Mode::Train, rng)
              .value();
      for (double v : out.data()) {
        sum += v;
        sum_sq += static_cast<long double>(v) * v;
      }
    }
    const long double n = 1000.0L * masks;
    const long double mean = sum / n;
    const long double var = (sum_sq - n * mean * mean) / (n - 1);
    const double se = static_cast<double>(std::sqrt(var / n));
    const double z = static_cast<double>(std::abs(mean - 1.0L)) / se;
    ok = ok && z < 3.0;
    detail += (detail.empty() ? "" : ", ") + std::string("p=") + fmt("%g", p) + " g=" +
              fmt("%g", g) + " mean " + fmt("%.5f", static_cast<double>(mean)) + " (" +
              fmt("%.2f", z) + " se)";
  }
  return {ok, detail};
}

// 9
Outcome orthogonal_criterion() {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    for (auto [r, c] : {std::pair<std::size_t, std::size_t>{64, 64}, {128, 64}, {64, 128}}) {
      for (double gain : {1.0, 2.0}) {
        Rng rng{seed, r, c};
        const Tensor w = orthogonal_init(r, c, gain, rng);
        Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
            m(w.data().data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
        const Eigen::MatrixXd gram = r >= c ? Eigen::MatrixXd(m.transpose() * m)
                                            : Eigen::MatrixXd(m * m.transpose());
        const Eigen::MatrixXd target =
            gain * gain * Eigen::MatrixXd::Identity(gram.rows(), gram.cols());
        worst = std::max(worst, (gram - target).cwiseAbs().maxCoeff());
      }
    }
  }
  return {worst < 1e-10, "100 seeds x {64x64, 128x64, 64x128} x gain {1, 2}, max err " +
                             fmt("%.3g", worst)};
}

// 10
Outcome adam_criterion() {
  Parameter p{"w", Tensor::vector({0.3, -0.7, 1.1})};
  Parameter* params[] = {&p};
  const Tensor grads[] = {Tensor::vector({1.0, -1.0, 0.25})};
  Adam adam;
  adam.step(params, grads);
  const double step = 1e-3 / (1.0 + 1e-8);
  const double step_q = 1e-3 * 0.25 / (0.25 + 1e-8);
  const double err = std::max({std::abs(p.value[0] - (0.3 - step)),
                               std::abs(p.value[1] - (-0.7 + step)),
                               std::abs(p.value[2] - (1.1 - step_q))});

  Parameter z{"z", Tensor::vector({0.5, -2.0})};
  const Tensor before = z.value.clone();
  Parameter* zp[] = {&z};
  const Tensor zero[] = {Tensor(Shape{2}, 0.0)};
  Adam adam_z;
  adam_z.step(zp, zero);
  const bool noop = bitwise_equal(z.value, before);
  return {err < 1e-9 && noop,
          "first-step err " + fmt("%.3g", err) + ", zero-gradient step " +
              (noop ? "unchanged" : "changed parameters")};
}

// 11
Outcome determinism_criterion() {
  const fs::path dir = fs::temp_directory_path() / "gradnet_acceptance_determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string cfg = source_path("configs/mnist_combo_both.json").string();
  std::vector<std::string> files;
  for (const char* name : {"a", "b"}) {
    const std::string cmd = std::string("\"") + GRADNET_CLI_PATH + "\" train --config \"" + cfg +
                            "\" --seed 3 --set max_epochs=3 --set dataset.limit=3000" +
                            " --set record_wall_time=false --out \"" + (dir / name).string() +
                            "\" > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    if (!WIFEXITED(status) || (WEXITSTATUS(status) != 0 && WEXITSTATUS(status) != 2)) {
      return {false, std::string("train run ") + name + " failed"};
    }
    std::ifstream in(dir / name / "metrics.csv", std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    files.push_back(os.str());
  }
  const bool same = !files[0].empty() && files[0] == files[1];
  return {same, std::string("two CLI train runs, metrics.csv ") +
                    (same ? "bitwise identical" : "differ") + " (" +
                    std::to_string(files[0].size()) + " bytes)"};
}

// 12
Outcome loader_criterion() {
  const fs::path dir = fs::temp_directory_path() / "gradnet_acceptance_loaders";
  fs::remove_all(dir);
  fs::create_directories(dir);
  DatasetConfig mnist_config;
  mnist_config.dir = "mnist-subset";
  const fs::path root = resolve_data_dir(mnist_config);
  const Dataset mnist =
      load_idx(root / "train-images-idx3-ubyte", root / "train-labels-idx1-ubyte");
  write_idx(mnist, dir / "img", dir / "lab");
  const Dataset back = load_idx(dir / "img", dir / "lab");
  const bool roundtrip = bitwise_equal(back.images, mnist.images) && back.labels == mnist.labels;

  std::vector<char> records(3 * 3073);
  Rng rng{12};
  for (std::size_t i = 0; i < records.size(); ++i) {
    records[i] = static_cast<char>(i % 3073 == 0 ? rng.next_u64() % 10 : rng.next_u64() % 256);
  }
  {
    std::ofstream out(dir / "good.bin", std::ios::binary);
    out.write(records.data(), static_cast<std::streamsize>(records.size()));
    std::ofstream cut(dir / "cut.bin", std::ios::binary);
    cut.write(records.data(), static_cast<std::streamsize>(records.size() - 100));
  }
  bool rejected = false;
  try {
    load_cifar10_bin({dir / "cut.bin"});
  } catch (const FormatError&) {
    rejected = true;
  }
  const Dataset cifar = load_cifar10_bin({dir / "good.bin"});
  bool in_range = true;
  for (const Tensor* t : {&mnist.images, &cifar.images}) {
    for (double v : t->data()) in_range = in_range && v >= 0.0 && v <= 1.0;
  }
  return {roundtrip && rejected && in_range,
          std::string("IDX round trip ") + (roundtrip ? "bit-exact" : "differs") +
              " on " + std::to_string(mnist.size()) + " images, truncated CIFAR " +
              (rejected ? "rejected" : "accepted") + ", pixels " +
              (in_range ? "in [0, 1]" : "out of range")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::vector<int> only;
  int seeds = 5;
  app.add_option("--only", only, "criterion numbers to run (default all)");
  app.add_option("--seeds", seeds, "seeds for the training trend criteria")->check(CLI::Range(1, 100));
  CLI11_PARSE(app, argc, argv);

  const std::map<int, std::pair<std::string, std::function<Outcome()>>> criteria = {
      {1, {"gradient check suite", gradcheck_criterion}},
      {2, {"endpoint exactness", endpoint_criterion}},
      {3, {"linear-start collapse", collapse_criterion}},
      {4, {"depth trend", [&] { return depth_criterion(seeds); }}},
      {5, {"gradual dropout trend", [&] { return dropout_criterion(seeds); }}},
      {6, {"gradual batchnorm single-example evaluation", gradual_bn_criterion}},
      {7, {"composability", [&] { return combo_criterion(seeds); }}},
      {8, {"dropout expectation", dropout_mc_criterion}},
      {9, {"orthogonal init", orthogonal_criterion}},
      {10, {"adam closed form", adam_criterion}},
      {11, {"determinism", determinism_criterion}},
      {12, {"data loaders", loader_criterion}},
  };

  bool all = true;
  for (const auto& [id, entry] : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Outcome o;
    try {
      o = entry.second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    std::printf("criterion %2d %-45s %s  %s\n", id, entry.first.c_str(), o.pass ? "PASS" : "FAIL",
                o.detail.c_str());
    std::fflush(stdout);
    all = all && o.pass;
  }
  return all ? 0 : 1;
}
