#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "gradnet/config.hpp"
#include "gradnet/data.hpp"
#include "gradnet/errors.hpp"
#include "gradnet/gradcheck.hpp"
#include "gradnet/train.hpp"

namespace fs = std::filesystem;
using namespace gradnet;

namespace {

enum Exit { kOk = 0, kConfigError = 1, kDiverged = 2, kGradcheckFailed = 3 };

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(s);
  while (std::getline(is, item, sep)) out.push_back(item);
  return out;
}

std::pair<std::string, std::string> key_value(const std::string& arg) {
  const auto eq = arg.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("expected KEY=VALUE, got '" + arg + "'");
  }
  return {arg.substr(0, eq), arg.substr(eq + 1)};
}

Json config_json(const std::string& path, const std::vector<std::string>& sets) {
  Json j = read_json_file(path);
  for (const auto& s : sets) {
    const auto [k, v] = key_value(s);
    apply_override(j, k, v);
  }
  return j;
}

double final_val_acc(const RunHistory& h) { return h.epochs.empty() ? 0.0 : h.epochs.back().val_acc; }

int cmd_train(const std::string& config_path, const std::vector<std::string>& sets,
              const std::optional<std::uint64_t>& seed, const std::string& out) {
  ExperimentConfig config = parse_config(config_json(config_path, sets));
  if (seed) config.seed = *seed;
  if (!out.empty()) config.output_dir = out;
  const RunHistory h = train(config);
  std::cout << metrics_csv(h);
  std::cout << "status " << to_string(h.status);
  if (!h.diverged_reason.empty()) std::cout << " (" << h.diverged_reason << ")";
  std::cout << "\nbest_epoch " << h.best_epoch << " best_val_acc " << fmt(h.best_val_acc)
            << " final_g " << fmt(h.final_g) << " parameters " << h.parameter_count << '\n';
  if (!config.output_dir.empty()) std::cout << "artifacts " << config.output_dir.string() << '\n';
  return h.diverged() ? kDiverged : kOk;
}

int cmd_gradcheck(double tol, std::uint64_t seed) {
  const GradCheckReport report = gradcheck_suite(tol, seed);
  std::cout << report.format();
  return report.passed() ? kOk : kGradcheckFailed;
}

struct SweepRun {
  std::size_t index;
  std::vector<std::pair<std::string, std::string>> values;
  std::uint64_t seed;
};

int cmd_sweep(const std::string& config_path, const std::vector<std::string>& sets,
              const std::vector<std::string>& vary, std::size_t seeds, const std::string& out,
              std::size_t jobs) {
  const Json base = config_json(config_path, sets);
  const ExperimentConfig base_config = parse_config(base);
  if (seeds == 0) throw ConfigError("--seeds must be >= 1");

  std::vector<std::pair<std::string, std::vector<std::string>>> axes;
  for (const auto& v : vary) {
    const auto [k, list] = key_value(v);
    auto values = split(list, ',');
    if (values.empty()) throw ConfigError("--vary " + k + " has no values");
    axes.emplace_back(k, values);
  }

  std::vector<SweepRun> runs;
  std::vector<std::size_t> pos(axes.size(), 0);
  while (true) {
    for (std::size_t s = 0; s < seeds; ++s) {
      SweepRun r{runs.size(), {}, base_config.seed + s};
      for (std::size_t a = 0; a < axes.size(); ++a) {
        r.values.emplace_back(axes[a].first, axes[a].second[pos[a]]);
      }
      runs.push_back(r);
    }
    std::size_t a = axes.size();
    while (a > 0 && ++pos[a - 1] == axes[a - 1].second.size()) pos[--a] = 0;
    if (a == 0) break;
  }

  // Validate every grid point before training anything.
  std::vector<ExperimentConfig> configs;
  for (const auto& r : runs) {
    Json j = base;
    for (const auto& [k, v] : r.values) apply_override(j, k, v);
    ExperimentConfig c = parse_config(j);
    c.seed = r.seed;
    c.output_dir = fs::path(out) / ("run_" + std::to_string(r.index));
    configs.push_back(c);
  }

  std::vector<std::optional<RunHistory>> results(runs.size());
  std::vector<std::string> errors(runs.size());
  std::atomic<std::size_t> next{0};
  std::mutex log;
  auto worker = [&] {
    for (std::size_t i = next++; i < runs.size(); i = next++) {
      try {
        results[i] = train(configs[i]);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
      std::lock_guard lock(log);
      std::cerr << "run " << i << " seed " << runs[i].seed;
      for (const auto& [k, v] : runs[i].values) std::cerr << ' ' << k << '=' << v;
      if (results[i]) {
        std::cerr << " -> " << to_string(results[i]->status) << " best_val_acc "
                  << fmt(results[i]->best_val_acc) << '\n';
      } else {
        std::cerr << " -> error: " << errors[i] << '\n';
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < std::max<std::size_t>(jobs, 1); ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  fs::create_directories(out);
  std::ofstream csv(fs::path(out) / "summary.csv");
  csv << "run";
  for (const auto& [k, _] : axes) csv << ',' << k;
  csv << ",seed,status,best_epoch,best_val_acc,final_val_acc,epochs,parameter_count\n";
  bool failed = false;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    csv << "run_" << i;
    for (const auto& [_, v] : runs[i].values) csv << ',' << v;
    csv << ',' << runs[i].seed << ',';
    if (results[i]) {
      const RunHistory& h = *results[i];
      csv << to_string(h.status) << ',' << h.best_epoch << ',' << fmt(h.best_val_acc) << ','
          << fmt(final_val_acc(h)) << ',' << h.epochs.size() << ',' << h.parameter_count << '\n';
    } else {
      failed = true;
      csv << "error,-1,,,0,0\n";
    }
  }
  std::cout << "wrote " << (fs::path(out) / "summary.csv").string() << " (" << runs.size()
            << " runs)\n";
  return failed ? kConfigError : kOk;
}

std::uint32_t read_be32(std::istream& in) {
  unsigned char b[4] = {};
  in.read(reinterpret_cast<char*>(b), 4);
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) |
         b[3];
}

void print_labels(const std::vector<int>& labels) {
  std::map<int, std::size_t> hist;
  for (int l : labels) ++hist[l];
  std::cout << "labels " << labels.size() << ":";
  for (const auto& [l, n] : hist) std::cout << ' ' << l << '=' << n;
  std::cout << '\n';
}

void print_images(const Tensor& images) {
  double lo = 0, hi = 0, mean = 0;
  if (images.size() > 0) {
    lo = hi = images[0];
    for (double v : images.data()) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
      mean += v;
    }
    mean /= static_cast<double>(images.size());
  }
  std::cout << "images " << to_string(images.shape()) << " min " << lo << " max " << hi
            << " mean " << mean << '\n';
}

int cmd_inspect(const std::string& data, const std::string& labels) {
  std::ifstream in(data, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + data);
  const std::uint32_t magic = read_be32(in);
  in.close();
  if (magic == 0x803) {
    if (labels.empty()) {
      print_images(load_idx_images(data));
    } else {
      const Dataset d = load_idx(data, labels);
      print_images(d.images);
      print_labels(d.labels);
    }
  } else if (magic == 0x801) {
    print_labels(load_idx_labels(data));
  } else {
    const Dataset d = load_cifar10_bin({data});
    print_images(d.images);
    print_labels(d.labels);
  }
  return kOk;
}

int cmd_report(const std::string& runs_dir, const std::string& out) {
  if (!fs::is_directory(runs_dir)) throw ConfigError("not a directory: " + runs_dir);
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(runs_dir)) {
    if (e.is_regular_file() && e.path().filename() == "metrics.csv") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::ostringstream os;
  os << "run,epoch,g,train_loss,train_acc,val_loss,val_acc,wall_seconds,annealed\n";
  for (const auto& f : files) {
    std::string run = fs::relative(f.parent_path(), runs_dir).generic_string();
    if (run.empty() || run == ".") run = f.parent_path().filename().string();
    std::ifstream in(f);
    std::string line;
    std::getline(in, line);
    if (line != "epoch,g,train_loss,train_acc,val_loss,val_acc,wall_seconds") {
      throw FormatError(f.string() + " has an unexpected header");
    }
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto cols = split(line, ',');
      const bool annealed = cols.size() > 1 && std::stod(cols[1]) == 1.0;
      os << run << ',' << line << ',' << (annealed ? 1 : 0) << '\n';
    }
  }
  if (out.empty()) {
    std::cout << os.str();
  } else {
    std::ofstream o(out);
    o << os.str();
    std::cerr << "wrote " << out << " (" << files.size() << " runs)\n";
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gradnet: gradually annealed architectures"};
  app.require_subcommand(1);

  std::string config_path, out, sweep_out, data, labels, runs_dir;
  std::vector<std::string> sets, vary;
  std::optional<std::uint64_t> seed;
  std::uint64_t gc_seed = 0;
  double tol = 1e-4;
  std::size_t seeds = 1, jobs = 1;

  auto* train_cmd = app.add_subcommand("train", "train one configuration");
  train_cmd->add_option("--config", config_path, "JSON config file")->required();
  train_cmd->add_option("--seed", seed, "override the config seed");
  train_cmd->add_option("--out", out, "output directory");
  train_cmd->add_option("--set", sets, "override a config value, KEY=VALUE (dotted key)");

  auto* gc_cmd = app.add_subcommand("gradcheck", "compare every backward pass with finite differences");
  gc_cmd->add_option("--tol", tol, "max relative error");
  gc_cmd->add_option("--seed", gc_seed, "input seed");

  auto* sweep_cmd = app.add_subcommand("sweep", "grid of training runs");
  sweep_cmd->add_option("--config", config_path, "JSON config file")->required();
  sweep_cmd->add_option("--vary", vary, "KEY=V1,V2,... (repeatable; grid product)");
  sweep_cmd->add_option("--seeds", seeds, "seeds per grid point, counted up from the config seed");
  sweep_cmd->add_option("--out", sweep_out, "output directory")->default_val("sweep");
  sweep_cmd->add_option("--jobs", jobs, "parallel runs")->default_val(1);
  sweep_cmd->add_option("--set", sets, "override a config value, KEY=VALUE");

  auto* inspect_cmd = app.add_subcommand("inspect", "print dataset shape and statistics");
  inspect_cmd->add_option("--data", data, "IDX image/label file or CIFAR-10 batch")->required();
  inspect_cmd->add_option("--labels", labels, "IDX label file to pair with --data");

  auto* report_cmd = app.add_subcommand("report", "combine metrics.csv files under a directory");
  report_cmd->add_option("--runs", runs_dir, "directory to search")->required();
  report_cmd->add_option("--out", out, "output CSV (stdout if omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return kConfigError;
  }

  try {
    if (*train_cmd) return cmd_train(config_path, sets, seed, out);
    if (*gc_cmd) return cmd_gradcheck(tol, gc_seed);
    if (*sweep_cmd) return cmd_sweep(config_path, sets, vary, seeds, sweep_out, jobs);
    if (*inspect_cmd) return cmd_inspect(data, labels);
    if (*report_cmd) return cmd_report(runs_dir, out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfigError;
  }
  return kConfigError;
}
