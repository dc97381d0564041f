#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "gradnet/config.hpp"
#include "helpers.hpp"

namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code = -1;
  std::string output;
};

CliResult run_cli(const std::string& args) {
  static int counter = 0;
  const fs::path log = fs::temp_directory_path() / ("gradnet_cli_" + std::to_string(counter++) + ".log");
  const std::string cmd = std::string("\"") + GRADNET_CLI_PATH + "\" " + args + " > \"" +
                          log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  CliResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(log);
  std::ostringstream os;
  os << in.rdbuf();
  r.output = os.str();
  return r;
}

fs::path write_blobs_config(const fs::path& dir) {
  fs::create_directories(dir);
  const fs::path path = dir / "blobs.json";
  std::ofstream out(path);
  out << R"({
  "dataset": {"name": "synth_blobs", "blobs": {"n": 600, "d": 2, "k": 2, "seed": 1}},
  "model": {"block": [{"type": "dense", "units": 4}, {"type": "grelu"}], "depth": 1,
            "head": [{"type": "dense", "units": 2}]},
  "schedule": {"tau": 1},
  "optimizer": {"lr": 0.05},
  "batch_size": 20,
  "max_epochs": 2,
  "early_stopping": {"enabled": false},
  "record_wall_time": false,
  "seed": 1
})";
  return path;
}

std::size_t count_lines(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  std::string line;
  while (std::getline(in, line)) n += line.empty() ? 0 : 1;
  return n;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("gradcheck exits 0 on a correct build") {
  const CliResult r = run_cli("gradcheck --tol 1e-4");
  CHECK(r.code == 0);
  CHECK(r.output.find("grelu") != std::string::npos);
}

TEST_CASE("gradcheck exits 3 when the tolerance cannot be met") {
  CHECK(run_cli("gradcheck --tol 1e-20").code == 3);
}

TEST_CASE("missing config exits 1 with a message") {
  const CliResult r = run_cli("train --config /nonexistent/missing.json");
  CHECK(r.code == 1);
  CHECK(r.output.find("missing.json") != std::string::npos);
}

TEST_CASE("unknown subcommand or flag exits 1 with usage") {
  const CliResult a = run_cli("frobnicate");
  CHECK(a.code == 1);
  CHECK(a.output.find("train") != std::string::npos);
  CHECK(run_cli("gradcheck --bogus").code == 1);
  CHECK(run_cli("").code == 1);
}

TEST_CASE("train writes artifacts") {
  const fs::path dir = fs::temp_directory_path() / "gradnet_cli_train";
  fs::remove_all(dir);
  const fs::path cfg = write_blobs_config(dir);
  const CliResult r = run_cli("train --config \"" + cfg.string() + "\" --out \"" +
                              (dir / "run").string() + "\" --seed 7");
  CHECK(r.code == 0);
  CHECK(fs::exists(dir / "run" / "metrics.csv"));
  CHECK(fs::exists(dir / "run" / "model.snapshot"));
  const auto run = gradnet::read_json_file(dir / "run" / "run.json");
  CHECK(run.at("seed") == 7);
  CHECK(count_lines(dir / "run" / "metrics.csv") == 3);
}

TEST_CASE("bad override exits 1") {
  const fs::path dir = fs::temp_directory_path() / "gradnet_cli_badset";
  fs::remove_all(dir);
  const fs::path cfg = write_blobs_config(dir);
  CHECK(run_cli("train --config \"" + cfg.string() + "\" --set model.depht=3").code == 1);
}

TEST_CASE("sweep runs the full grid") {
  const fs::path dir = fs::temp_directory_path() / "gradnet_cli_sweep";
  fs::remove_all(dir);
  const fs::path cfg = write_blobs_config(dir);
  const CliResult r = run_cli("sweep --config \"" + cfg.string() +
                              "\" --vary model.depth=4,64 --seeds 5 --out \"" +
                              (dir / "out").string() + "\"");
  CHECK(r.code == 0);
  const fs::path summary = dir / "out" / "summary.csv";
  REQUIRE(fs::exists(summary));
  CHECK(count_lines(summary) == 11);
  std::ifstream in(summary);
  std::string header;
  std::getline(in, header);
  CHECK(header.find("model.depth") != std::string::npos);
  CHECK(header.find("seed") != std::string::npos);
  auto split = [](const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    return cells;
  };
  const auto columns = split(header);
  const auto depth_col = static_cast<std::size_t>(
      std::find(columns.begin(), columns.end(), "model.depth") - columns.begin());
  REQUIRE(depth_col < columns.size());
  int depth4 = 0, depth64 = 0;
  std::string line;
  while (std::getline(in, line)) {
    const auto cells = split(line);
    depth4 += cells.at(depth_col) == "4" ? 1 : 0;
    depth64 += cells.at(depth_col) == "64" ? 1 : 0;
  }
  CHECK(depth4 == 5);
  CHECK(depth64 == 5);

  const CliResult rep = run_cli("report --runs \"" + (dir / "out").string() + "\" --out \"" +
                                (dir / "report.csv").string() + "\"");
  CHECK(rep.code == 0);
  CHECK(count_lines(dir / "report.csv") == 1 + 10 * 2);
}

TEST_CASE("inspect prints dataset shape") {
  const fs::path root = fs::path(GRADNET_SOURCE_DIR) / "data" / "mnist-subset";
  const CliResult r = run_cli("inspect --data \"" + (root / "train-images-idx3-ubyte").string() +
                              "\" --labels \"" + (root / "train-labels-idx1-ubyte").string() + "\"");
  CHECK(r.code == 0);
  CHECK(r.output.find("10000") != std::string::npos);
}

}  // TEST_SUITE
