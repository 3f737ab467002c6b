#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "attenc/data.hpp"
#include "attenc/encoder.hpp"

using namespace attenc;
namespace fs = std::filesystem;

namespace {

const fs::path& workdir() {
  static const fs::path dir = [] {
    const auto d = fs::temp_directory_path() / "attenc_test_cli";
    fs::remove_all(d);
    fs::create_directories(d);
    std::ofstream cfg(d / "small.cfg");
    cfg << "conv1_channels = 8\nmodel_dim = 16\nheads = 4\nff_dim = 32\nembedding_dim = 16\n"
        << "drivers = 4\nseconds_per_driver = 400\n"
        << "epochs = 2\nfolds = 2\nproto_epochs = 2\nepisodes_per_epoch = 5\nway = 3\neval_episodes = 20\n";
    return d;
  }();
  return dir;
}

std::string path(const std::string& name) { return (workdir() / name).string(); }

int run(const std::string& args) {
  const std::string cmd = std::string(ATTENC_CLI) + " " + args + " -c " + path("small.cfg") + " > " +
                          path("stdout.txt") + " 2> " + path("stderr.txt");
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::string& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t count_lines(const std::string& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  std::string line;
  while (std::getline(in, line)) ++n;
  return n;
}

// synth + preprocess once for the whole binary
void prepare() {
  static bool done = false;
  if (done) return;
  REQUIRE(run("synth -o " + path("d.csv")) == 0);
  REQUIRE(run("preprocess -i " + path("d.csv") + " -o " + path("w.bin")) == 0);
  done = true;
}

}  // namespace

TEST_CASE("synth writes drivers x seconds x rate rows, reproducibly") {
  REQUIRE(run("synth -o " + path("a.csv") + " --seed 3") == 0);
  REQUIRE(run("synth -o " + path("b.csv") + " --seed 3") == 0);
  REQUIRE(run("synth -o " + path("c.csv") + " --seed 4 --set sample_rate=2") == 0);
  CHECK(count_lines(path("a.csv")) == 1 + 4 * 400);
  CHECK(count_lines(path("c.csv")) == 1 + 4 * 400 * 2);
  CHECK(slurp(path("a.csv")) == slurp(path("b.csv")));
  CHECK(slurp(path("a.csv.json")) == slurp(path("b.csv.json")));
  CHECK(fs::exists(path("a.csv.json")));
}

TEST_CASE("preprocess yields the expected windows in [0, 1]") {
  prepare();
  const auto set = load_windows(path("w.bin"));
  // 400 samples, T = 30, stride 15: floor((400 - 30) / 15) + 1 = 25 per driver
  CHECK(set.samples.size() == 4 * 25);
  CHECK(set.window_length() == 30);
  CHECK(set.channels() == 6);
  for (const auto& w : set.samples)
    for (double v : w.matrix.values()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  REQUIRE(run("preprocess -i " + path("d.csv") + " -o " + path("ws.bin") + " --set stat_features=true") == 0);
  const auto stats = load_windows(path("ws.bin"));
  CHECK(stats.channels() == 36);
  CHECK(stats.window_length() == 6);

  // applying saved statistics reproduces the same windows
  REQUIRE(run("preprocess -i " + path("d.csv") + " -o " + path("w2.bin") + " --stats " + path("w.bin.stats.csv")) ==
          0);
  CHECK(slurp(path("w.bin")) == slurp(path("w2.bin")));
}

TEST_CASE("train-cls writes a reloadable checkpoint and a deterministic report") {
  prepare();
  REQUIRE(run("train-cls -i " + path("w.bin") + " -o " + path("c1.ckpt")) == 0);
  REQUIRE(run("train-cls -i " + path("w.bin") + " -o " + path("c2.ckpt")) == 0);
  CHECK(slurp(path("c1.ckpt")) == slurp(path("c2.ckpt")));
  CHECK(slurp(path("c1.ckpt.report.csv")) == slurp(path("c2.ckpt.report.csv")));
  // header + 2 epochs + summary
  CHECK(count_lines(path("c1.ckpt.report.csv")) == 4);
  CHECK(slurp(path("c1.ckpt.report.csv")).find("folds=2") != std::string::npos);
  const auto ck = load_checkpoint(path("c1.ckpt"));
  CHECK(ck.params.config.classes == 4);
  CHECK(ck.metadata.at("kind") == "classifier");
  save_checkpoint(path("c3.ckpt"), ck.params, ck.metadata);
  CHECK(slurp(path("c1.ckpt")) == slurp(path("c3.ckpt")));
}

TEST_CASE("train-proto and eval compose deterministically") {
  prepare();
  REQUIRE(run("train-proto -i " + path("w.bin") + " -o " + path("p1.ckpt")) == 0);
  REQUIRE(run("train-proto -i " + path("w.bin") + " -o " + path("p2.ckpt")) == 0);
  CHECK(slurp(path("p1.ckpt")) == slurp(path("p2.ckpt")));
  CHECK(slurp(path("p1.ckpt.report.csv")) == slurp(path("p2.ckpt.report.csv")));
  CHECK(count_lines(path("p1.ckpt.report.csv")) == 4);

  REQUIRE(run("eval -i " + path("w.bin") + " --shot 2 --query 3 --checkpoint " + path("p1.ckpt") + " --report " + path("e1.csv")) == 0);
  REQUIRE(run("eval -i " + path("w.bin") + " --shot 2 --query 3 --checkpoint " + path("p1.ckpt") + " --report " + path("e2.csv")) == 0);
  CHECK(slurp(path("e1.csv")) == slurp(path("e2.csv")));
  CHECK(count_lines(path("e1.csv")) == 2);
  REQUIRE(run("eval -i " + path("w.bin") + " --checkpoint " + path("c1.ckpt") + " --way 4 --shot 1 --query 2") == 0);
  CHECK(slurp(path("stdout.txt")).find("classifier accuracy") != std::string::npos);
}

TEST_CASE("unknown-driver protocol") {
  prepare();
  REQUIRE(run("train-proto -i " + path("w.bin") + " -o " + path("u.ckpt") +
              " --set unknown=true --set train_way=2 --way 2") == 0);
  const auto ck = load_checkpoint(path("u.ckpt"));
  CHECK(ck.metadata.at("protocol") == "unknown");
  REQUIRE(run("eval --unknown --way 2 -i " + path("w.bin") + " --checkpoint " + path("u.ckpt") + " --report " +
              path("eu.csv")) == 0);
  CHECK(slurp(path("eu.csv")).find(",unknown,") != std::string::npos);
  // a checkpoint without held-out drivers cannot run the protocol
  CHECK(run("eval --unknown -i " + path("w.bin") + " --checkpoint " + path("p1.ckpt")) == 1);
  // only two unknown drivers: a 3-way episode cannot be built
  CHECK(run("eval --unknown --way 3 -i " + path("w.bin") + " --checkpoint " + path("u.ckpt")) == 2);
}

TEST_CASE("export-embeddings adds one prototype row per class") {
  prepare();
  REQUIRE(run("train-proto -i " + path("w.bin") + " -o " + path("x.ckpt")) == 0);
  REQUIRE(run("export-embeddings -i " + path("w.bin") + " --checkpoint " + path("x.ckpt") + " -o " + path("e.csv")) ==
          0);
  REQUIRE(run("export-embeddings -i " + path("w.bin") + " --checkpoint " + path("x.ckpt") + " -o " + path("f.csv")) ==
          0);
  CHECK(slurp(path("e.csv")) == slurp(path("f.csv")));
  CHECK(count_lines(path("e.csv")) == 1 + 100 + 4);

  std::ifstream in(path("e.csv"));
  std::string line;
  std::getline(in, line);
  CHECK(line.rfind("class_id,e0,", 0) == 0);
  std::map<int, std::vector<double>> sums, protos;
  std::map<int, int> counts;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(std::stod(cell));
    REQUIRE(cells.size() == 1 + 16 + 1);
    const int cls = static_cast<int>(cells.front());
    std::vector<double> e(cells.begin() + 1, cells.end() - 1);
    if (cells.back() == 1.0) {
      protos[cls] = e;
    } else {
      auto& s = sums[cls];
      s.resize(16, 0.0);
      for (std::size_t k = 0; k < 16; ++k) s[k] += e[k];
      ++counts[cls];
    }
  }
  REQUIRE(protos.size() == 4);
  for (auto& [cls, s] : sums)
    for (std::size_t k = 0; k < 16; ++k) CHECK(protos[cls][k] == doctest::Approx(s[k] / counts[cls]).epsilon(1e-12));
}

TEST_CASE("param-count matches the library and ignores values") {
  REQUIRE(run("param-count") == 0);
  const auto n = std::stoul(slurp(path("stdout.txt")));
  AttEncConfig small;
  small.conv1_channels = 8;
  small.model_dim = 16;
  small.heads = 4;
  small.ff_dim = 32;
  small.embedding_dim = 16;
  CHECK(n == param_count(small));

  // train-cls adds a 4-class head; compare checkpoints trained from different seeds
  prepare();
  REQUIRE(run("train-cls -i " + path("w.bin") + " -o " + path("s5.ckpt") + " --seed 5 --set folds=0") == 0);
  REQUIRE(run("param-count --checkpoint " + path("s5.ckpt")) == 0);
  const auto a = std::stoul(slurp(path("stdout.txt")));
  REQUIRE(run("param-count --checkpoint " + path("c1.ckpt")) == 0);
  CHECK(std::stoul(slurp(path("stdout.txt"))) == a);
  CHECK(a == n + 16 * 4 + 4);

  const std::string cmd = std::string(ATTENC_CLI) + " param-count > " + path("default.txt");
  REQUIRE(std::system(cmd.c_str()) == 0);
  const auto d = std::stoul(slurp(path("default.txt")));
  CHECK(d >= 10000);
  CHECK(d < 100000);
}

TEST_CASE("exit codes and one-line diagnostics") {
  prepare();
  CHECK(run("param-count --set no_such_key=1") == 1);
  CHECK(slurp(path("stderr.txt")).find("no_such_key") != std::string::npos);
  CHECK(run("param-count --set heads=5") == 1);
  CHECK(run("train-cls -i " + path("w.bin")) == 1);  // no output path
  CHECK(run("bogus-command") == 1);
  CHECK(run("eval -i " + path("w.bin") + " --checkpoint " + path("missing.ckpt")) == 2);
  CHECK(count_lines(path("stderr.txt")) == 1);
  CHECK(run("preprocess -i " + path("missing.csv") + " -o " + path("z.bin")) == 2);
  CHECK(run("train-cls -i " + path("w.bin") + " -o " + path("nan.ckpt") + " --set lr=1e300 --set folds=0") == 3);
  CHECK(slurp(path("stderr.txt")).find("numeric") != std::string::npos);
}
