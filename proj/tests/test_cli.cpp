// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "avp/cli.hpp"

using avp::cli::run;
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int code;
  std::string out;
  std::string err;
};

RunResult invoke(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string temp_path(const std::string& name) {
  return (fs::temp_directory_path() / name).string();
}

const std::string kPrefix = temp_path("avp_cli_ds");

void ensure_dataset() {
  static bool done = false;
  if (done) return;
  auto r = invoke({"gen-data", "--out", kPrefix, "--videos", "20", "--classes", "3", "--segments",
                   "5", "--dim", "12", "--feature-noise", "0.05", "--flip-rate", "0.05", "--seed",
                   "9"});
  REQUIRE(r.code == 0);
  done = true;
}

}  // namespace

TEST_SUITE_BEGIN("cli");

TEST_CASE("inspect-graph prints the adjacency grid") {
  auto r = invoke({"inspect-graph", "--t", "4", "--k", "1"});
  CHECK(r.code == 0);
  CHECK(r.out == "1 1 0 0\n1 1 1 0\n0 1 1 1\n0 0 1 1\n");

  auto id = invoke({"inspect-graph", "--t", "3", "--k", "0"});
  CHECK(id.out == "1 0 0\n0 1 0\n0 0 1\n");

  auto full = invoke({"inspect-graph", "--t", "5", "--k", "4"});
  std::istringstream lines(full.out);
  std::string line;
  std::size_t rows = 0;
  while (std::getline(lines, line)) {
    CHECK(line == "1 1 1 1 1");
    ++rows;
  }
  CHECK(rows == 5);
}

TEST_CASE("help exits zero for the app and every subcommand") {
  for (auto args : {std::vector<std::string>{"--help"},
                    {"gen-data", "--help"},
                    {"train", "--help"},
                    {"eval", "--help"},
                    {"inspect-graph", "--help"},
                    {"ablate", "--help"}}) {
    auto r = invoke(args);
    CHECK(r.code == 0);
    CHECK(!r.out.empty());
  }
  // defaults are documented for the config keys
  auto tr = invoke({"train", "--help"});
  for (const char* key : {"--epochs", "--batch", "--lr", "--momentum", "--seed", "--heads",
                          "--gat-layers", "--k-audio", "--k-visual", "--dropout", "--threshold",
                          "--hidden", "--text-seed", "--eval-every", "--no-te", "--no-mtg"}) {
    CHECK(tr.out.find(key) != std::string::npos);
  }
}

TEST_CASE("bad flags and bad config files exit with code 2") {
  CHECK(invoke({"train"}).code == 2);                        // missing required --data
  CHECK(invoke({"frobnicate"}).code == 2);                   // unknown subcommand
  CHECK(invoke({"inspect-graph", "--t", "4"}).code == 2);    // missing --k
  CHECK(invoke({"inspect-graph", "--t", "0", "--k", "1"}).code == 2);  // invalid graph

  const std::string cfg = temp_path("avp_cli_bad.json");
  {
    std::ofstream f(cfg);
    f << R"({"no_such_key": 1})";
  }
  auto r = invoke({"inspect-graph", "--t", "3", "--k", "1", "--config", cfg});
  CHECK(r.code == 2);
  CHECK(r.err.find("no_such_key") != std::string::npos);
  fs::remove(cfg);
}

TEST_CASE("config file supplies values and flags win") {
  const std::string cfg = temp_path("avp_cli_graph.json");
  {
    std::ofstream f(cfg);
    f << R"({"t": 3, "k": 0})";
  }
  auto from_config = invoke({"inspect-graph", "--config", cfg});
  CHECK(from_config.code == 0);
  CHECK(from_config.out == "1 0 0\n0 1 0\n0 0 1\n");

  auto overridden = invoke({"inspect-graph", "--config", cfg, "--k", "2"});
  CHECK(overridden.code == 0);
  CHECK(overridden.out == "1 1 1\n1 1 1\n1 1 1\n");
  fs::remove(cfg);
}

TEST_CASE("gen-data writes a loadable dataset and prints the manifest") {
  ensure_dataset();
  CHECK(fs::exists(kPrefix + ".json"));
  CHECK(fs::exists(kPrefix + ".bin"));

  auto r = invoke({"gen-data", "--out", temp_path("avp_cli_named"), "--class-names", "Dog,Cat",
                   "--videos", "4", "--segments", "4", "--dim", "8", "--seed", "1"});
  CHECK(r.code == 0);
  const auto j = nlohmann::json::parse(r.out);
  CHECK(j.at("class_names") == nlohmann::json({"Dog", "Cat"}));
}

TEST_CASE("train, eval via checkpoint, and file-based eval agree") {
  ensure_dataset();
  const std::string ckpt = temp_path("avp_cli_model.ckpt");
  const std::string log = temp_path("avp_cli_log.jsonl");
  auto tr = invoke({"train", "--data", kPrefix, "--out", ckpt, "--log", log, "--epochs", "2",
                    "--batch", "8", "--seed", "4", "--eval-every", "0"});
  REQUIRE(tr.code == 0);
  const auto tj = nlohmann::json::parse(tr.out);
  CHECK(tj.at("report").at("segment").size() == 5);
  CHECK(fs::exists(ckpt));

  // checkpoint-mode eval, also writing the probability container
  const std::string pred = temp_path("avp_cli_pred.bin");
  auto ev = invoke({"eval", "--data", kPrefix, "--checkpoint", ckpt, "--write-pred", pred});
  REQUIRE(ev.code == 0);
  const auto report = nlohmann::json::parse(ev.out);
  CHECK(report.at("segment").size() == 5);
  CHECK(report.at("event").size() == 5);

  // file-based eval on the written predictions and the dataset's own labels
  auto ev2 = invoke({"eval", "--pred", pred, "--gt", kPrefix + ".bin"});
  REQUIRE(ev2.code == 0);
  CHECK(nlohmann::json::parse(ev2.out) == report);

  // --jobs changes nothing
  auto ev3 = invoke({"eval", "--pred", pred, "--gt", kPrefix + ".bin", "--jobs", "3"});
  CHECK(nlohmann::json::parse(ev3.out) == report);

  // determinism: the same training run reproduces the same eval output
  const std::string ckpt2 = temp_path("avp_cli_model2.ckpt");
  auto tr2 = invoke({"train", "--data", kPrefix, "--out", ckpt2, "--epochs", "2", "--batch", "8",
                     "--seed", "4", "--eval-every", "0"});
  REQUIRE(tr2.code == 0);
  auto ev4 = invoke({"eval", "--data", kPrefix, "--checkpoint", ckpt2});
  CHECK(ev4.out == ev.out);

  for (const auto& p : {ckpt, ckpt2, pred, log}) fs::remove(p);
}

TEST_CASE("eval demands exactly one input mode") {
  ensure_dataset();
  CHECK(invoke({"eval"}).code == 2);
  CHECK(invoke({"eval", "--pred", "x.bin"}).code == 2);
  CHECK(invoke({"eval", "--pred", "x.bin", "--gt", "y.bin", "--data", kPrefix}).code == 2);
  CHECK(invoke({"eval", "--pred", "missing.bin", "--gt", "also-missing.bin"}).code == 1);
}

TEST_CASE("ablate emits four rows of ten metric fields") {
  ensure_dataset();
  auto r = invoke({"ablate", "--data", kPrefix, "--epochs", "1", "--batch", "8", "--seed", "2"});
  REQUIRE(r.code == 0);
  const auto table = nlohmann::json::parse(r.out);
  REQUIRE(table.is_array());
  REQUIRE(table.size() == 4);
  const std::vector<std::string> labels = {"full", "no_te", "no_mtg", "neither"};
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(table[i].at("config") == labels[i]);
    CHECK(table[i].at("segment").size() == 5);
    CHECK(table[i].at("event").size() == 5);
  }

  fs::remove(kPrefix + ".json");
  fs::remove(kPrefix + ".bin");
}

TEST_SUITE_END();
