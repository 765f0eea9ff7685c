#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "capgnn/cli.hpp"
#include "capgnn/error.hpp"
#include "capgnn/text.hpp"
#include "doctest.h"
#include "json.hpp"
#include "oracles.hpp"

using namespace capgnn;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "capgnn");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

// Small dataset plus a short vanilla run, shared by the probe/attack cases.
struct Workspace {
  oracle::TempDir dir{"cli"};
  fs::path data = dir / "data";
  fs::path run = dir / "run";
  Workspace() {
    REQUIRE(run_cli({"gen-sbm", "--blocks", "30,30", "--p-in", "0.2", "--p-out", "0.02", "--feature-noise", "0.5",
                     "--feature-dim", "4", "--seed", "3", "--out-dir", data.string()})
                .code == 0);
    REQUIRE(run_cli({"train", "--dataset_dir", data.string(), "--out_dir", run.string(), "--epochs", "40",
                     "--optimizer", "adam", "--hidden_dims", "8", "--seeds", "1,2"})
                .code == 0);
  }
};

}  // namespace

TEST_CASE("config parsing") {
  cli::RunConfig cfg;
  cli::apply_setting(cfg, "mode", "cap");
  cli::apply_setting(cfg, "hidden_dims", "32,16");
  cli::apply_setting(cfg, "seeds", "1..3,7");
  cli::apply_setting(cfg, "p_x", "2");
  CHECK(cfg.train.mode == train::TrainMode::cap);
  CHECK(cfg.train.hidden_dims == std::vector<std::size_t>{32, 16});
  CHECK(cfg.seeds == std::vector<std::uint64_t>{1, 2, 3, 7});
  CHECK(cfg.train.perturb.p_x == linalg::NormOrder::two);
  CHECK_THROWS_AS(cli::apply_setting(cfg, "nonsense", "1"), ConfigError);
  CHECK_THROWS_AS(cli::apply_setting(cfg, "epochs", "-3"), ConfigError);
  CHECK_THROWS_AS(cli::apply_setting(cfg, "lr", "fast"), ConfigError);
  try {
    cli::apply_setting(cfg, "dropout", "abc");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).rfind("dropout:", 0) == 0);
  }
  const auto kv = cli::parse_config_text("# comment\nmode = wp  # trailing\n\nepochs=5\n", "x.cfg");
  REQUIRE(kv.size() == 2);
  CHECK(kv[0] == std::pair<std::string, std::string>{"mode", "wp"});
  CHECK(kv[1] == std::pair<std::string, std::string>{"epochs", "5"});
  CHECK_THROWS_AS((void)cli::parse_config_text("mode wp\n", "x.cfg"), ConfigError);
  CHECK(cli::parse_count_list("none").empty());
  CHECK(cli::parse_real_list("0, 0.5,1e-1") == std::vector<double>{0.0, 0.5, 0.1});
}

TEST_CASE("rendered config round-trips through the parser") {
  cli::RunConfig cfg;
  cli::apply_setting(cfg, "mode", "fp");
  cli::apply_setting(cfg, "beta", "0.0125");
  cli::apply_setting(cfg, "dataset_dir", "/data/x");
  oracle::TempDir dir("render");
  std::ofstream(dir / "r.cfg") << cli::render_config(cfg);
  const auto back = cli::load_run_config(dir / "r.cfg", {});
  CHECK(cli::resolved_settings(back) == cli::resolved_settings(cfg));
  // Every documented key appears in the render.
  const auto text = cli::render_config(cfg);
  for (const auto& k : cli::config_keys()) CHECK(text.find(std::string(k.key) + " = ") != std::string::npos);
}

TEST_CASE("help documents every key") {
  const auto top = run_cli({"--help"});
  CHECK(top.code == 0);
  for (const char* sub : {"train", "probe", "attack", "gen-sbm"}) CHECK(top.out.find(sub) != std::string::npos);
  const auto help = run_cli({"train", "--help"});
  CHECK(help.code == 0);
  for (const auto& k : cli::config_keys()) CHECK(help.out.find(std::string("--") + k.key) != std::string::npos);
  CHECK(run_cli({"bogus"}).code == 2);
  CHECK(run_cli({}).code == 2);
}

TEST_CASE("gen-sbm") {
  oracle::TempDir dir("gen");
  SUBCASE("two 4-cliques") {
    const auto r = run_cli({"gen-sbm", "--blocks", "4,4", "--p-in", "1", "--p-out", "0", "--out-dir",
                            (dir / "c").string()});
    REQUIRE(r.code == 0);
    CHECK(count_lines(oracle::read_file(dir / "c" / "edges.tsv")) == 12);
    const auto ds = graph::load_dataset(dir / "c");
    CHECK_NOTHROW(graph::validate(ds));
    CHECK(ds.num_nodes == 8);
  }
  SUBCASE("same seed, same files") {
    const std::vector<std::string> args{"gen-sbm", "--blocks", "20,25", "--p-in", "0.3", "--p-out", "0.05",
                                        "--seed", "9"};
    auto a = args, b = args;
    a.insert(a.end(), {"--out-dir", (dir / "a").string()});
    b.insert(b.end(), {"--out-dir", (dir / "b").string()});
    REQUIRE(run_cli(a).code == 0);
    REQUIRE(run_cli(b).code == 0);
    for (const char* f : {"meta.json", "edges.tsv", "features.csv", "labels.txt", "split.json"}) {
      CHECK(oracle::read_file(dir / "a" / f) == oracle::read_file(dir / "b" / f));
    }
  }
  SUBCASE("invalid parameters and unwritable directories") {
    CHECK(run_cli({"gen-sbm", "--p-in", "0.1", "--p-out", "0.5", "--out-dir", (dir / "x").string()}).code == 2);
    std::ofstream(dir / "file") << "x";
    CHECK(run_cli({"gen-sbm", "--out-dir", (dir / "file" / "sub").string()}).code == 4);
  }
}

TEST_CASE("train subcommand") {
  oracle::TempDir dir("train");
  const auto data = dir / "data";
  REQUIRE(run_cli({"gen-sbm", "--blocks", "20,20", "--p-in", "0.2", "--p-out", "0.02", "--feature-dim", "3",
                   "--seed", "1", "--out-dir", data.string()})
              .code == 0);
  const auto before = cli::dataset_fingerprint(data);
  std::ofstream(dir / "run.cfg") << "mode = vanilla\nepochs = 15\nhidden_dims = 4\noptimizer = adam\n"
                                 << "dataset_dir = " << data.string() << "\nout_dir = " << (dir / "out").string()
                                 << "\n";

  SUBCASE("ten-seed sweep writes a complete summary") {
    const auto r = run_cli({"train", "--config", (dir / "run.cfg").string()});
    REQUIRE(r.code == 0);
    const auto summary = json::parse(oracle::read_file(dir / "out" / "summary.json"));
    CHECK(summary["runs"].size() == 10);
    CHECK(summary["test_acc"].contains("mean"));
    CHECK(summary["test_acc"].contains("std"));
    CHECK(summary["generalization_gap"].contains("mean"));
    for (const auto& run : summary["runs"]) {
      CHECK(fs::exists(dir / "out" / run["checkpoint"].get<std::string>()));
      const auto csv = oracle::read_file(dir / "out" / run["metrics"].get<std::string>());
      CHECK(count_lines(csv) == 16);
    }
    const auto manifest = json::parse(oracle::read_file(dir / "out" / "manifest.json"));
    CHECK(manifest["dataset_fingerprint"] == before);
    CHECK(manifest["tool_version"] == cli::kToolVersion);
    CHECK(manifest["config"]["epochs"] == "15");
    CHECK(manifest["config"]["rho_w"] == "0.01");
    CHECK(cli::dataset_fingerprint(data) == before);
  }
  SUBCASE("manifest re-run is byte-identical") {
    REQUIRE(run_cli({"train", "--config", (dir / "run.cfg").string(), "--seeds", "1,2", "--mode", "cap"}).code == 0);
    const auto summary = oracle::read_file(dir / "out" / "summary.json");
    const auto metrics = oracle::read_file(dir / "out" / "seed_2" / "metrics.csv");
    fs::copy_file(dir / "out" / "manifest.json", dir / "manifest.json");
    REQUIRE(run_cli({"train", "--config", (dir / "manifest.json").string()}).code == 0);
    CHECK(oracle::read_file(dir / "out" / "summary.json") == summary);
    CHECK(oracle::read_file(dir / "out" / "seed_2" / "metrics.csv") == metrics);
  }
  SUBCASE("validation and failure exit codes") {
    CHECK(run_cli({"train", "--config", (dir / "run.cfg").string(), "--skip_epochs", "16"}).code == 2);
    CHECK(run_cli({"train", "--config", (dir / "run.cfg").string(), "--mode", "sideways"}).code == 2);
    CHECK(run_cli({"train", "--config", (dir / "missing.cfg").string()}).code == 2);
    CHECK(run_cli({"train", "--epochs", "3"}).code == 2);
    CHECK(run_cli({"train", "--config", (dir / "run.cfg").string(), "--dataset_dir", (dir / "nowhere").string()})
              .code == 4);
    CHECK(run_cli({"train", "--config", (dir / "run.cfg").string(), "--optimizer", "sgd", "--lr", "1e300",
                   "--seeds", "1"})
              .code == 3);
  }
  SUBCASE("a changed dataset is refused when re-running a manifest") {
    REQUIRE(run_cli({"train", "--config", (dir / "run.cfg").string(), "--seeds", "1"}).code == 0);
    fs::copy_file(dir / "out" / "manifest.json", dir / "manifest.json");
    auto feats = oracle::read_file(data / "features.csv");
    feats[0] = feats[0] == '1' ? '2' : '1';
    std::ofstream(data / "features.csv", std::ios::binary) << feats;
    CHECK(run_cli({"train", "--config", (dir / "manifest.json").string()}).code == 2);
  }
  SUBCASE("resplit draws a fresh split per seed") {
    REQUIRE(run_cli({"train", "--config", (dir / "run.cfg").string(), "--seeds", "1,2", "--resplit", "true"})
                .code == 0);
    CHECK(cli::dataset_fingerprint(data) == before);
  }
}

TEST_CASE("probe subcommand") {
  Workspace ws;
  const auto ckpt = (ws.run / "seed_1" / "model.ckpt").string();
  const auto out = ws.dir / "probe";
  SUBCASE("both kinds, reproducible") {
    const std::vector<std::string> args{"probe", "--checkpoint", ckpt, "--dataset-dir", ws.data.string(),
                                        "--kind", "both", "--directions", "3", "--grid-size", "7",
                                        "--alpha-ref", "1", "--seed", "4", "--out-dir", out.string()};
    REQUIRE(run_cli(args).code == 0);
    CHECK(fs::exists(out / "profile_weight.csv"));
    CHECK(fs::exists(out / "profile_feature.csv"));
    const auto w = oracle::read_file(out / "profile_weight.csv");
    const auto f = oracle::read_file(out / "profile_feature.csv");
    CHECK(count_lines(w) == 1 + 3 * 7);
    const auto report = json::parse(oracle::read_file(out / "sharpness.json"));
    CHECK(report["kinds"].contains("weight"));
    CHECK(report["kinds"].contains("feature"));
    REQUIRE(run_cli(args).code == 0);
    CHECK(oracle::read_file(out / "profile_weight.csv") == w);
    CHECK(oracle::read_file(out / "profile_feature.csv") == f);
  }
  SUBCASE("grid without zero is rejected") {
    CHECK(run_cli({"probe", "--checkpoint", ckpt, "--dataset-dir", ws.data.string(), "--alphas", "-1,1",
                   "--out-dir", out.string()})
              .code == 2);
  }
  SUBCASE("dimension mismatch is rejected") {
    const auto other = ws.dir / "other";
    REQUIRE(run_cli({"gen-sbm", "--blocks", "10,10", "--feature-dim", "7", "--out-dir", other.string()}).code == 0);
    CHECK(run_cli({"probe", "--checkpoint", ckpt, "--dataset-dir", other.string(), "--out-dir", out.string()}).code ==
          2);
  }
  SUBCASE("alpha_ref off the grid is rejected") {
    CHECK(run_cli({"probe", "--checkpoint", ckpt, "--dataset-dir", ws.data.string(), "--grid-size", "5",
                   "--alpha-ref", "0.3", "--out-dir", out.string()})
              .code == 2);
  }
  SUBCASE("missing checkpoint is an IO error") {
    CHECK(run_cli({"probe", "--checkpoint", (ws.dir / "none.ckpt").string(), "--dataset-dir", ws.data.string(),
                   "--out-dir", out.string()})
              .code == 4);
  }
}

TEST_CASE("attack subcommand") {
  Workspace ws;
  const auto ckpt = (ws.run / "seed_1" / "model.ckpt").string();
  const auto csv = ws.dir / "attack.csv";
  SUBCASE("sigma 0 is the clean accuracy") {
    REQUIRE(run_cli({"attack", "--checkpoint", ckpt, "--dataset-dir", ws.data.string(), "--sigmas", "0",
                     "--trials", "3", "--out", csv.string()})
                .code == 0);
    const auto summary = json::parse(oracle::read_file(ws.run / "summary.json"));
    const double clean = summary["runs"][0]["test_acc"].get<double>();
    std::istringstream in(oracle::read_file(csv));
    std::string header, row;
    std::getline(in, header);
    std::getline(in, row);
    CHECK(header == "sigma,mean_acc,std_acc");
    CHECK(row == "0," + text::format_real(clean) + ",0");
  }
  SUBCASE("bad sigma lists") {
    CHECK(run_cli({"attack", "--checkpoint", ckpt, "--dataset-dir", ws.data.string(), "--sigmas", "0.5,-1",
                   "--out", csv.string()})
              .code == 2);
    CHECK(run_cli({"attack", "--checkpoint", ckpt, "--dataset-dir", ws.data.string(), "--sigmas", "", "--out",
                   csv.string()})
              .code == 2);
  }
}

TEST_CASE("thread budget") {
  ::setenv("CAPGNN_THREADS", "4", 1);
  CHECK(cli::thread_budget() == 4);
  ::setenv("CAPGNN_THREADS", "zero", 1);
  CHECK(cli::thread_budget() == 1);
  ::unsetenv("CAPGNN_THREADS");
  CHECK(cli::thread_budget() == 1);
}
