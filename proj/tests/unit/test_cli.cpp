#include <algorithm>
#include <map>
#include <set>
#include <unistd.h>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cocoa/cli/cli.hpp"
#include "cocoa/data/benchmark.hpp"
#include "cocoa/data/dataset_io.hpp"
#include "cocoa/errors.hpp"
#include "cocoa/eval/ablation.hpp"
#include "cocoa/eval/gradcheck.hpp"
#include "doctest.h"

using namespace cocoa;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result cocoa_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cocoa_cli_" + std::to_string(::getpid()) + "_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

const json kTiny = json::parse(R"({
  "benchmark": {"train_per_cell": 12, "val_per_cell": 4, "test_per_cell": 5},
  "train": {"stage1": {"epochs": 2, "batch": 32}, "stage2": {"epochs": 2, "batch": 32},
            "stage3": {"epochs": 2, "batch": 32}},
  "synthesis": {"per_class": 40}
})");

fs::path tiny_config(const fs::path& dir) {
  const fs::path p = dir / "tiny.json";
  std::ofstream(p) << kTiny.dump();
  return p;
}

}  // namespace

TEST_CASE("gen-data twice gives identical dataset files") {
  const auto a = scratch("gen_a"), b = scratch("gen_b");
  REQUIRE(cocoa_cli({"gen-data", "--seed", "7", "--out", a.string()}).code == 0);
  REQUIRE(cocoa_cli({"gen-data", "--seed", "7", "--out", b.string()}).code == 0);
  for (const char* f : {"train.czbd", "val.czbd", "test.czbd", "manifest.json"}) {
    CAPTURE(f);
    CHECK(slurp(a / "data" / f) == slurp(b / "data" / f));
  }
  const std::string before = slurp(a / "data" / "train.czbd");
  REQUIRE(cocoa_cli({"gen-data", "--seed", "7", "--out", a.string()}).code == 0);
  CHECK(slurp(a / "data" / "train.czbd") == before);
  // 8 seen x 3 sources x 200 train images, 4 unseen x 100 test images
  const auto bench = data::load_benchmark(a / "data");
  CHECK(bench.train.size() == 4800);
  CHECK(bench.test.size() == 400);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("evaluate without a classifier exits 1 and names the artifact") {
  const auto dir = scratch("noclf");
  REQUIRE(cocoa_cli({"gen-data", "--out", dir.string(), "--config", tiny_config(dir).string()}).code == 0);
  const auto r = cocoa_cli({"evaluate", "--out", dir.string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("classifier_full_interpolated") != std::string::npos);

  const auto no_data = scratch("nodata");
  const auto r2 = cocoa_cli({"train-stage1", "--out", no_data.string()});
  CHECK(r2.code == 1);
  CHECK(r2.err.find("manifest.json") != std::string::npos);
  const auto r3 = cocoa_cli({"train-gan", "--out", dir.string()});
  CHECK(r3.code == 1);
  CHECK(r3.err.find("stage1") != std::string::npos);
  fs::remove_all(dir);
  fs::remove_all(no_data);
}

TEST_CASE("usage errors exit 1") {
  const auto dir = scratch("usage");
  CHECK(cocoa_cli({}).code == 1);
  CHECK(cocoa_cli({"frobnicate", "--out", dir.string()}).code == 1);
  CHECK(cocoa_cli({"gen-data", "--out", dir.string(), "--bogus"}).code == 1);
  CHECK(cocoa_cli({"gen-data"}).code == 1);  // --out is required
  CHECK(cocoa_cli({"gen-data", "--out", dir.string(), "--target-domain", "4"}).code == 1);
  CHECK(cocoa_cli({"gen-data", "--out", dir.string(), "--mode", "sideways"}).code == 1);
  CHECK(cocoa_cli({"gen-data", "--out", dir.string(), "--variant", "half"}).code == 1);
  CHECK(cocoa_cli({"gen-data", "--out", dir.string(), "--seed", "-1"}).code == 1);
  CHECK(cocoa_cli({"gen-data", "--help"}).code == 0);

  std::ofstream(dir / "bad.json") << R"({"train": {"stage1": {"lr": 0}}})";
  CHECK(cocoa_cli({"gen-data", "--out", dir.string(), "--config", (dir / "bad.json").string()}).code == 1);
  std::ofstream(dir / "extra.json") << R"({"colour": 1})";
  CHECK(cocoa_cli({"gen-data", "--out", dir.string(), "--config", (dir / "extra.json").string()}).code == 1);
  std::ofstream(dir / "broken.json") << "{";
  CHECK(cocoa_cli({"gen-data", "--out", dir.string(), "--config", (dir / "broken.json").string()}).code == 1);
  fs::remove_all(dir);
}

TEST_CASE("config file and equivalent flags give the same run config") {
  const auto a = scratch("cfg_a"), b = scratch("cfg_b");
  json file = kTiny;
  file["train"]["seed"] = 11;
  file["benchmark"]["target_domain"] = 3;
  file["synthesis"]["mode"] = "source-only";
  file["seeds"] = 6;
  std::ofstream(a / "full.json") << file.dump();
  REQUIRE(cocoa_cli({"gen-data", "--out", a.string(), "--config", (a / "full.json").string()}).code == 0);
  REQUIRE(cocoa_cli({"gen-data", "--out", b.string(), "--config", tiny_config(b).string(), "--seed", "11",
                     "--target-domain", "3", "--mode", "source-only", "--seeds", "6"})
              .code == 0);
  CHECK(slurp(a / "config.json") == slurp(b / "config.json"));
  CHECK(slurp(a / "data" / "test.czbd") == slurp(b / "data" / "test.czbd"));

  // flags win over the file
  REQUIRE(cocoa_cli({"gen-data", "--out", b.string(), "--config", (a / "full.json").string(), "--seed", "12"}).code ==
          0);
  const auto cfg = json::parse(slurp(b / "config.json")).get<cli::RunConfig>();
  CHECK(cfg.seed() == 12);
  CHECK(cfg.target_domain() == 3);
  CHECK(cfg.seeds == 6);

  // a rerun from the written config.json reproduces it
  const auto c = scratch("cfg_c");
  REQUIRE(cocoa_cli({"gen-data", "--out", c.string(), "--config", (a / "config.json").string()}).code == 0);
  CHECK(slurp(c / "config.json") == slurp(a / "config.json"));
  CHECK(slurp(c / "data" / "train.czbd") == slurp(a / "data" / "train.czbd"));
  for (const auto& d : {a, b, c}) fs::remove_all(d);
}

TEST_CASE("COCOA_THREADS caps the worker count") {
  ::setenv("COCOA_THREADS", "1", 1);
  CHECK(cli::worker_count() == 1);
  ::setenv("COCOA_THREADS", "zero", 1);
  CHECK_THROWS_AS(cli::worker_count(), ConfigurationError);
  const auto dir = scratch("threads");
  CHECK(cocoa_cli({"gen-data", "--out", dir.string()}).code == 1);
  ::unsetenv("COCOA_THREADS");
  CHECK(cli::worker_count() >= 1);
  fs::remove_all(dir);
}

TEST_CASE("subcommand chain reproduces the in-process pipeline, bytewise on rerun") {
  const auto dir = scratch("chain");
  const auto cfg = tiny_config(dir);
  const std::string out = dir.string();
  REQUIRE(cocoa_cli({"gen-data", "--seed", "7", "--out", out, "--config", cfg.string(), "--target-domain", "1"})
              .code == 0);
  REQUIRE(cocoa_cli({"train-stage1", "--seed", "3", "--out", out}).code == 0);
  REQUIRE(cocoa_cli({"train-gan", "--out", out}).code == 0);
  REQUIRE(cocoa_cli({"synthesize", "--out", out, "--mode", "source-only"}).code == 0);
  REQUIRE(cocoa_cli({"train-classifier", "--out", out}).code == 0);
  REQUIRE(cocoa_cli({"evaluate", "--out", out}).code == 0);
  const auto report = json::parse(slurp(dir / "classifier_full_source-only_evaluation.json"));

  auto pc = kTiny.get<eval::PipelineConfig>();
  pc.benchmark.target_domain = 1;
  const auto bench = data::build_benchmark(pc.benchmark, 7);
  const auto expected = eval::run_pipeline(bench, pc, 3);
  REQUIRE(expected.scores.size() == 4);
  CHECK(expected.scores[2].variant == "S3");
  CHECK(report.at("accuracy").get<double>() == expected.scores[2].accuracy);
  CHECK(report.at("total").get<std::size_t>() == 20);

  // each stage rerun overwrites its artifacts with identical bytes
  const std::vector<std::string> files{"stage1.bin", "stage1.json", "stage1-optim.bin", "stage1_metrics.csv",
                                       "gan_full.bin", "gan_full_metrics.csv", "synthetic_full_source-only.csv",
                                       "classifier_full_source-only.bin"};
  std::vector<std::string> before;
  for (const auto& f : files) before.push_back(slurp(dir / f));
  REQUIRE(cocoa_cli({"train-stage1", "--out", out}).code == 0);
  REQUIRE(cocoa_cli({"train-gan", "--out", out}).code == 0);
  REQUIRE(cocoa_cli({"synthesize", "--out", out}).code == 0);
  REQUIRE(cocoa_cli({"train-classifier", "--out", out}).code == 0);
  for (std::size_t i = 0; i < files.size(); ++i) {
    CAPTURE(files[i]);
    CHECK(slurp(dir / files[i]) == before[i]);
  }

  // --resume on a finished run is a no-op
  REQUIRE(cocoa_cli({"train-stage1", "--out", out, "--resume"}).code == 0);
  CHECK(slurp(dir / "stage1.bin") == before[0]);

  // the attribute-only GAN is a separate artifact; synthesizing from it first needs it trained
  const auto r = cocoa_cli({"synthesize", "--out", out, "--variant", "attribute-only"});
  CHECK(r.code == 1);
  CHECK(r.err.find("gan_attribute-only") != std::string::npos);

  REQUIRE(cocoa_cli({"export-features", "--out", out}).code == 0);
  const auto real = slurp(dir / "features_real.csv");
  CHECK(std::count(real.begin(), real.end(), '\n') == 1 + 288 + 20);
  fs::remove_all(dir);
}

TEST_CASE("training divergence exits 2") {
  const auto dir = scratch("diverge");
  json bad = kTiny;
  bad["train"]["stage1"]["lr"] = 1e300;
  std::ofstream(dir / "bad.json") << bad.dump();
  REQUIRE(cocoa_cli({"gen-data", "--out", dir.string(), "--config", (dir / "bad.json").string()}).code == 0);
  const auto r = cocoa_cli({"train-stage1", "--out", dir.string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("stage1") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("grad-check subcommand") {
  const auto dir = scratch("gradcheck");
  const auto r = cocoa_cli({"grad-check", "--out", dir.string(), "--coords", "8"});
  CHECK(r.code == 0);
  const auto report = json::parse(slurp(dir / "grad_check.json"));
  CHECK(report.size() == 12);
  for (const auto& c : report) CHECK(c.at("passed").get<bool>());
  CHECK(r.out.find("L_AGG PASS") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("ablate --seeds 5 writes 80 rows") {
  const auto dir = scratch("ablate");
  const auto r = cocoa_cli({"ablate", "--seeds", "5", "--out", dir.string(), "--config", tiny_config(dir).string()});
  REQUIRE(r.code == 0);
  std::istringstream csv(slurp(dir / "ablation.csv"));
  std::string line;
  std::getline(csv, line);
  CHECK(line == "variant,target_domain,seed,accuracy");
  int rows = 0;
  std::map<std::string, int> per_variant;
  std::set<std::string> targets;
  while (std::getline(csv, line)) {
    ++rows;
    per_variant[line.substr(0, 2)]++;
    targets.insert(line.substr(3, 1));
  }
  CHECK(rows == 80);
  CHECK(per_variant.size() == 4);
  for (const auto& [v, n] : per_variant) CHECK(n == 20);
  CHECK(targets.size() == 4);
  const auto summary = json::parse(slurp(dir / "ablation_summary.json"));
  CHECK(summary.at("variants").size() == 4);
  CHECK(summary.at("cells").size() == 20);
  CHECK(cocoa_cli({"ablate", "--seeds", "4", "--out", dir.string()}).code == 1);
  fs::remove_all(dir);
}
