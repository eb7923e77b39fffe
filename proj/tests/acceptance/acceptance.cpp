// Acceptance run: one PASS/FAIL line per criterion 1..9.
// Exit status is the number of failed criteria.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "cocoa/cli/cli.hpp"
#include "cocoa/data/dataset_io.hpp"
#include "cocoa/data/feature_csv.hpp"
#include "cocoa/errors.hpp"
#include "cocoa/eval/ablation.hpp"
#include "cocoa/eval/gradcheck.hpp"
#include "cocoa/eval/synthesis.hpp"
#include "cocoa/model/checkpoint.hpp"
#include "cocoa/model/networks.hpp"
#include "cocoa/train/stages.hpp"

using namespace cocoa;
namespace fs = std::filesystem;
using ad::Tensor;

namespace {

// Tolerances and thresholds, fixed.
constexpr double kGradTolerance = 1e-4;
constexpr double kGradSeconds = 120.0;
constexpr std::size_t kGradCoords = 64;
constexpr double kBnMeanTol = 1e-9;
constexpr double kBnVarTol = 1e-4;
constexpr double kProjectionTol = 1e-10;
constexpr double kChance = 0.25;
constexpr double kMarginOverChance = 0.10;
constexpr double kPValue = 0.01;
constexpr double kPipelineSeconds = 600.0;
constexpr double kProbeChance = 1.0 / 3.0;
constexpr double kConditionedMargin = 0.15;
constexpr double kSemanticBand = 0.10;
constexpr double kPixelProbe = 0.90;
constexpr std::uint64_t kDataSeed = 7;
const std::vector<std::uint64_t> kSeeds{1, 2, 3, 4, 5};
const std::vector<int> kTargets{0, 1, 2, 3};

struct Line {
  bool pass = true;
  std::ostringstream detail;
  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

int failures = 0;

void report(int n, const std::string& title, Line& l) {
  std::printf("criterion %d %s: %s:%s\n", n, l.pass ? "PASS" : "FAIL", title.c_str(), l.detail.str().c_str());
  std::fflush(stdout);
  failures += !l.pass;
}

void guarded(int n, const std::string& title, const std::function<void(Line&)>& body) {
  Line l;
  try {
    body(l);
  } catch (const std::exception& e) {
    l.pass = false;
    l.detail << " [exception: " << e.what() << "]";
  }
  report(n, title, l);
}

Tensor random_tensor(ad::Shape s, std::mt19937_64& rng, double lo, double hi) {
  Tensor t(s);
  std::uniform_real_distribution<double> u(lo, hi);
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = u(rng);
  return t;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cocoa_acceptance_" + std::to_string(::getpid()) + "_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

template <class E, class F>
bool throws_naming(F&& f, const std::string& needle) {
  try {
    f();
  } catch (const E& e) {
    return std::string(e.what()).find(needle) != std::string::npos;
  }
  return false;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void criterion1(Line& l) {
  const auto t0 = std::chrono::steady_clock::now();
  eval::GradCheckSuiteOptions opt;
  opt.seed = 2024;
  opt.coords_per_parameter = kGradCoords;
  opt.tolerance = kGradTolerance;
  const auto cases = eval::run_grad_check_suite(opt);
  const double secs = seconds_since(t0);
  double worst = 0.0;
  std::size_t checked = 0, skipped = 0;
  for (const auto& c : cases) {
    worst = std::max(worst, c.report.max_relative_error);
    checked += c.report.checked;
    skipped += c.report.skipped_at_kinks;
    l.require(c.report.passed, c.name + " " + c.report.summary());
  }
  for (const char* need : {"L_AGG", "L_D", "L_G", "L_CLS"}) {
    bool found = false;
    for (const auto& c : cases) found |= c.name == need && c.report.checked > 0;
    l.require(found, std::string(need) + " checked");
  }
  l.detail << " " << cases.size() << " cases, " << checked << " coords, " << skipped
           << " skipped at kinks, max rel err " << worst << ", " << secs << " s";
  l.require(worst < kGradTolerance, "max relative error");
  l.require(secs < kGradSeconds, "runtime");
}

void criterion2(Line& l) {
  std::mt19937_64 rng(5);
  double worst_mean = 0.0, worst_var = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const double scale = std::pow(10.0, trial % 4);
    const Tensor x = random_tensor({8, 4}, rng, -scale, scale);
    ad::Tape t;
    const Tensor xhat = t.value(ad::normalize(t, t.constant(x), ad::BnMode::batch_eval, nullptr));
    for (std::size_t j = 0; j < 4; ++j) {
      double m = 0.0, v = 0.0;
      for (std::size_t i = 0; i < 8; ++i) m += xhat.at(i, j);
      m /= 8.0;
      for (std::size_t i = 0; i < 8; ++i) v += (xhat.at(i, j) - m) * (xhat.at(i, j) - m);
      v /= 8.0;
      worst_mean = std::max(worst_mean, std::abs(m));
      worst_var = std::max(worst_var, std::abs(v - 1.0));
    }
  }
  l.detail << " max |mean| " << worst_mean << ", max |var-1| " << worst_var;
  l.require(worst_mean < kBnMeanTol, "mean");
  l.require(worst_var < kBnVarTol, "variance");

  model::Generator gen(model::kContextDim, 3);
  for (const char* n : {"generator.est1.fc2.weight", "generator.est1.fc2.bias", "generator.est2.fc2.weight",
                        "generator.est2.fc2.bias"})
    gen.params().at(n).value.fill(0.0);
  const Tensor z = random_tensor({10, model::kNoiseDim}, rng, -1.0, 1.0);
  const std::vector<std::size_t> rows{0, 1, 2, 3, 4, 0, 1, 2, 3, 4};
  auto run = [&](const Tensor& ctx) {
    ad::Tape t;
    return t.value(gen.forward(t, t.constant(z), t.constant(ctx), rows, ad::BnMode::batch_eval, model::Grad::off));
  };
  const Tensor base = run(random_tensor({5, model::kContextDim}, rng, 0.0, 1.0));
  bool invariant = true;
  for (int k = 0; k < 5; ++k) invariant &= run(random_tensor({5, model::kContextDim}, rng, -3.0, 3.0)) == base;
  l.detail << ", identity estimators: output " << (invariant ? "invariant" : "varies") << " over 5 contexts";
  l.require(invariant, "context invariance");
}

void criterion3(Line& l) {
  std::mt19937_64 rng(9);
  model::Discriminator disc(4);
  model::DomainEmbedding edisc("E_disc", 5);
  const std::size_t B = 9;
  const Tensor f = random_tensor({B, model::kFeatureDim}, rng, -1.0, 1.0);
  const std::vector<std::size_t> rows{0, 1, 2, 0, 1, 2, 0, 1, 2};
  auto score = [&](const Tensor& a) {
    ad::Tape t;
    return t.value(disc.forward(t, t.constant(f), t.constant(a), t.constant(edisc.table().value), rows,
                                ad::BnMode::batch_eval, model::Grad::off));
  };
  const Tensor zero({B, model::kAttrDim}, 0.0);
  Tensor head;
  {
    ad::Tape t;
    auto h = disc.trunk(t, t.constant(f), t.constant(edisc.table().value), rows, ad::BnMode::batch_eval,
                        model::Grad::off);
    head = t.value(disc.head(t, h, model::Grad::off));
  }
  const Tensor s0 = score(zero);
  l.require(s0 == head, "zero attribute equals head");
  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor a1 = random_tensor({B, model::kAttrDim}, rng, -1.0, 1.0);
    const Tensor a2 = random_tensor({B, model::kAttrDim}, rng, -1.0, 1.0);
    const double alpha = std::uniform_real_distribution<double>(-2.0, 2.0)(rng);
    Tensor mix = a1;
    for (std::size_t i = 0; i < mix.numel(); ++i) mix[i] = a1[i] + alpha * a2[i];
    const Tensor s1 = score(a1), s2 = score(a2), sm = score(mix);
    for (std::size_t i = 0; i < B; ++i) {
      worst = std::max(worst, std::abs((sm[i] - s0[i]) - (s1[i] - s0[i]) - alpha * (s2[i] - s0[i])));
    }
  }
  l.detail << " zero-attribute score " << (s0 == head ? "==" : "!=") << " D_l(D_f), superposition max err " << worst;
  l.require(worst < kProjectionTol, "superposition");
}

void criterion4(Line& l) {
  std::mt19937_64 rng(13);
  const Tensor table = random_tensor({3, model::kEmbedDim}, rng, -2.0, 2.0);
  std::size_t exact = 0, total = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      const auto e1 = eval::interpolate(table, i, j, 1.0);
      const auto e0 = eval::interpolate(table, i, j, 0.0);
      const auto eh = eval::interpolate(table, i, j, 0.5);
      for (std::size_t d = 0; d < model::kEmbedDim; ++d) {
        exact += e1.vector[d] == table.at(i, d);
        exact += e0.vector[d] == table.at(j, d);
        exact += eh.vector[d] == 0.5 * table.at(i, d) + (1.0 - 0.5) * table.at(j, d);
        total += 3;
      }
    }
  }
  const auto draws = eval::interpolate_embeddings(table, 500, rng);
  std::size_t draw_exact = 0;
  for (const auto& e : draws) {
    bool ok = true;
    for (std::size_t d = 0; d < model::kEmbedDim; ++d) {
      ok &= e.vector[d] == e.lambda * table.at(e.parent_i, d) + (1.0 - e.lambda) * table.at(e.parent_j, d);
    }
    draw_exact += ok;
  }
  l.detail << " endpoint/midpoint " << exact << "/" << total << " exact, sampled draws " << draw_exact << "/"
           << draws.size() << " exact";
  l.require(exact == total, "endpoint and midpoint identities");
  l.require(draw_exact == draws.size(), "sampled draws");
}

void criterion8(Line& l) {
  // Two independent runs of the whole CLI chain, compared file by file.
  nlohmann::json cfg = {{"train",
                         {{"seed", 4},
                          {"stage1", {{"epochs", 3}}},
                          {"stage2", {{"epochs", 4}}},
                          {"stage3", {{"epochs", 3}}}}}};
  std::vector<fs::path> dirs{scratch("repro_a"), scratch("repro_b")};
  for (const auto& d : dirs) {
    std::ofstream(d / "in.json") << cfg.dump();
    const std::string out = d.string();
    std::ostringstream o, e;
    for (std::vector<std::string> args :
         {std::vector<std::string>{"gen-data", "--config", (d / "in.json").string()}, {"train-stage1"}, {"train-gan"},
          {"train-gan", "--variant", "attribute-only"}, {"synthesize", "--variant", "full"}, {"train-classifier"},
          {"evaluate"}}) {
      args.insert(args.end(), {"--out", out});
      const int code = cli::run(args, o, e);
      if (code != 0) throw std::runtime_error(args[0] + " exited " + std::to_string(code) + ": " + e.str());
    }
    fs::remove(d / "in.json");
  }
  std::size_t compared = 0, differing = 0, metrics = 0, checkpoints = 0;
  for (const auto& entry : fs::recursive_directory_iterator(dirs[0])) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), dirs[0]);
    ++compared;
    const auto other = dirs[1] / rel;
    if (!fs::exists(other) || data::read_file(entry.path()) != data::read_file(other)) {
      ++differing;
      l.detail << " differs: " << rel.string();
    }
    const auto name = rel.string();
    metrics += name.ends_with("_metrics.csv");
    checkpoints += name.ends_with(".bin") && name.find("data") == std::string::npos;
  }
  std::size_t in_b = 0;
  for (const auto& entry : fs::recursive_directory_iterator(dirs[1])) in_b += entry.is_regular_file();
  l.detail << " " << compared << " files (" << metrics << " metrics CSVs, " << checkpoints
           << " checkpoint blobs), " << differing << " differ";
  l.require(differing == 0 && in_b == compared, "bitwise identical runs");
  l.require(metrics >= 4 && checkpoints >= 8, "artifact coverage");
  for (const auto& d : dirs) fs::remove_all(d);
}

void criterion9(Line& l) {
  data::BenchmarkConfig bc;
  bc.train_per_cell = 10;
  bc.val_per_cell = 3;
  bc.test_per_cell = 4;
  const auto b = data::build_benchmark(bc, 21);
  const auto attrs = b.attributes;
  const auto bytes = data::encode_dataset(b.train);
  l.require(data::decode_dataset(bytes, attrs) == b.train, "dataset round-trip");
  const auto dir = scratch("format");
  data::save_benchmark(dir / "data", b, bc, 21);
  const auto loaded = data::load_benchmark(dir / "data");
  l.require(loaded.train == b.train && loaded.val == b.val && loaded.test == b.test && loaded.split == b.split,
            "benchmark directory round-trip");

  auto flipped = bytes;
  flipped[data::kDatasetHeaderBytes + 333] ^= 0x04;
  l.require(throws_naming<FormatError>([&] { data::decode_dataset(flipped, attrs); }, "checksum"),
            "dataset bit flip named");
  auto cut = bytes;
  cut.resize(cut.size() / 2);
  l.require(throws_naming<FormatError>([&] { data::decode_dataset(cut, attrs); }, "truncated"),
            "dataset truncation named");
  auto magic = bytes;
  magic[1] = '?';
  l.require(throws_naming<FormatError>([&] { data::decode_dataset(magic, attrs); }, "magic"), "dataset magic named");

  train::Stage1Model m(3), m2(99);
  const auto csets = std::as_const(m).sets();
  model::save_checkpoint(dir / "ck", "stage1", {{"seed", 3}}, csets);
  auto targets = m2.sets();
  model::load_checkpoint(dir / "ck", "stage1", targets);
  bool same = true;
  for (std::size_t s = 0; s < csets.size(); ++s) {
    const auto a = csets[s]->all();
    const auto c = std::as_const(*targets[s]).all();
    for (std::size_t i = 0; i < a.size(); ++i) same &= a[i]->value == c[i]->value;
  }
  l.require(same, "checkpoint round-trip");
  l.require(throws_naming<DependencyError>([&] { model::load_checkpoint(dir / "ck", "stage2", targets); }, "stage"),
            "checkpoint stage tag named");
  train::GanModel gan(false, 1);
  auto wrong = gan.sets();
  l.require(throws_naming<FormatError>([&] { model::load_checkpoint(dir / "ck", "stage1", wrong); }, "census"),
            "checkpoint census named");
  auto blob = data::read_file(dir / "ck.bin");
  blob[100] ^= 0x20;
  data::write_file(dir / "ck.bin", blob);
  l.require(throws_naming<FormatError>([&] { model::load_checkpoint(dir / "ck", "stage1", targets); }, "checksum"),
            "checkpoint bit flip named");
  blob.resize(blob.size() - 7);
  data::write_file(dir / "ck.bin", blob);
  l.require(throws_naming<FormatError>([&] { model::load_checkpoint(dir / "ck", "stage1", targets); }, "size"),
            "checkpoint truncation named");

  std::vector<data::FeatureRecord> recs(4);
  std::mt19937_64 rng(2);
  for (int i = 0; i < 4; ++i) {
    const Tensor v = random_tensor({5}, rng, -1e3, 1e3);
    recs[i].feature.assign(v.storage().begin(), v.storage().end());
    recs[i].feature[0] = std::ldexp(1.0, -1070 + i);  // subnormals survive too
    recs[i].class_id = 8 + i;
    recs[i].provenance = data::Provenance{i % 3, (i + 1) % 3, 1.0 / (i + 3)};
  }
  data::write_feature_records(dir / "f.csv", recs, data::FeatureColumns::provenance);
  l.require(data::load_feature_records(dir / "f.csv") == recs, "feature CSV round-trip");
  l.require(throws_naming<ParseError>(
                [&] { data::parse_feature_records("feature_0,class_id,domain_id\n0.5,9,1\nnan?,9,1\n"); }, "line 3"),
            "CSV parse error names its line");
  l.detail << " dataset, benchmark dir, checkpoint and feature CSV round-trips; corruptions rejected with named errors";
  fs::remove_all(dir);
}

// Domain probe directly on pixels: transforms must be linearly separable.
double pixel_probe() {
  data::BenchmarkConfig bc;
  bc.train_per_cell = 40;
  bc.val_per_cell = 1;
  bc.test_per_cell = 80;
  const auto b = data::build_benchmark(bc, kDataSeed);
  std::vector<data::DatasetExample> all(b.train.begin(), b.train.end());
  all.insert(all.end(), b.test.begin(), b.test.end());
  std::vector<int> domains;
  for (const auto& e : all) domains.push_back(e.domain_id);
  return eval::linear_probe(train::image_matrix(all), domains, 3);
}

void ablation_criteria() {
  const auto t0 = std::chrono::steady_clock::now();
  eval::AblationResult result;
  std::string error;
  try {
    result = eval::run_ablation(eval::PipelineConfig{}, kDataSeed, kTargets, kSeeds, cli::worker_count());
  } catch (const std::exception& e) {
    error = e.what();
  }
  const double total_secs = seconds_since(t0);

  if (!error.empty()) {
    for (int n : {5, 6, 7}) {
      Line l;
      l.require(false, "ablation raised: " + error);
      report(n, "ablation", l);
    }
    return;
  }

  std::ofstream("acceptance_ablation.csv") << eval::ablation_csv(result.rows);
  const auto summary = result.summary();
  std::map<std::string, eval::VariantSummary> by;
  for (const auto& s : summary) by[s.variant] = s;
  std::printf("ablation over targets 0..3 x seeds 1..5 (data seed %llu), %.0f s total\n",
              static_cast<unsigned long long>(kDataSeed), total_secs);
  std::printf("  variant  mean    std     per-target means (t0 t1 t2 t3)\n");
  for (const auto& s : summary) {
    std::printf("  %-7s  %.4f  %.4f ", s.variant.c_str(), s.mean, s.stddev);
    for (int t : kTargets) {
      double m = 0.0;
      int n = 0;
      for (const auto& r : result.rows)
        if (r.variant == s.variant && r.target_domain == t) m += r.accuracy, ++n;
      std::printf(" %.4f", n ? m / n : 0.0);
    }
    std::printf("\n");
  }

  {
    Line l;
    std::size_t correct = 0, total = 0;
    for (const auto& r : result.rows)
      if (r.variant == "S4") correct += r.correct, total += r.total;
    const double p = eval::binomial_upper_tail(correct, total, kChance);
    double slowest = 0.0;
    for (const auto& pr : result.pipelines) slowest = std::max(slowest, pr.seconds);
    l.detail << " S4 mean " << by["S4"].mean << " over " << by["S4"].cells << " cells (need >= " << kChance + kMarginOverChance
             << "), pooled " << correct << "/" << total << " p = " << p << ", slowest cell " << slowest << " s";
    l.require(by["S4"].cells == kTargets.size() * kSeeds.size(), "all cells");
    l.require(by["S4"].mean >= kChance + kMarginOverChance, "S4 mean over chance + 10 points");
    l.require(p < kPValue, "binomial test");
    l.require(slowest < kPipelineSeconds, "pipeline runtime");
    report(5, "end-to-end unseen-class, unseen-domain accuracy", l);
  }
  {
    Line l;
    l.detail << " S1 " << by["S1"].mean << " S2 " << by["S2"].mean << " S3 " << by["S3"].mean << " S4 "
             << by["S4"].mean;
    l.require(by["S4"].mean >= by["S2"].mean, "mean(S4) >= mean(S2)");
    l.require(by["S3"].mean >= by["S1"].mean, "mean(S3) >= mean(S1)");
    report(6, "ablation ordering trend", l);
  }
  {
    Line l;
    double cond = 0.0, sem = 0.0, cond_min = 1.0, sem_lo = 1.0, sem_hi = 0.0;
    for (const auto& pr : result.pipelines) {
      cond += pr.probe_conditioned;
      sem += pr.probe_semantic;
      cond_min = std::min(cond_min, pr.probe_conditioned);
      sem_lo = std::min(sem_lo, pr.probe_semantic);
      sem_hi = std::max(sem_hi, pr.probe_semantic);
    }
    const double n = static_cast<double>(result.pipelines.size());
    cond /= n;
    sem /= n;
    const double pixels = pixel_probe();
    l.detail << " conditioned mean " << cond << " (min " << cond_min << "), semantic mean " << sem << " (range "
             << sem_lo << ".." << sem_hi << "), pixel-space " << pixels;
    l.require(cond >= kProbeChance + kConditionedMargin, "conditioned probe");
    l.require(std::abs(sem - kProbeChance) <= kSemanticBand, "semantic probe");
    l.require(pixels > kPixelProbe, "pixel-space probe");
    report(7, "domain-information probe", l);
  }
}

}  // namespace

int main(int argc, char** argv) {
  const bool skip_ablation = argc > 1 && std::string(argv[1]) == "--skip-ablation";
  guarded(1, "gradient integrity", criterion1);
  guarded(2, "conditional BN contract", criterion2);
  guarded(3, "projection discriminator identities", criterion3);
  guarded(4, "mixup exactness", criterion4);
  guarded(8, "reproducibility", criterion8);
  guarded(9, "format robustness", criterion9);
  if (!skip_ablation) ablation_criteria();
  std::printf("%d criteria failed\n", failures);
  return failures;
}
