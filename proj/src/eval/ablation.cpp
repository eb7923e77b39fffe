#include "cocoa/eval/ablation.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

#include "cocoa/errors.hpp"
#include "cocoa/train/stages.hpp"

namespace cocoa::eval {
namespace {

using nlohmann::json;

VariantScore score(const std::string& variant, const data::Benchmark& b, std::uint64_t seed,
                   const std::vector<int>& predicted) {
  VariantScore s;
  s.variant = variant;
  s.target_domain = b.split.target_domain;
  s.seed = seed;
  s.total = b.test.size();
  for (std::size_t i = 0; i < b.test.size(); ++i) s.correct += predicted[i] == b.test[i].class_id;
  s.accuracy = s.total ? static_cast<double>(s.correct) / static_cast<double>(s.total) : 0.0;
  return s;
}

}  // namespace

void to_json(json& j, const PipelineConfig& c) {
  j = {{"benchmark",
        {{"train_per_cell", c.benchmark.train_per_cell},
         {"val_per_cell", c.benchmark.val_per_cell},
         {"test_per_cell", c.benchmark.test_per_cell},
         {"target_domain", c.benchmark.target_domain}}},
       {"train", c.train},
       {"synthesis",
        {{"per_class", c.synthesis.per_class},
         {"batch", c.synthesis.batch},
         {"mode", to_string(c.synthesis.mode)}}}};
}

void from_json(const json& j, PipelineConfig& c) {
  try {
    if (j.contains("benchmark")) {
      const auto& b = j.at("benchmark");
      c.benchmark.train_per_cell = b.value("train_per_cell", c.benchmark.train_per_cell);
      c.benchmark.val_per_cell = b.value("val_per_cell", c.benchmark.val_per_cell);
      c.benchmark.test_per_cell = b.value("test_per_cell", c.benchmark.test_per_cell);
      c.benchmark.target_domain = b.value("target_domain", c.benchmark.target_domain);
    }
    if (j.contains("train")) c.train = j.at("train").get<train::TrainConfig>();
    if (j.contains("synthesis")) {
      const auto& s = j.at("synthesis");
      c.synthesis.per_class = s.value("per_class", c.synthesis.per_class);
      c.synthesis.batch = s.value("batch", c.synthesis.batch);
      if (s.contains("mode")) c.synthesis.mode = parse_synthesis_mode(s.at("mode").get<std::string>());
    }
  } catch (const json::exception& e) {
    throw ConfigurationError(std::string("pipeline config: ") + e.what());
  }
  if (c.synthesis.per_class < 1 || c.synthesis.batch < 2) {
    throw ConfigurationError("synthesis.per_class must be positive and synthesis.batch at least 2");
  }
}

PipelineResult run_pipeline(const data::Benchmark& b, const PipelineConfig& config, std::uint64_t seed) {
  const auto start = std::chrono::steady_clock::now();
  PipelineResult out;
  const auto& tc = config.train;

  train::Stage1Model stage1(seed);
  train::Stage1Trainer t1(stage1, b.train, b.split, b.attributes, tc.stage1, seed);
  t1.run();
  out.metrics["stage1"] = t1.metrics();
  const auto ev = train::evaluate_stage1(stage1, b.val, b.split, b.attributes);
  out.stage1_val_accuracy = ev.class_accuracy;
  out.stage1_val_rotation = ev.rotation_accuracy;
  out.scores.push_back(score("S1", b, seed, predict_by_attributes(stage1, b.test, b.split, b.attributes)));

  const train::FeatureSet features = train::extract_features(stage1.encoder, b.train);
  const std::vector<int>& unseen = b.split.unseen_classes;

  auto classify = [&](const std::string& variant, const GeneratedDataset& generated) {
    model::Classifier clf(unseen.size(), data::example_seed(seed, 31));
    train::Stage3Trainer t3(clf, generated.features, generated.class_ids, b.split, tc.stage3, seed);
    t3.run();
    out.metrics["stage3_" + variant] = t3.metrics();
    out.scores.push_back(score(variant, b, seed, predict(stage1.encoder, clf, b.test, b.split)));
  };

  SynthesisConfig source_only = config.synthesis;
  source_only.mode = SynthesisMode::source_only;

  {
    train::GanModel gan(true, seed);
    train::Stage2Trainer t2(gan, stage1.projector, features, b.split, b.attributes, tc.stage2, seed);
    t2.run();
    out.metrics["stage2_attribute_only"] = t2.metrics();
    const auto generated = synthesize_unseen(gan, b.split, b.attributes, unseen, source_only, seed);
    out.probe_semantic = domain_probe(generated, seed);
    classify("S2", generated);
  }
  {
    train::GanModel gan(false, seed);
    train::Stage2Trainer t2(gan, stage1.projector, features, b.split, b.attributes, tc.stage2, seed);
    t2.run();
    out.metrics["stage2_full"] = t2.metrics();
    const auto sources = synthesize_unseen(gan, b.split, b.attributes, unseen, source_only, seed);
    out.probe_conditioned = domain_probe(sources, seed);
    classify("S3", sources);
    SynthesisConfig s4 = config.synthesis;
    if (s4.mode == SynthesisMode::source_only) s4.mode = SynthesisMode::interpolated;
    classify("S4", synthesize_unseen(gan, b.split, b.attributes, unseen, s4, seed));
  }
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

std::vector<VariantSummary> AblationResult::summary() const {
  std::vector<VariantSummary> out;
  for (const char* v : {"S1", "S2", "S3", "S4"}) {
    VariantSummary s;
    s.variant = v;
    std::vector<double> acc;
    for (const auto& r : rows)
      if (r.variant == v) acc.push_back(r.accuracy);
    s.cells = acc.size();
    if (!acc.empty()) {
      for (double a : acc) s.mean += a;
      s.mean /= static_cast<double>(acc.size());
      if (acc.size() > 1) {
        double ss = 0.0;
        for (double a : acc) ss += (a - s.mean) * (a - s.mean);
        s.stddev = std::sqrt(ss / static_cast<double>(acc.size() - 1));
      }
    }
    out.push_back(s);
  }
  return out;
}

AblationResult run_ablation(const PipelineConfig& config, std::uint64_t data_seed, std::span<const int> targets,
                            std::span<const std::uint64_t> seeds, int workers) {
  if (seeds.size() < 5) throw ConfigurationError("ablation needs at least 5 seeds, got " + std::to_string(seeds.size()));
  if (targets.empty()) throw ConfigurationError("ablation needs at least one target domain");
  std::vector<data::Benchmark> benches;
  for (int t : targets) {
    data::BenchmarkConfig bc = config.benchmark;
    bc.target_domain = t;
    benches.push_back(data::build_benchmark(bc, data_seed));
  }
  const std::size_t jobs = targets.size() * seeds.size();
  std::vector<PipelineResult> results(jobs);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto worker = [&] {
    for (std::size_t j = next++; j < jobs; j = next++) {
      try {
        results[j] = run_pipeline(benches[j / seeds.size()], config, seeds[j % seeds.size()]);
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(workers, 1)), 1, jobs);
  std::vector<std::thread> pool;
  for (std::size_t i = 1; i < n_threads; ++i) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);

  AblationResult out;
  for (auto& r : results) {
    out.rows.insert(out.rows.end(), r.scores.begin(), r.scores.end());
    out.pipelines.push_back(std::move(r));
  }
  return out;
}

std::string ablation_csv(std::span<const VariantScore> rows) {
  std::string out = "variant,target_domain,seed,accuracy\n";
  for (const auto& r : rows) {
    out += r.variant + "," + std::to_string(r.target_domain) + "," + std::to_string(r.seed) + "," +
           train::format_double(r.accuracy) + "\n";
  }
  return out;
}

double binomial_upper_tail(std::size_t k, std::size_t n, double p) {
  if (k == 0) return 1.0;
  if (k > n) return 0.0;
  // Sum in log space from k upward.
  double total = 0.0;
  const double lp = std::log(p), lq = std::log1p(-p);
  for (std::size_t i = k; i <= n; ++i) {
    const double lg = std::lgamma(static_cast<double>(n) + 1) - std::lgamma(static_cast<double>(i) + 1) -
                      std::lgamma(static_cast<double>(n - i) + 1);
    total += std::exp(lg + static_cast<double>(i) * lp + static_cast<double>(n - i) * lq);
  }
  return std::min(total, 1.0);
}

}  // namespace cocoa::eval
