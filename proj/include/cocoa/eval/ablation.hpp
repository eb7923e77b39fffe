#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "cocoa/data/benchmark.hpp"
#include "cocoa/eval/synthesis.hpp"
#include "cocoa/train/config.hpp"
#include "cocoa/train/metrics.hpp"

namespace cocoa::eval {

struct PipelineConfig {
  data::BenchmarkConfig benchmark;
  train::TrainConfig train;
  SynthesisConfig synthesis;
};

void to_json(nlohmann::json& j, const PipelineConfig& c);
void from_json(const nlohmann::json& j, PipelineConfig& c);

// Accuracy of one variant on one (target, seed) cell.
struct VariantScore {
  std::string variant;  // S1..S4
  int target_domain = 0;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  std::size_t correct = 0;
  std::size_t total = 0;
};

struct PipelineResult {
  std::vector<VariantScore> scores;  // S1, S2, S3, S4
  double probe_conditioned = 0.0;    // domain probe on full-context source-only features
  double probe_semantic = 0.0;       // same probe on attribute-only features
  double stage1_val_accuracy = 0.0;
  double stage1_val_rotation = 0.0;
  std::map<std::string, train::Metrics> metrics;  // per training run
  double seconds = 0.0;
};

// Stage 1, both GANs (attribute-only and full context) and one classifier
// per generative variant, all trained from the same stage-1 model.
PipelineResult run_pipeline(const data::Benchmark& benchmark, const PipelineConfig& config, std::uint64_t seed);

struct VariantSummary {
  std::string variant;
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation over cells
  std::size_t cells = 0;
};

struct AblationResult {
  std::vector<VariantScore> rows;  // variant-major within each (target, seed)
  std::vector<PipelineResult> pipelines;
  std::vector<VariantSummary> summary() const;
};

// Every target in `targets` crossed with every seed; the benchmark for a
// target is rebuilt from data_seed so all seeds see identical test images.
// Jobs run on up to `workers` threads with results in a fixed order.
// Throws ConfigurationError for fewer than 5 seeds.
AblationResult run_ablation(const PipelineConfig& config, std::uint64_t data_seed, std::span<const int> targets,
                            std::span<const std::uint64_t> seeds, int workers);

// Header `variant,target_domain,seed,accuracy`.
std::string ablation_csv(std::span<const VariantScore> rows);

// P(X >= k) for X ~ Binomial(n, p).
double binomial_upper_tail(std::size_t k, std::size_t n, double p);

}  // namespace cocoa::eval
