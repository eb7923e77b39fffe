#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cocoa/data/benchmark.hpp"
#include "cocoa/data/feature_csv.hpp"
#include "cocoa/train/stages.hpp"

namespace cocoa::eval {

// v = lambda * e_i + (1 - lambda) * e_j
struct InterpolatedEmbedding {
  std::vector<double> vector;
  std::size_t parent_i = 0;
  std::size_t parent_j = 0;
  double lambda = 1.0;
};

InterpolatedEmbedding interpolate(const ad::Tensor& table, std::size_t i, std::size_t j, double lambda);

// count draws with i, j uniform over the table rows (i == j allowed) and
// lambda ~ U[0,1]. Throws ConfigurationError for fewer than 2 rows.
std::vector<InterpolatedEmbedding> interpolate_embeddings(const ad::Tensor& table, std::size_t count,
                                                          std::mt19937_64& rng);

enum class SynthesisMode {
  source_only,   // e drawn uniformly from the source rows
  interpolated,  // e from interpolate_embeddings, one draw per feature
  mixed,         // half source rows, half interpolated
};

SynthesisMode parse_synthesis_mode(const std::string& text);
std::string to_string(SynthesisMode mode);

struct SynthesisConfig {
  int per_class = 500;
  int batch = 128;
  SynthesisMode mode = SynthesisMode::interpolated;
};

struct GeneratedDataset {
  ad::Tensor features;  // [N x 64]
  std::vector<int> class_ids;
  std::vector<data::Provenance> provenance;

  std::size_t size() const { return class_ids.size(); }
  std::vector<data::FeatureRecord> records() const;
};

// Features for each requested class, generated with batch-statistics BN over
// consecutive chunks of config.batch rows. Row r belongs to classes[r % U]. Noise for chunk b comes from a
// stream derived from (seed, b). Throws LeakageError for a seen class.
GeneratedDataset synthesize_unseen(train::GanModel& gan, const data::SplitSpec& split,
                                   const data::AttributeMatrix& attributes, std::span<const int> classes,
                                   const SynthesisConfig& config, std::uint64_t seed);

void export_features_csv(const GeneratedDataset& dataset, const std::filesystem::path& path);

// argmax per row, ties to the lowest index.
std::vector<int> argmax_rows(const ad::Tensor& logits);

// Predicted unseen class ids for test images: f in running-statistics mode,
// then the classifier restricted to the split's unseen classes.
std::vector<int> predict(model::Encoder& encoder, const model::Classifier& classifier,
                         std::span<const data::DatasetExample> images, const data::SplitSpec& split);

// Stage-1-only rule: argmax over unseen classes of a_u^T p(f(x)).
std::vector<int> predict_by_attributes(train::Stage1Model& model, std::span<const data::DatasetExample> images,
                                       const data::SplitSpec& split, const data::AttributeMatrix& attributes);

// Softmax-regression probe trained on a shuffled 80% and scored on the
// remaining 20%. Features are standardized with training-split statistics.
double linear_probe(const ad::Tensor& features, std::span<const int> labels, std::uint64_t seed);

// Probe for the source-embedding index of each generated feature. Throws
// ConfigurationError when fewer than 2 provenance groups are present.
double domain_probe(const GeneratedDataset& dataset, std::uint64_t seed);

}  // namespace cocoa::eval
