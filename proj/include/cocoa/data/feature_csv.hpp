#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cocoa/data/benchmark.hpp"

namespace cocoa::data {

// Where a synthesized feature's domain embedding came from. Source-domain
// rows are recorded as (i, i, 1.0).
struct Provenance {
  int parent_i = 0;
  int parent_j = 0;
  double lambda = 1.0;

  friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct FeatureRecord {
  std::vector<double> feature;
  int class_id = 0;
  int domain_id = -1;  // -1 when the file carries provenance instead of a domain
  std::vector<double> attributes;  // filled by attach_attributes, not stored in CSV
  std::optional<Provenance> provenance;

  friend bool operator==(const FeatureRecord&, const FeatureRecord&) = default;
};

enum class FeatureColumns {
  domain,      // feature_*,class_id,domain_id
  provenance,  // feature_*,class_id,parent_i,parent_j,lambda
};

// UTF-8, LF line endings, shortest round-trip decimal formatting.
void write_feature_records(const std::filesystem::path& path, std::span<const FeatureRecord> records,
                           FeatureColumns columns);
std::string format_feature_records(std::span<const FeatureRecord> records, FeatureColumns columns);

// Accepts either column layout (and domain_id followed by provenance).
// Errors name the 1-based line number.
std::vector<FeatureRecord> parse_feature_records(const std::string& text);
std::vector<FeatureRecord> load_feature_records(const std::filesystem::path& path);

void attach_attributes(std::span<FeatureRecord> records, const AttributeMatrix& attributes);

}  // namespace cocoa::data
