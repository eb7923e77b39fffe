#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cocoa/autodiff/tensor.hpp"
#include "cocoa/data/image.hpp"

namespace cocoa::data {

struct DatasetExample {
  Image image;
  int class_id = 0;
  std::vector<double> attributes;
  int domain_id = 0;

  friend bool operator==(const DatasetExample&, const DatasetExample&) = default;
};

// One attribute row per class. Rows are pairwise distinct.
class AttributeMatrix {
 public:
  AttributeMatrix() = default;
  explicit AttributeMatrix(ad::Tensor rows);

  // 8 seen classes from a two-level fractional design, 4 unseen classes at
  // midpoints of seen pairs (inside the seen convex hull).
  static AttributeMatrix default_matrix();

  std::size_t num_classes() const { return rows_.rows(); }
  std::size_t dim() const { return rows_.cols(); }
  std::span<const double> row(int class_id) const;
  const ad::Tensor& rows() const { return rows_; }
  // Stacks the rows of the given classes, in order.
  ad::Tensor select(std::span<const int> class_ids) const;

  friend bool operator==(const AttributeMatrix&, const AttributeMatrix&) = default;

 private:
  ad::Tensor rows_;
};

struct SplitSpec {
  std::vector<int> seen_classes;
  std::vector<int> unseen_classes;
  std::vector<int> source_domains;
  int target_domain = 0;

  // Leave-one-domain-out split over the default 8/4 class partition.
  static SplitSpec leave_one_out(int target_domain);
  bool is_seen(int class_id) const;
  bool is_unseen(int class_id) const;
  bool is_source(int domain_id) const;
  int seen_index(int class_id) const;    // position in seen_classes or -1
  int unseen_index(int class_id) const;  // position in unseen_classes or -1
  int source_index(int domain_id) const;  // position in source_domains or -1
  void validate(std::size_t num_classes) const;

  friend bool operator==(const SplitSpec&, const SplitSpec&) = default;
};

struct BenchmarkConfig {
  int train_per_cell = 200;
  int val_per_cell = 50;
  int test_per_cell = 100;
  int target_domain = 0;
  int workers = 1;
};

struct Benchmark {
  std::vector<DatasetExample> train;  // seen classes x source domains
  std::vector<DatasetExample> val;    // held-out seen classes x source domains
  std::vector<DatasetExample> test;   // unseen classes x target domain
  AttributeMatrix attributes;
  SplitSpec split;
};

// Per-example seed mixing; independent of generation order and worker count.
std::uint64_t example_seed(std::uint64_t master_seed, std::uint64_t index);

Benchmark build_benchmark(const BenchmarkConfig& config, std::uint64_t master_seed);
Benchmark build_benchmark(const BenchmarkConfig& config, const SplitSpec& split, const AttributeMatrix& attributes,
                          std::uint64_t master_seed);

// Throws LeakageError if any example uses an unseen class or a non-source domain.
void check_training_hygiene(std::span<const DatasetExample> examples, const SplitSpec& split);

}  // namespace cocoa::data
