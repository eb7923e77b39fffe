#include "cocoa/data/benchmark.hpp"

#include <algorithm>
#include <set>
#include <string>
#include <thread>

#include "cocoa/errors.hpp"

namespace cocoa::data {

AttributeMatrix::AttributeMatrix(ad::Tensor rows) : rows_(std::move(rows)) {
  if (rows_.rank() != 2) throw DimensionError("attribute matrix must be 2-D");
  for (std::size_t i = 0; i < rows_.rows(); ++i) {
    for (double v : rows_.row(i)) {
      if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("attribute values must lie in [0,1]");
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (std::equal(rows_.row(i).begin(), rows_.row(i).end(), rows_.row(j).begin())) {
        throw ValidationError("attribute rows " + std::to_string(j) + " and " + std::to_string(i) + " coincide");
      }
    }
  }
}

AttributeMatrix AttributeMatrix::default_matrix() {
  constexpr double lo = 0.15, hi = 0.85;
  ad::Tensor rows({12, kAttributeDim});
  // Seen: factors (a, b, c) and their pairwise parities.
  for (int k = 0; k < 8; ++k) {
    const int a = (k >> 2) & 1, b = (k >> 1) & 1, c = k & 1;
    const int bits[6] = {a, b, c, a ^ b, a ^ c, b ^ c};
    for (std::size_t j = 0; j < kAttributeDim; ++j) rows.at(static_cast<std::size_t>(k), j) = bits[j] ? hi : lo;
  }
  // Unseen: midpoints of seen pairs (0,1), (2,5), (3,4), (6,7).
  const int pairs[4][2] = {{0, 1}, {2, 5}, {3, 4}, {6, 7}};
  for (std::size_t u = 0; u < 4; ++u) {
    for (std::size_t j = 0; j < kAttributeDim; ++j) {
      rows.at(8 + u, j) = 0.5 * (rows.at(static_cast<std::size_t>(pairs[u][0]), j) +
                                 rows.at(static_cast<std::size_t>(pairs[u][1]), j));
    }
  }
  return AttributeMatrix(std::move(rows));
}

std::span<const double> AttributeMatrix::row(int class_id) const {
  if (class_id < 0 || static_cast<std::size_t>(class_id) >= num_classes()) {
    throw LabelError("class id " + std::to_string(class_id) + " has no attribute row");
  }
  return rows_.row(static_cast<std::size_t>(class_id));
}

ad::Tensor AttributeMatrix::select(std::span<const int> class_ids) const {
  ad::Tensor out({class_ids.size(), dim()});
  for (std::size_t i = 0; i < class_ids.size(); ++i) {
    auto r = row(class_ids[i]);
    std::copy(r.begin(), r.end(), out.row(i).begin());
  }
  return out;
}

SplitSpec SplitSpec::leave_one_out(int target_domain) {
  if (target_domain < 0 || target_domain >= kNumDomains) {
    throw ValidationError("target domain " + std::to_string(target_domain) + " outside [0," +
                          std::to_string(kNumDomains) + ")");
  }
  SplitSpec s;
  s.seen_classes = {0, 1, 2, 3, 4, 5, 6, 7};
  s.unseen_classes = {8, 9, 10, 11};
  for (int d = 0; d < kNumDomains; ++d) {
    if (d != target_domain) s.source_domains.push_back(d);
  }
  s.target_domain = target_domain;
  return s;
}

namespace {
int index_of(const std::vector<int>& v, int x) {
  auto it = std::find(v.begin(), v.end(), x);
  return it == v.end() ? -1 : static_cast<int>(it - v.begin());
}
}  // namespace

bool SplitSpec::is_seen(int c) const { return index_of(seen_classes, c) >= 0; }
bool SplitSpec::is_unseen(int c) const { return index_of(unseen_classes, c) >= 0; }
bool SplitSpec::is_source(int d) const { return index_of(source_domains, d) >= 0; }
int SplitSpec::seen_index(int c) const { return index_of(seen_classes, c); }
int SplitSpec::unseen_index(int c) const { return index_of(unseen_classes, c); }
int SplitSpec::source_index(int d) const { return index_of(source_domains, d); }

void SplitSpec::validate(std::size_t num_classes) const {
  if (seen_classes.empty() || unseen_classes.empty() || source_domains.empty()) {
    throw ValidationError("split: every class and domain group must be non-empty");
  }
  std::set<int> classes;
  for (int c : seen_classes) {
    if (c < 0 || static_cast<std::size_t>(c) >= num_classes) throw ValidationError("split: bad seen class id");
    if (!classes.insert(c).second) throw ValidationError("split: duplicate class " + std::to_string(c));
  }
  for (int c : unseen_classes) {
    if (c < 0 || static_cast<std::size_t>(c) >= num_classes) throw ValidationError("split: bad unseen class id");
    if (!classes.insert(c).second) {
      throw ValidationError("split: class " + std::to_string(c) + " is both seen and unseen");
    }
  }
  std::set<int> domains;
  for (int d : source_domains) {
    if (d < 0 || d >= kNumDomains) throw ValidationError("split: bad source domain id");
    if (!domains.insert(d).second) throw ValidationError("split: duplicate source domain " + std::to_string(d));
  }
  if (target_domain < 0 || target_domain >= kNumDomains) throw ValidationError("split: bad target domain id");
  if (domains.count(target_domain)) {
    throw ValidationError("split: target domain " + std::to_string(target_domain) + " is also a source domain");
  }
}

std::uint64_t example_seed(std::uint64_t master_seed, std::uint64_t index) {
  // splitmix64 finalizer over the mixed key
  std::uint64_t z = master_seed ^ (index * 0x9E3779B97F4A7C15ULL);
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

namespace {

struct Cell {
  int class_id;
  int domain_id;
  std::uint64_t index;
};

std::vector<DatasetExample> render_cells(const std::vector<Cell>& cells, const AttributeMatrix& attributes,
                                         std::uint64_t master_seed, int workers) {
  std::vector<DatasetExample> out(cells.size());
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const Cell& c = cells[i];
      const std::uint64_t s = example_seed(master_seed, c.index);
      auto attr = attributes.row(c.class_id);
      DatasetExample& ex = out[i];
      ex.image = apply_domain_transform(render_class_image(attr, s), c.domain_id, example_seed(s, 1));
      ex.class_id = c.class_id;
      ex.domain_id = c.domain_id;
      ex.attributes.assign(attr.begin(), attr.end());
    }
  };
  const std::size_t n = cells.size();
  const std::size_t w = static_cast<std::size_t>(std::max(1, workers));
  if (w == 1 || n < 2 * w) {
    work(0, n);
    return out;
  }
  std::vector<std::thread> threads;
  for (std::size_t k = 0; k < w; ++k) threads.emplace_back(work, n * k / w, n * (k + 1) / w);
  for (auto& t : threads) t.join();
  return out;
}

}  // namespace

Benchmark build_benchmark(const BenchmarkConfig& config, std::uint64_t master_seed) {
  return build_benchmark(config, SplitSpec::leave_one_out(config.target_domain), AttributeMatrix::default_matrix(),
                         master_seed);
}

Benchmark build_benchmark(const BenchmarkConfig& config, const SplitSpec& split, const AttributeMatrix& attributes,
                          std::uint64_t master_seed) {
  if (config.train_per_cell <= 0 || config.test_per_cell <= 0 || config.val_per_cell < 0) {
    throw ValidationError("benchmark: per-cell example counts must be positive");
  }
  if (std::max({config.train_per_cell, config.val_per_cell, config.test_per_cell}) > 4096) {
    throw ValidationError("benchmark: at most 4096 examples per cell");
  }
  split.validate(attributes.num_classes());
  if (attributes.dim() != kAttributeDim) throw ValidationError("benchmark: attribute rows must have 6 entries");

  // Disjoint index ranges keep every example's seed unique across splits.
  constexpr std::uint64_t kValOffset = 1ULL << 32, kTestOffset = 2ULL << 32;
  auto cells_for = [](const std::vector<int>& classes, const std::vector<int>& domains, int per_cell,
                      std::uint64_t offset) {
    std::vector<Cell> cells;
    for (int c : classes)
      for (int d : domains)
        for (int k = 0; k < per_cell; ++k) {
          const auto key = static_cast<std::uint64_t>(c) * 4096 * 4 + static_cast<std::uint64_t>(d) * 4096 +
                           static_cast<std::uint64_t>(k);
          cells.push_back({c, d, offset + key});
        }
    return cells;
  };

  Benchmark b;
  b.attributes = attributes;
  b.split = split;
  b.train = render_cells(cells_for(split.seen_classes, split.source_domains, config.train_per_cell, 0), attributes,
                         master_seed, config.workers);
  b.val = render_cells(cells_for(split.seen_classes, split.source_domains, config.val_per_cell, kValOffset),
                       attributes, master_seed, config.workers);
  b.test = render_cells(cells_for(split.unseen_classes, {split.target_domain}, config.test_per_cell, kTestOffset),
                        attributes, master_seed, config.workers);
  check_training_hygiene(b.train, split);
  check_training_hygiene(b.val, split);
  return b;
}

void check_training_hygiene(std::span<const DatasetExample> examples, const SplitSpec& split) {
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (!split.is_seen(examples[i].class_id)) {
      throw LeakageError("example " + std::to_string(i) + " has non-seen class " +
                         std::to_string(examples[i].class_id));
    }
    if (!split.is_source(examples[i].domain_id)) {
      throw LeakageError("example " + std::to_string(i) + " has non-source domain " +
                         std::to_string(examples[i].domain_id));
    }
  }
}

}  // namespace cocoa::data
