#include "cocoa/eval/synthesis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "cocoa/errors.hpp"

namespace cocoa::eval {
namespace {

using ad::Tensor;
using model::Grad;
using model::Tape;
using model::Var;

Tensor noise(std::size_t rows, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor z({rows, model::kNoiseDim});
  for (auto& v : z.storage()) v = n(rng);
  return z;
}

// Chunks of at most `batch` rows; a trailing single row joins the chunk
// before it so batch statistics always see two rows.
std::vector<std::pair<std::size_t, std::size_t>> chunks(std::size_t n, std::size_t batch) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t s = 0; s < n; s += batch) out.emplace_back(s, std::min(n, s + batch));
  if (out.size() > 1 && out.back().second - out.back().first < 2) {
    out[out.size() - 2].second = out.back().second;
    out.pop_back();
  }
  return out;
}

}  // namespace

InterpolatedEmbedding interpolate(const Tensor& table, std::size_t i, std::size_t j, double lambda) {
  if (i >= table.rows() || j >= table.rows()) throw DimensionError("interpolate: row index out of range");
  InterpolatedEmbedding out;
  out.parent_i = i;
  out.parent_j = j;
  out.lambda = lambda;
  const auto ei = table.row(i), ej = table.row(j);
  out.vector.resize(table.cols());
  for (std::size_t k = 0; k < table.cols(); ++k) out.vector[k] = lambda * ei[k] + (1.0 - lambda) * ej[k];
  return out;
}

std::vector<InterpolatedEmbedding> interpolate_embeddings(const Tensor& table, std::size_t count,
                                                          std::mt19937_64& rng) {
  if (table.rank() != 2 || table.rows() < 2) {
    throw ConfigurationError("interpolate_embeddings: need at least 2 source embeddings");
  }
  std::uniform_int_distribution<std::size_t> pick(0, table.rows() - 1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<InterpolatedEmbedding> out;
  out.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    const std::size_t i = pick(rng);
    const std::size_t j = pick(rng);
    out.push_back(interpolate(table, i, j, u(rng)));
  }
  return out;
}

SynthesisMode parse_synthesis_mode(const std::string& text) {
  if (text == "source-only") return SynthesisMode::source_only;
  if (text == "interpolated") return SynthesisMode::interpolated;
  if (text == "mixed") return SynthesisMode::mixed;
  throw ConfigurationError("unknown synthesis mode '" + text + "' (expected source-only, interpolated or mixed)");
}

std::string to_string(SynthesisMode mode) {
  switch (mode) {
    case SynthesisMode::source_only:
      return "source-only";
    case SynthesisMode::interpolated:
      return "interpolated";
    case SynthesisMode::mixed:
      return "mixed";
  }
  return "?";
}

std::vector<data::FeatureRecord> GeneratedDataset::records() const {
  std::vector<data::FeatureRecord> out(size());
  for (std::size_t i = 0; i < size(); ++i) {
    const auto row = features.row(i);
    out[i].feature.assign(row.begin(), row.end());
    out[i].class_id = class_ids[i];
    out[i].provenance = provenance[i];
  }
  return out;
}

GeneratedDataset synthesize_unseen(train::GanModel& gan, const data::SplitSpec& split,
                                   const data::AttributeMatrix& attributes, std::span<const int> classes,
                                   const SynthesisConfig& config, std::uint64_t seed) {
  if (config.per_class < 1 || config.batch < 2) {
    throw ConfigurationError("synthesis: per_class must be positive and batch at least 2");
  }
  for (int c : classes) {
    if (!split.is_unseen(c)) {
      throw LeakageError("synthesis: class " + std::to_string(c) + " is not an unseen class");
    }
  }
  const Tensor& table = gan.e_gen.table().value;
  const std::size_t per = static_cast<std::size_t>(config.per_class);
  const std::size_t total = per * classes.size();

  // Draw every feature's context first, one stream per class.
  std::vector<std::vector<InterpolatedEmbedding>> drawn(classes.size());
  for (std::size_t ci = 0; ci < classes.size(); ++ci) {
    std::mt19937_64 rng(data::example_seed(seed, 1000 + ci));
    std::uniform_int_distribution<std::size_t> pick(0, table.rows() - 1);
    const auto interp = config.mode == SynthesisMode::source_only
                            ? std::vector<InterpolatedEmbedding>{}
                            : interpolate_embeddings(table, per, rng);
    for (std::size_t n = 0; n < per; ++n) {
      const bool use_source =
          config.mode == SynthesisMode::source_only || (config.mode == SynthesisMode::mixed && n % 2 == 0);
      if (use_source) {
        const std::size_t i = pick(rng);
        drawn[ci].push_back(interpolate(table, i, i, 1.0));
      } else {
        drawn[ci].push_back(interp[n]);
      }
    }
  }

  // Classes interleaved row by row: the generator was trained on mixed-class
  // batches, and a single-class chunk would shift its batch statistics.
  std::vector<std::size_t> attr_rows;
  std::vector<std::vector<double>> embeds;
  GeneratedDataset out;
  for (std::size_t n = 0; n < per; ++n) {
    for (std::size_t ci = 0; ci < classes.size(); ++ci) {
      auto& e = drawn[ci][n];
      attr_rows.push_back(ci);
      embeds.push_back(std::move(e.vector));
      out.class_ids.push_back(classes[ci]);
      out.provenance.push_back({static_cast<int>(e.parent_i), static_cast<int>(e.parent_j), e.lambda});
    }
  }

  const Tensor attr_table = attributes.select(std::vector<int>(classes.begin(), classes.end()));
  out.features = Tensor({std::max<std::size_t>(total, 1), model::kFeatureDim});
  const auto parts = chunks(total, static_cast<std::size_t>(config.batch));
  for (std::size_t b = 0; b < parts.size(); ++b) {
    const auto [start, end] = parts[b];
    const std::size_t B = end - start;
    std::mt19937_64 rng(data::example_seed(seed, b));
    Tensor emb({B, model::kEmbedDim});
    for (std::size_t i = 0; i < B; ++i) std::copy(embeds[start + i].begin(), embeds[start + i].end(), emb.row(i).begin());
    const std::span<const std::size_t> rows(attr_rows.data() + start, B);
    const auto emb_rows = model::identity_rows(B);
    Tape t;
    Var e = t.constant(std::move(emb));
    Var f = gan.generate(t, noise(B, rng), attr_table, rows, &e, emb_rows, ad::BnMode::batch_eval, Grad::off);
    const Tensor& v = t.value(f);
    std::copy(v.storage().begin(), v.storage().end(),
              out.features.storage().begin() + static_cast<std::ptrdiff_t>(start * model::kFeatureDim));
  }
  if (total == 0) out.features = Tensor();
  return out;
}

void export_features_csv(const GeneratedDataset& dataset, const std::filesystem::path& path) {
  const auto recs = dataset.records();
  data::write_feature_records(path, recs, data::FeatureColumns::provenance);
}

std::vector<int> argmax_rows(const Tensor& logits) {
  std::vector<int> out(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto row = logits.row(r);
    out[r] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

std::vector<int> predict(model::Encoder& encoder, const model::Classifier& classifier,
                         std::span<const data::DatasetExample> images, const data::SplitSpec& split) {
  if (images.empty()) return {};
  const auto idx = argmax_rows(classifier.logits(encoder.encode(train::image_matrix(images))));
  std::vector<int> out;
  for (int i : idx) out.push_back(split.unseen_classes.at(static_cast<std::size_t>(i)));
  return out;
}

std::vector<int> predict_by_attributes(train::Stage1Model& model, std::span<const data::DatasetExample> images,
                                       const data::SplitSpec& split, const data::AttributeMatrix& attributes) {
  if (images.empty()) return {};
  Tape t;
  Var f = t.constant(model.encoder.encode(train::image_matrix(images)));
  const Tensor& logits =
      t.value(model.projector.class_logits(t, f, train::unseen_attribute_rows(split, attributes), Grad::off));
  std::vector<int> out;
  for (int i : argmax_rows(logits)) out.push_back(split.unseen_classes.at(static_cast<std::size_t>(i)));
  return out;
}

double linear_probe(const Tensor& features, std::span<const int> labels, std::uint64_t seed) {
  const std::size_t n = labels.size();
  if (features.rank() != 2 || features.rows() != n || n < 5) {
    throw ValidationError("linear_probe: need at least 5 labelled rows");
  }
  const std::set<int> groups(labels.begin(), labels.end());
  if (groups.size() < 2) throw ConfigurationError("linear_probe: need at least 2 label groups");
  std::vector<int> relabel(labels.begin(), labels.end());
  const std::vector<int> ordered(groups.begin(), groups.end());
  for (auto& l : relabel) l = static_cast<int>(std::lower_bound(ordered.begin(), ordered.end(), l) - ordered.begin());

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[static_cast<std::size_t>(rng() % i)]);
  const std::size_t n_train = (n * 4) / 5;
  const std::size_t d = features.cols();

  std::vector<double> mu(d, 0.0), sd(d, 0.0);
  for (std::size_t i = 0; i < n_train; ++i)
    for (std::size_t k = 0; k < d; ++k) mu[k] += features.at(order[i], k);
  for (auto& m : mu) m /= static_cast<double>(n_train);
  for (std::size_t i = 0; i < n_train; ++i)
    for (std::size_t k = 0; k < d; ++k) sd[k] += std::pow(features.at(order[i], k) - mu[k], 2);
  for (auto& s : sd) s = std::sqrt(s / static_cast<double>(n_train)) + 1e-8;
  auto take = [&](std::size_t from, std::size_t to, std::vector<int>& y) {
    Tensor x({to - from, d});
    for (std::size_t i = from; i < to; ++i) {
      for (std::size_t k = 0; k < d; ++k) x.at(i - from, k) = (features.at(order[i], k) - mu[k]) / sd[k];
      y.push_back(relabel[order[i]]);
    }
    return x;
  };
  std::vector<int> y_train, y_test;
  const Tensor x_train = take(0, n_train, y_train);
  const Tensor x_test = take(n_train, n, y_test);

  ad::ParameterSet params;
  auto& w = params.add("probe.weight", Tensor({d, ordered.size()}, 0.0));
  auto& b = params.add("probe.bias", Tensor({ordered.size()}, 0.0));
  train::Adam adam(params.trainable(), train::AdamConfig{0.05, 0.9, 0.999, 1e-8}, "probe.adam");
  constexpr int kSteps = 300;
  for (int step = 0; step < kSteps; ++step) {
    Tape t;
    adam.zero_grad();
    Var logits = ad::add_row(t, ad::matmul(t, t.constant(x_train), t.parameter(w)), t.parameter(b));
    Var loss = ad::softmax_cross_entropy(t, logits, y_train);
    t.backward(loss);
    adam.step();
  }
  Tape t;
  Var logits = ad::add_row(t, ad::matmul(t, t.constant(x_test), t.frozen(w)), t.frozen(b));
  return train::accuracy(t.value(logits), y_test);
}

double domain_probe(const GeneratedDataset& dataset, std::uint64_t seed) {
  std::vector<int> labels;
  for (const auto& p : dataset.provenance) {
    if (p.parent_i != p.parent_j) {
      throw ValidationError("domain_probe: expects source-only provenance (parent_i == parent_j)");
    }
    labels.push_back(p.parent_i);
  }
  if (std::set<int>(labels.begin(), labels.end()).size() < 2) {
    throw ConfigurationError("domain_probe: fewer than 2 provenance groups");
  }
  return linear_probe(dataset.features, labels, seed);
}

}  // namespace cocoa::eval
