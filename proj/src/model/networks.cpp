#include "cocoa/model/networks.hpp"

#include <cmath>
#include <map>
#include <numeric>

#include "cocoa/errors.hpp"

namespace cocoa::model {
namespace {

void fill_uniform(Tensor& t, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  for (auto& v : t.storage()) v = u(rng);
}

void check_cols(const Tape& t, Var x, std::size_t want, const char* what) {
  const auto& v = t.value(x);
  if (v.rank() != 2 || v.cols() != want) {
    throw DimensionError(std::string(what) + ": expected input width " + std::to_string(want) + ", got " +
                         ad::shape_string(v.shape()));
  }
}

}  // namespace

Var bind(Tape& t, ad::Parameter& p, Grad g) { return g == Grad::on ? t.parameter(p) : t.frozen(p); }

Linear::Linear(ad::ParameterSet& set, const std::string& name, std::size_t in, std::size_t out, bool with_bias,
               std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  Tensor w({in, out});
  fill_uniform(w, bound, rng);
  weight = &set.add(name + ".weight", std::move(w));
  if (with_bias) {
    Tensor b({out});
    fill_uniform(b, bound, rng);
    bias = &set.add(name + ".bias", std::move(b));
  }
}

Var Linear::operator()(Tape& t, Var x, Grad g) const {
  Var y = ad::matmul(t, x, bind(t, *weight, g));
  return bias ? ad::add_row(t, y, bind(t, *bias, g)) : y;
}

BnRunning::BnRunning(ad::ParameterSet& set, const std::string& name, std::size_t width) {
  mean = &set.add(name + ".running_mean", Tensor({width}, 0.0), false);
  var = &set.add(name + ".running_var", Tensor({width}, 1.0), false);
}

Var normalize_layer(Tape& t, Var x, BnMode mode, const BnRunning& running) {
  auto stats = running.stats();
  return ad::normalize(t, x, mode, &stats);
}

std::vector<std::size_t> identity_rows(std::size_t n) {
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return rows;
}

ContextBatch make_contexts(Tape& t, const Tensor& attribute_table, std::span<const std::size_t> attribute_rows,
                           const Var* embeddings, std::span<const std::size_t> embedding_rows) {
  if (embeddings && embedding_rows.size() != attribute_rows.size()) {
    throw DimensionError("make_contexts: " + std::to_string(attribute_rows.size()) + " attribute rows and " +
                         std::to_string(embedding_rows.size()) + " embedding rows");
  }
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> slot;
  std::vector<std::size_t> uniq_attr, uniq_emb;
  ContextBatch out;
  out.rows.reserve(attribute_rows.size());
  for (std::size_t i = 0; i < attribute_rows.size(); ++i) {
    const auto key = std::pair{attribute_rows[i], embeddings ? embedding_rows[i] : std::size_t{0}};
    auto [it, fresh] = slot.try_emplace(key, uniq_attr.size());
    if (fresh) {
      uniq_attr.push_back(key.first);
      uniq_emb.push_back(key.second);
    }
    out.rows.push_back(it->second);
  }
  const std::size_t d = attribute_table.cols();
  Tensor attrs({uniq_attr.size(), d});
  for (std::size_t u = 0; u < uniq_attr.size(); ++u) {
    if (uniq_attr[u] >= attribute_table.rows()) throw DimensionError("make_contexts: attribute row out of range");
    std::copy(attribute_table.row(uniq_attr[u]).begin(), attribute_table.row(uniq_attr[u]).end(),
              attrs.row(u).begin());
  }
  out.contexts = t.constant(std::move(attrs));
  if (embeddings) out.contexts = ad::concat(t, out.contexts, ad::gather_rows(t, *embeddings, uniq_emb));
  return out;
}

// --- encoder ---------------------------------------------------------------

Encoder::Encoder(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  fc1_ = Linear(params_, "encoder.fc1", kInputDim, kEncoderHidden, true, rng);
  bn_gamma_ = &params_.add("encoder.bn1.gamma", Tensor({kEncoderHidden}, 1.0));
  bn_beta_ = &params_.add("encoder.bn1.beta", Tensor({kEncoderHidden}, 0.0));
  bn_ = BnRunning(params_, "encoder.bn1", kEncoderHidden);
  fc2_ = Linear(params_, "encoder.fc2", kEncoderHidden, kFeatureDim, true, rng);
}

Var Encoder::forward(Tape& t, Var images, BnMode mode, Grad g) {
  check_cols(t, images, kInputDim, "encoder");
  Var h = fc1_(t, images, g);
  h = ad::affine(t, normalize_layer(t, h, mode, bn_), bind(t, *bn_gamma_, g), bind(t, *bn_beta_, g));
  h = ad::leaky_relu(t, h, kLeakySlope);
  return fc2_(t, h, g);
}

Tensor Encoder::encode(const Tensor& images) {
  Tape t;
  return t.value(forward(t, t.constant(images), BnMode::running_eval, Grad::off));
}

// --- projector ---------------------------------------------------------------

Projector::Projector(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  fc_ = Linear(params_, "projector.fc", kFeatureDim, kAttrDim, true, rng);
}

Var Projector::forward(Tape& t, Var features, Grad g) const {
  check_cols(t, features, kFeatureDim, "projector");
  return fc_(t, features, g);
}

Var Projector::class_logits(Tape& t, Var features, const Tensor& attribute_rows, Grad g) const {
  return ad::matmul(t, forward(t, features, g), t.constant(ad::transpose(attribute_rows)));
}

Var seen_class_logits(Tape& t, const Projector& p, Var features, const Tensor& seen_attributes, Grad g) {
  return p.class_logits(t, features, seen_attributes, g);
}

// --- heads -------------------------------------------------------------------

MlpHead::MlpHead(std::string name, std::size_t in, std::size_t out, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  fc1_ = Linear(params_, name + ".fc1", in, kHeadHidden, true, rng);
  fc2_ = Linear(params_, name + ".fc2", kHeadHidden, out, true, rng);
}

Var MlpHead::forward(Tape& t, Var x, Grad g) const {
  check_cols(t, x, fc1_.in(), "head");
  return fc2_(t, ad::leaky_relu(t, fc1_(t, x, g), kLeakySlope), g);
}

Tensor MlpHead::logits(const Tensor& x) const {
  Tape t;
  return t.value(forward(t, t.constant(x), Grad::off));
}

// --- embeddings and contexts -----------------------------------------------

DomainEmbedding::DomainEmbedding(std::string name, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 0.1);
  Tensor e({kNumSources, kEmbedDim});
  for (auto& v : e.storage()) v = n(rng);
  table_ = &params_.add(std::move(name), std::move(e));
}

std::vector<double> build_context(std::span<const double> attribute, std::span<const double> embedding) {
  if (attribute.size() != kAttrDim || embedding.size() != kEmbedDim) {
    throw DimensionError("build_context: expected attribute of " + std::to_string(kAttrDim) + " and embedding of " +
                         std::to_string(kEmbedDim) + ", got " + std::to_string(attribute.size()) + " and " +
                         std::to_string(embedding.size()));
  }
  std::vector<double> c(attribute.begin(), attribute.end());
  c.insert(c.end(), embedding.begin(), embedding.end());
  return c;
}

std::pair<std::vector<double>, std::vector<double>> split_context(std::span<const double> context) {
  if (context.size() != kContextDim) {
    throw DimensionError("split_context: expected " + std::to_string(kContextDim) + " values, got " +
                         std::to_string(context.size()));
  }
  return {{context.begin(), context.begin() + kAttrDim}, {context.begin() + kAttrDim, context.end()}};
}

BnEstimator::BnEstimator(ad::ParameterSet& set, const std::string& name, std::size_t context_dim, std::size_t width,
                         std::mt19937_64& rng)
    : fc1(set, name + ".fc1", context_dim, kEstimatorHidden, true, rng),
      fc2(set, name + ".fc2", kEstimatorHidden, 2 * width, true, rng) {}

std::pair<Var, Var> BnEstimator::operator()(Tape& t, Var contexts, Grad g) const {
  Var raw = fc2(t, ad::leaky_relu(t, fc1(t, contexts, g), kLeakySlope), g);
  const std::size_t width = fc2.out() / 2;
  Var gamma = ad::add_scalar(t, ad::slice_cols(t, raw, 0, width), 1.0);
  Var beta = ad::slice_cols(t, raw, width, 2 * width);
  return {gamma, beta};
}

// --- generator ---------------------------------------------------------------

Generator::Generator(std::size_t context_dim, std::uint64_t seed) : context_dim_(context_dim) {
  std::mt19937_64 rng(seed);
  fc1_ = Linear(params_, "generator.fc1", kNoiseDim, kGeneratorWidth, true, rng);
  est1_ = BnEstimator(params_, "generator.est1", context_dim, kGeneratorWidth, rng);
  bn1_ = BnRunning(params_, "generator.bn1", kGeneratorWidth);
  fc2_ = Linear(params_, "generator.fc2", kGeneratorWidth, kGeneratorWidth, true, rng);
  est2_ = BnEstimator(params_, "generator.est2", context_dim, kGeneratorWidth, rng);
  bn2_ = BnRunning(params_, "generator.bn2", kGeneratorWidth);
  fc3_ = Linear(params_, "generator.fc3", kGeneratorWidth, kFeatureDim, true, rng);
}

Var Generator::forward(Tape& t, Var z, Var contexts, std::span<const std::size_t> rows, BnMode mode, Grad g) {
  check_cols(t, z, kNoiseDim, "generator noise");
  check_cols(t, contexts, context_dim_, "generator context");
  if (rows.size() != t.value(z).rows()) {
    throw DimensionError("generator: " + std::to_string(rows.size()) + " context rows for a batch of " +
                         std::to_string(t.value(z).rows()));
  }
  auto cocoa_bn = [&](Var h, const BnEstimator& est, const BnRunning& bn) {
    auto [gamma_u, beta_u] = est(t, contexts, g);
    Var gamma = ad::gather_rows(t, gamma_u, rows);
    Var beta = ad::gather_rows(t, beta_u, rows);
    return ad::leaky_relu(t, ad::affine(t, normalize_layer(t, h, mode, bn), gamma, beta), kLeakySlope);
  };
  Var h = cocoa_bn(fc1_(t, z, g), est1_, bn1_);
  h = cocoa_bn(fc2_(t, h, g), est2_, bn2_);
  return fc3_(t, h, g);
}

// --- discriminator -----------------------------------------------------------

Discriminator::Discriminator(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  fc_ = Linear(params_, "discriminator.fc", kFeatureDim, kFeatureDim, true, rng);
  est_ = BnEstimator(params_, "discriminator.est", kEmbedDim, kFeatureDim, rng);
  bn_ = BnRunning(params_, "discriminator.bn", kFeatureDim);
  head_ = Linear(params_, "discriminator.head", kFeatureDim, 1, true, rng);
  Tensor v({kAttrDim, kFeatureDim});
  fill_uniform(v, 1.0 / std::sqrt(static_cast<double>(kAttrDim)), rng);
  v_ = &params_.add("discriminator.V", std::move(v));
}

Var Discriminator::trunk(Tape& t, Var features, Var embeddings, std::span<const std::size_t> rows, BnMode mode,
                         Grad g) {
  check_cols(t, features, kFeatureDim, "discriminator");
  check_cols(t, embeddings, kEmbedDim, "discriminator embedding");
  if (rows.size() != t.value(features).rows()) {
    throw DimensionError("discriminator: " + std::to_string(rows.size()) + " embedding rows for a batch of " +
                         std::to_string(t.value(features).rows()));
  }
  auto [gamma_u, beta_u] = est_(t, embeddings, g);
  Var h = normalize_layer(t, fc_(t, features, g), mode, bn_);
  h = ad::affine(t, h, ad::gather_rows(t, gamma_u, rows), ad::gather_rows(t, beta_u, rows));
  return ad::leaky_relu(t, h, kLeakySlope);
}

Var Discriminator::head(Tape& t, Var trunk_out, Grad g) const { return head_(t, trunk_out, g); }

Var Discriminator::projection(Tape& t, Var trunk_out, Var attributes, Grad g) const {
  check_cols(t, attributes, kAttrDim, "discriminator attribute");
  return ad::rowwise_dot(t, ad::matmul(t, attributes, bind(t, *v_, g)), trunk_out);
}

Var Discriminator::forward(Tape& t, Var features, Var attributes, Var embeddings, std::span<const std::size_t> rows,
                           BnMode mode, Grad g) {
  Var h = trunk(t, features, embeddings, rows, mode, g);
  return ad::add(t, projection(t, h, attributes, g), head(t, h, g));
}

}  // namespace cocoa::model
