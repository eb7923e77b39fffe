#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cocoa/autodiff/ops.hpp"
#include "cocoa/autodiff/parameter.hpp"
#include "cocoa/autodiff/tape.hpp"

namespace cocoa::model {

using ad::BnMode;
using ad::Tape;
using ad::Tensor;
using ad::Var;

inline constexpr double kLeakySlope = 0.2;
inline constexpr std::size_t kInputDim = 256;
inline constexpr std::size_t kEncoderHidden = 128;
inline constexpr std::size_t kFeatureDim = 64;
inline constexpr std::size_t kAttrDim = 6;
inline constexpr std::size_t kEmbedDim = 8;
inline constexpr std::size_t kNumSources = 3;
inline constexpr std::size_t kContextDim = kAttrDim + kEmbedDim;
inline constexpr std::size_t kNoiseDim = 16;
inline constexpr std::size_t kGeneratorWidth = 64;
inline constexpr std::size_t kEstimatorHidden = 32;
inline constexpr std::size_t kHeadHidden = 32;
inline constexpr std::size_t kRotations = 4;

// Whether a forward pass records parameters as trainable leaves or as
// frozen constants.
enum class Grad { on, off };

Var bind(Tape& t, ad::Parameter& p, Grad g);

// Dense layer y = x W + b, W stored [in x out]. Uniform fan-in init.
struct Linear {
  ad::Parameter* weight = nullptr;
  ad::Parameter* bias = nullptr;

  Linear() = default;
  Linear(ad::ParameterSet& set, const std::string& name, std::size_t in, std::size_t out, bool with_bias,
         std::mt19937_64& rng);
  Var operator()(Tape& t, Var x, Grad g) const;
  std::size_t in() const { return weight->value.rows(); }
  std::size_t out() const { return weight->value.cols(); }
};

// Running mean / unbiased running variance stored as non-trainable entries.
struct BnRunning {
  ad::Parameter* mean = nullptr;
  ad::Parameter* var = nullptr;

  BnRunning() = default;
  BnRunning(ad::ParameterSet& set, const std::string& name, std::size_t width);
  ad::RunningStats stats() const { return {&mean->value, &var->value, ad::kBatchNormMomentum}; }
};

Var normalize_layer(Tape& t, Var x, BnMode mode, const BnRunning& running);

// MLP 256 -> 128 (BN, leaky) -> 64.
class Encoder {
 public:
  explicit Encoder(std::uint64_t seed);

  Var forward(Tape& t, Var images, BnMode mode, Grad g);
  // Running-statistics forward without recording gradients.
  Tensor encode(const Tensor& images);

  ad::ParameterSet& params() { return params_; }
  const ad::ParameterSet& params() const { return params_; }

 private:
  ad::ParameterSet params_;
  Linear fc1_, fc2_;
  ad::Parameter* bn_gamma_ = nullptr;
  ad::Parameter* bn_beta_ = nullptr;
  BnRunning bn_;
};

// Linear map from features to attribute space.
class Projector {
 public:
  explicit Projector(std::uint64_t seed);

  Var forward(Tape& t, Var features, Grad g) const;
  // Compatibility with each attribute row: projected [B x 6] times rows^T.
  Var class_logits(Tape& t, Var features, const Tensor& attribute_rows, Grad g) const;

  ad::ParameterSet& params() { return params_; }
  const ad::ParameterSet& params() const { return params_; }

 private:
  ad::ParameterSet params_;
  Linear fc_;
};

// logits = p(features) A_seen^T.
Var seen_class_logits(Tape& t, const Projector& p, Var features, const Tensor& seen_attributes, Grad g);

// Two-layer MLP head: in -> 32 (leaky) -> out. Used for rotation prediction
// and for the final unseen-class classifier.
class MlpHead {
 public:
  MlpHead(std::string name, std::size_t in, std::size_t out, std::uint64_t seed);

  Var forward(Tape& t, Var x, Grad g) const;
  Tensor logits(const Tensor& x) const;
  std::size_t outputs() const { return fc2_.out(); }

  ad::ParameterSet& params() { return params_; }
  const ad::ParameterSet& params() const { return params_; }

 private:
  ad::ParameterSet params_;
  Linear fc1_, fc2_;
};

class RotationHead : public MlpHead {
 public:
  explicit RotationHead(std::uint64_t seed) : MlpHead("rotation", kFeatureDim, kRotations, seed) {}
};

class Classifier : public MlpHead {
 public:
  Classifier(std::size_t num_classes, std::uint64_t seed) : MlpHead("classifier", kFeatureDim, num_classes, seed) {}
};

// Learnable K x d_e table; row i embeds source domain i.
class DomainEmbedding {
 public:
  DomainEmbedding(std::string name, std::uint64_t seed);

  ad::Parameter& table() { return *table_; }
  const ad::Parameter& table() const { return *table_; }
  std::span<const double> row(std::size_t i) const { return table_->value.row(i); }

  ad::ParameterSet& params() { return params_; }
  const ad::ParameterSet& params() const { return params_; }

 private:
  ad::ParameterSet params_;
  ad::Parameter* table_ = nullptr;
};

std::vector<double> build_context(std::span<const double> attribute, std::span<const double> embedding);
std::pair<std::vector<double>, std::vector<double>> split_context(std::span<const double> context);

// Per-layer network mapping a context to (gamma, beta) for one BN layer.
// gamma = 1 + raw so a zero output leaves activations unscaled.
struct BnEstimator {
  Linear fc1, fc2;

  BnEstimator() = default;
  BnEstimator(ad::ParameterSet& set, const std::string& name, std::size_t context_dim, std::size_t width,
              std::mt19937_64& rng);
  // contexts [U x context_dim] -> gamma, beta [U x width].
  std::pair<Var, Var> operator()(Tape& t, Var contexts, Grad g) const;
};

// z [B x 16], contexts [U x context_dim] with rows[b] selecting the context
// of example b. context_dim is 14 for the full model, 6 for attribute-only.
class Generator {
 public:
  Generator(std::size_t context_dim, std::uint64_t seed);

  Var forward(Tape& t, Var z, Var contexts, std::span<const std::size_t> rows, BnMode mode, Grad g);

  std::size_t context_dim() const { return context_dim_; }
  ad::ParameterSet& params() { return params_; }
  const ad::ParameterSet& params() const { return params_; }

 private:
  std::size_t context_dim_;
  ad::ParameterSet params_;
  Linear fc1_, fc2_, fc3_;
  BnEstimator est1_, est2_;
  BnRunning bn1_, bn2_;
};

// score = (a V)^T D_f(f, e) + D_l(D_f(f, e)); D_f is one FC layer with BN
// conditioned on the discriminator's domain embedding.
class Discriminator {
 public:
  explicit Discriminator(std::uint64_t seed);

  // embeddings [U x 8], rows[b] selects example b's embedding.
  Var trunk(Tape& t, Var features, Var embeddings, std::span<const std::size_t> rows, BnMode mode, Grad g);
  Var head(Tape& t, Var trunk_out, Grad g) const;
  Var projection(Tape& t, Var trunk_out, Var attributes, Grad g) const;
  // [B x 1]
  Var forward(Tape& t, Var features, Var attributes, Var embeddings, std::span<const std::size_t> rows, BnMode mode,
              Grad g);

  ad::ParameterSet& params() { return params_; }
  const ad::ParameterSet& params() const { return params_; }

 private:
  ad::ParameterSet params_;
  Linear fc_, head_;
  ad::Parameter* v_ = nullptr;
  BnEstimator est_;
  BnRunning bn_;
};

std::vector<std::size_t> identity_rows(std::size_t n);

// Generator contexts for a batch, one row per distinct (attribute row,
// embedding row) pair in order of first appearance. With no embeddings the
// contexts are attribute-only.
struct ContextBatch {
  Var contexts;
  std::vector<std::size_t> rows;  // per example, into contexts
};

ContextBatch make_contexts(Tape& t, const Tensor& attribute_table, std::span<const std::size_t> attribute_rows,
                           const Var* embeddings, std::span<const std::size_t> embedding_rows);

}  // namespace cocoa::model
