#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "cocoa/data/benchmark.hpp"
#include "cocoa/model/networks.hpp"
#include "cocoa/train/config.hpp"
#include "cocoa/train/metrics.hpp"
#include "cocoa/train/optimizer.hpp"

namespace cocoa::train {

// RNG stream for one epoch of one stage; resuming from a checkpoint at an
// epoch boundary replays exactly the same stream.
std::mt19937_64 epoch_rng(std::uint64_t seed, int stage, int epoch);

// Shuffled minibatches over [0, n). A trailing batch smaller than min_batch
// is dropped.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch, std::size_t min_batch,
                                                    std::mt19937_64& rng);

// Flattened images [N x 256].
ad::Tensor image_matrix(std::span<const data::DatasetExample> examples);
ad::Tensor rotated_image_matrix(std::span<const data::DatasetExample> examples, int k);

// Attribute rows of the seen classes, in split order.
ad::Tensor seen_attribute_rows(const data::SplitSpec& split, const data::AttributeMatrix& attributes);
ad::Tensor unseen_attribute_rows(const data::SplitSpec& split, const data::AttributeMatrix& attributes);

// Called after every completed epoch (1-based count of finished epochs).
using EpochHook = std::function<void(int epochs_done)>;

// --- stage 1: encoder, projector and rotation head ---------------------------

struct Stage1Model {
  model::Encoder encoder;
  model::Projector projector;
  model::RotationHead rotation;

  explicit Stage1Model(std::uint64_t seed);
  std::vector<ad::ParameterSet*> sets();
  std::vector<const ad::ParameterSet*> sets() const;
};

struct Stage1Losses {
  model::Var total;      // aggregate + lambda_rot * rotation
  model::Var aggregate;  // seen-class CE of A_seen p(f(x))
  model::Var rotation;   // rotation CE on the rotated copies
  model::Var class_logits;
  model::Var rotation_logits;
};

// images run through the encoder in `mode`; their rotated copies always use
// batch statistics without touching the running estimates.
Stage1Losses stage1_step_loss(model::Tape& t, Stage1Model& model, const ad::Tensor& images, const ad::Tensor& rotated,
                              std::span<const int> labels, std::span<const int> rotations,
                              const ad::Tensor& seen_rows, double lambda_rot, ad::BnMode mode);

struct Stage1Eval {
  double class_accuracy = 0.0;     // seen-class argmax of a^T p(f(x))
  double rotation_accuracy = 0.0;  // over all four rotations of every image
};

class Stage1Trainer {
 public:
  // Throws LeakageError if the training set holds an unseen class or a
  // non-source domain.
  Stage1Trainer(Stage1Model& model, std::span<const data::DatasetExample> train, const data::SplitSpec& split,
                const data::AttributeMatrix& attributes, const Stage1Config& config, std::uint64_t seed);

  void run_epoch();
  void run(const EpochHook& hook = {});
  int epochs_done() const { return epochs_done_; }
  const Metrics& metrics() const { return metrics_; }

  void save(const std::filesystem::path& stem, const nlohmann::json& meta) const;
  void load(const std::filesystem::path& stem);

 private:
  Stage1Model& model_;
  std::span<const data::DatasetExample> train_;
  data::SplitSpec split_;
  Stage1Config config_;
  std::uint64_t seed_;
  ad::Tensor seen_rows_;
  std::vector<ad::Tensor> inputs_;  // one per rotation k
  std::vector<int> labels_;
  Adam adam_;
  Metrics metrics_;
  int epochs_done_ = 0;
};

Stage1Eval evaluate_stage1(Stage1Model& model, std::span<const data::DatasetExample> examples,
                           const data::SplitSpec& split, const data::AttributeMatrix& attributes);

// --- stage 2: conditional GAN on frozen features ------------------------------

struct FeatureSet {
  ad::Tensor features;         // [N x 64]
  std::vector<int> class_ids;  // global class ids
  std::vector<int> domain_ids;
};

// Running-statistics encoder features, computed in chunks.
FeatureSet extract_features(model::Encoder& encoder, std::span<const data::DatasetExample> examples);

struct GanModel {
  bool attribute_only;
  model::Generator generator;
  model::Discriminator discriminator;
  model::DomainEmbedding e_gen;
  model::DomainEmbedding e_disc;

  // attribute_only: the generator context is the class attribute alone.
  GanModel(bool attribute_only, std::uint64_t seed);
  std::vector<ad::ParameterSet*> sets();
  std::vector<const ad::ParameterSet*> sets() const;
  std::vector<ad::Parameter*> generator_params();
  std::vector<ad::Parameter*> discriminator_params();

  // Generator forward for a batch of (attribute row, embedding row) pairs
  // drawn from the given tables.
  model::Var generate(model::Tape& t, const ad::Tensor& z, const ad::Tensor& attribute_table,
                      std::span<const std::size_t> attribute_rows, const model::Var* embeddings,
                      std::span<const std::size_t> embedding_rows, ad::BnMode mode, model::Grad g);
};

// Discriminator hinge loss from its two score columns.
model::Var discriminator_loss(model::Tape& t, model::Var real_scores, model::Var fake_scores);

// One stage-2 minibatch: real features with their (seen row, source row)
// labels. Fakes are generated for the same pairs.
struct GanBatch {
  ad::Tensor real;
  std::vector<std::size_t> class_rows;
  std::vector<std::size_t> domain_rows;
};

struct GanLosses {
  model::Var total;
  model::Var adversarial;     // discriminator: hinge sum; generator: -mean fake score
  model::Var classification;  // generator only: CE of A_seen p(fake)
  model::Var real_scores;
  model::Var fake_scores;
  model::Var fake_logits;
};

// Discriminator update loss; generator and E_gen are frozen.
GanLosses discriminator_step_loss(model::Tape& t, GanModel& gan, const ad::Tensor& seen_rows, const GanBatch& batch,
                                  const ad::Tensor& z);
// Generator update loss; discriminator, E_disc and the projector are frozen.
// The discriminator scores reals and fakes with its running statistics.
GanLosses generator_step_loss(model::Tape& t, GanModel& gan, const model::Projector& projector,
                              const ad::Tensor& seen_rows, const GanBatch& batch, const ad::Tensor& z,
                              double lambda_g);

class Stage2Trainer {
 public:
  Stage2Trainer(GanModel& gan, const model::Projector& projector, const FeatureSet& real, const data::SplitSpec& split,
                const data::AttributeMatrix& attributes, const Stage2Config& config, std::uint64_t seed);

  void run_epoch();
  void run(const EpochHook& hook = {});
  int epochs_done() const { return epochs_done_; }
  const Metrics& metrics() const { return metrics_; }

  void save(const std::filesystem::path& stem, const nlohmann::json& meta) const;
  void load(const std::filesystem::path& stem);

 private:
  GanModel& gan_;
  const model::Projector& projector_;
  FeatureSet real_;
  data::SplitSpec split_;
  Stage2Config config_;
  std::uint64_t seed_;
  ad::Tensor seen_rows_;
  std::vector<std::size_t> class_rows_;   // per example: row of seen_rows_
  std::vector<std::size_t> domain_rows_;  // per example: source index
  Adam adam_g_, adam_d_;
  Metrics metrics_;
  int epochs_done_ = 0;
};

struct GanEval {
  double mean_real_score = 0.0;
  double mean_fake_score = 0.0;
  double fake_accuracy = 0.0;  // frozen A_seen p(.) on generated seen-class features
};

// Scores held-out real features against fakes generated for the same
// (class, domain) pairs, discriminator BN on running statistics.
GanEval evaluate_gan(GanModel& gan, const model::Projector& projector, const FeatureSet& real,
                     const data::SplitSpec& split, const data::AttributeMatrix& attributes, std::uint64_t seed);

// --- stage 3: unseen-class classifier -----------------------------------------

class Stage3Trainer {
 public:
  // Throws LeakageError for any class outside the split's unseen set.
  Stage3Trainer(model::Classifier& classifier, const ad::Tensor& features, std::span<const int> class_ids,
                const data::SplitSpec& split, const Stage3Config& config, std::uint64_t seed);

  void run_epoch();
  void run(const EpochHook& hook = {});
  int epochs_done() const { return epochs_done_; }
  const Metrics& metrics() const { return metrics_; }

  void save(const std::filesystem::path& stem, const nlohmann::json& meta) const;
  void load(const std::filesystem::path& stem);

 private:
  model::Classifier& classifier_;
  ad::Tensor features_;
  std::vector<int> labels_;  // position in split.unseen_classes
  Stage3Config config_;
  std::uint64_t seed_;
  Adam adam_;
  Metrics metrics_;
  int epochs_done_ = 0;
};

// Fraction of rows whose argmax matches label (positions, not class ids).
double accuracy(const ad::Tensor& logits, std::span<const int> labels);

}  // namespace cocoa::train
