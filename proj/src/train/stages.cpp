#include "cocoa/train/stages.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>

#include "cocoa/errors.hpp"
#include "cocoa/model/checkpoint.hpp"

namespace cocoa::train {
namespace {

using ad::Tensor;
using model::Grad;
using model::Tape;
using model::Var;
namespace fs = std::filesystem;

Tensor gather(const Tensor& m, std::span<const std::size_t> rows) {
  Tensor out({rows.size(), m.cols()});
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy(m.row(rows[i]).begin(), m.row(rows[i]).end(), out.row(i).begin());
  return out;
}

Tensor stack(const Tensor& a, const Tensor& b) {
  Tensor out({a.rows() + b.rows(), a.cols()});
  std::copy(a.storage().begin(), a.storage().end(), out.storage().begin());
  std::copy(b.storage().begin(), b.storage().end(), out.storage().begin() + static_cast<std::ptrdiff_t>(a.numel()));
  return out;
}

double scalar(const Tape& t, Var v) { return t.value(v)[0]; }

// Any numeric failure inside an epoch (NaN reaching batchnorm, say) counts
// as divergence; a batch too small for statistics stays what it is.
template <class F>
void diverge_guard(const char* stage, int epoch, F&& body) {
  try {
    body();
  } catch (const DegenerateBatchError&) {
    throw;
  } catch (const TrainingDivergedError&) {
    throw;
  } catch (const NumericError& e) {
    throw TrainingDivergedError(std::string(stage) + " epoch " + std::to_string(epoch) + ": " + e.what());
  }
}

void require_finite(double v, const char* stage, const char* what, int epoch) {
  if (!std::isfinite(v)) {
    throw TrainingDivergedError(std::string(stage) + " epoch " + std::to_string(epoch) + ": non-finite " + what);
  }
}

void check_example(const data::DatasetExample& ex, const data::SplitSpec& split, const char* stage) {
  if (!split.is_seen(ex.class_id)) {
    throw LeakageError(std::string(stage) + ": class " + std::to_string(ex.class_id) + " is not a seen class");
  }
  if (!split.is_source(ex.domain_id)) {
    throw LeakageError(std::string(stage) + ": domain " + std::to_string(ex.domain_id) + " is not a source domain");
  }
}

std::size_t argmax_row(const Tensor& logits, std::size_t r) {
  const auto row = logits.row(r);
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

fs::path optimizer_stem(const fs::path& stem) {
  fs::path p = stem;
  p += "-optim";
  return p;
}

// Model parameters go to <stem>, optimizer moments and progress to <stem>-optim.
void save_progress(const fs::path& stem, const std::string& stage, const nlohmann::json& meta,
                   const std::vector<const ad::ParameterSet*>& model_sets,
                   const std::vector<const ad::ParameterSet*>& optimizer_sets, int epochs_done,
                   const Metrics& metrics) {
  nlohmann::json m = meta;
  m["epochs_done"] = epochs_done;
  model::save_checkpoint(stem, stage, m, model_sets);
  m["metrics"] = metrics.to_json();
  model::save_checkpoint(optimizer_stem(stem), stage + ".optimizer", m, optimizer_sets);
}

void load_progress(const fs::path& stem, const std::string& stage, const std::vector<ad::ParameterSet*>& model_sets,
                   const std::vector<ad::ParameterSet*>& optimizer_sets, int& epochs_done, Metrics& metrics) {
  model::load_checkpoint(stem, stage, model_sets);
  const auto info = model::load_checkpoint(optimizer_stem(stem), stage + ".optimizer", optimizer_sets);
  try {
    epochs_done = info.meta.at("epochs_done").get<int>();
    metrics = Metrics::from_json(info.meta.at("metrics"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint '" + optimizer_stem(stem).string() + "': " + e.what());
  }
}

std::vector<ad::Parameter*> trainable_of(std::initializer_list<ad::ParameterSet*> sets) {
  std::vector<ad::Parameter*> out;
  for (auto* s : sets)
    for (auto* p : s->trainable()) out.push_back(p);
  return out;
}

}  // namespace

std::mt19937_64 epoch_rng(std::uint64_t seed, int stage, int epoch) {
  const auto s = data::example_seed(data::example_seed(seed, static_cast<std::uint64_t>(stage)),
                                    static_cast<std::uint64_t>(epoch));
  return std::mt19937_64(s);
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch, std::size_t min_batch,
                                                    std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  // Fisher-Yates with an explicit draw so the permutation does not depend on
  // the standard library's shuffle implementation.
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += batch) {
    const std::size_t end = std::min(n, start + batch);
    if (end - start < min_batch) break;
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

Tensor image_matrix(std::span<const data::DatasetExample> examples) { return rotated_image_matrix(examples, 0); }

Tensor rotated_image_matrix(std::span<const data::DatasetExample> examples, int k) {
  Tensor out({examples.size(), model::kInputDim});
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto img = k == 0 ? examples[i].image : data::rotate90(examples[i].image, k);
    if (img.pixels().size() != model::kInputDim) throw DimensionError("image does not flatten to 256 values");
    std::copy(img.pixels().begin(), img.pixels().end(), out.row(i).begin());
  }
  return out;
}

Tensor seen_attribute_rows(const data::SplitSpec& split, const data::AttributeMatrix& attributes) {
  return attributes.select(split.seen_classes);
}

Tensor unseen_attribute_rows(const data::SplitSpec& split, const data::AttributeMatrix& attributes) {
  return attributes.select(split.unseen_classes);
}

double accuracy(const Tensor& logits, std::span<const int> labels) {
  if (labels.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += argmax_row(logits, i) == static_cast<std::size_t>(labels[i]);
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

// --- stage 1 -------------------------------------------------------------------

Stage1Model::Stage1Model(std::uint64_t seed)
    : encoder(data::example_seed(seed, 11)),
      projector(data::example_seed(seed, 12)),
      rotation(data::example_seed(seed, 13)) {}

std::vector<ad::ParameterSet*> Stage1Model::sets() { return {&encoder.params(), &projector.params(), &rotation.params()}; }

std::vector<const ad::ParameterSet*> Stage1Model::sets() const {
  return {&encoder.params(), &projector.params(), &rotation.params()};
}

Stage1Losses stage1_step_loss(Tape& t, Stage1Model& model, const Tensor& images, const Tensor& rotated,
                              std::span<const int> labels, std::span<const int> rotations, const Tensor& seen_rows,
                              double lambda_rot, ad::BnMode mode) {
  Stage1Losses l;
  Var f = model.encoder.forward(t, t.constant(images), mode, Grad::on);
  l.class_logits = model.projector.class_logits(t, f, seen_rows, Grad::on);
  l.aggregate = ad::softmax_cross_entropy(t, l.class_logits, labels);
  Var fr = model.encoder.forward(t, t.constant(rotated), ad::BnMode::batch_eval, Grad::on);
  l.rotation_logits = model.rotation.forward(t, fr, Grad::on);
  l.rotation = ad::softmax_cross_entropy(t, l.rotation_logits, rotations);
  l.total = ad::add(t, l.aggregate, ad::scale(t, l.rotation, lambda_rot));
  return l;
}

Stage1Trainer::Stage1Trainer(Stage1Model& model, std::span<const data::DatasetExample> train,
                             const data::SplitSpec& split, const data::AttributeMatrix& attributes,
                             const Stage1Config& config, std::uint64_t seed)
    : model_(model),
      train_(train),
      split_(split),
      config_(config),
      seed_(seed),
      seen_rows_(seen_attribute_rows(split, attributes)),
      adam_(trainable_of({&model.encoder.params(), &model.projector.params(), &model.rotation.params()}),
            AdamConfig{config.lr, 0.9, 0.999, 1e-8}, "stage1.adam") {
  if (train.size() < 2) throw ValidationError("stage1: need at least 2 training examples");
  for (const auto& ex : train) check_example(ex, split, "stage1");
  for (int k = 0; k < 4; ++k) inputs_.push_back(rotated_image_matrix(train, k));
  for (const auto& ex : train) labels_.push_back(split.seen_index(ex.class_id));
}

void Stage1Trainer::run_epoch() {
  diverge_guard("stage1", epochs_done_ + 1, [&] {
    const int epoch = epochs_done_ + 1;
    auto rng = epoch_rng(seed_, 1, epochs_done_);
    const auto batches = epoch_batches(train_.size(), static_cast<std::size_t>(config_.batch), 2, rng);
    double agg_sum = 0.0, rot_sum = 0.0;
    std::size_t hits = 0, rot_hits = 0, seen = 0;
    for (const auto& batch : batches) {
      for (std::size_t i : batch) check_example(train_[i], split_, "stage1");
      const std::size_t B = batch.size();
      std::vector<int> y(B), k(B);
      Tensor rotated({B, model::kInputDim});
      for (std::size_t i = 0; i < B; ++i) {
        y[i] = labels_[batch[i]];
        k[i] = static_cast<int>(rng() % 4);
        const auto src = inputs_[static_cast<std::size_t>(k[i])].row(batch[i]);
        std::copy(src.begin(), src.end(), rotated.row(i).begin());
      }
      Tape t;
      adam_.zero_grad();
      const auto l = stage1_step_loss(t, model_, gather(inputs_[0], batch), rotated, y, k, seen_rows_,
                                      config_.lambda_rot, ad::BnMode::train);
      require_finite(scalar(t, l.total), "stage1", "loss", epoch);
      t.backward(l.total);
      adam_.step();

      agg_sum += scalar(t, l.aggregate) * static_cast<double>(B);
      rot_sum += scalar(t, l.rotation) * static_cast<double>(B);
      for (std::size_t i = 0; i < B; ++i) {
        hits += argmax_row(t.value(l.class_logits), i) == static_cast<std::size_t>(y[i]);
        rot_hits += argmax_row(t.value(l.rotation_logits), i) == static_cast<std::size_t>(k[i]);
      }
      seen += B;
    }
    const double n = static_cast<double>(std::max<std::size_t>(seen, 1));
    metrics_.add(epoch, "loss_agg", agg_sum / n);
    metrics_.add(epoch, "loss_rot", rot_sum / n);
    metrics_.add(epoch, "train_accuracy", static_cast<double>(hits) / n);
    metrics_.add(epoch, "rotation_accuracy", static_cast<double>(rot_hits) / n);
    epochs_done_ = epoch;
  });
}

void Stage1Trainer::run(const EpochHook& hook) {
  while (epochs_done_ < config_.epochs) {
    run_epoch();
    if (hook) hook(epochs_done_);
  }
}

void Stage1Trainer::save(const fs::path& stem, const nlohmann::json& meta) const {
  save_progress(stem, "stage1", meta, std::as_const(model_).sets(), {&adam_.state()}, epochs_done_, metrics_);
}

void Stage1Trainer::load(const fs::path& stem) {
  load_progress(stem, "stage1", model_.sets(), {&adam_.state()}, epochs_done_, metrics_);
}

Stage1Eval evaluate_stage1(Stage1Model& model, std::span<const data::DatasetExample> examples,
                           const data::SplitSpec& split, const data::AttributeMatrix& attributes) {
  Stage1Eval out;
  if (examples.empty()) return out;
  const Tensor seen_rows = seen_attribute_rows(split, attributes);
  std::vector<int> y;
  for (const auto& ex : examples) y.push_back(split.seen_index(ex.class_id));
  {
    Tape t;
    Var f = t.constant(model.encoder.encode(image_matrix(examples)));
    out.class_accuracy = accuracy(t.value(model.projector.class_logits(t, f, seen_rows, Grad::off)), y);
  }
  double rot = 0.0;
  for (int k = 0; k < 4; ++k) {
    const Tensor f = model.encoder.encode(rotated_image_matrix(examples, k));
    rot += accuracy(model.rotation.logits(f), std::vector<int>(examples.size(), k));
  }
  out.rotation_accuracy = rot / 4.0;
  return out;
}

// --- stage 2 -------------------------------------------------------------------

FeatureSet extract_features(model::Encoder& encoder, std::span<const data::DatasetExample> examples) {
  FeatureSet out;
  out.features = Tensor({std::max<std::size_t>(examples.size(), 1), model::kFeatureDim});
  constexpr std::size_t kChunk = 512;
  for (std::size_t start = 0; start < examples.size(); start += kChunk) {
    const auto part = examples.subspan(start, std::min(kChunk, examples.size() - start));
    const Tensor f = encoder.encode(image_matrix(part));
    std::copy(f.storage().begin(), f.storage().end(),
              out.features.storage().begin() + static_cast<std::ptrdiff_t>(start * model::kFeatureDim));
  }
  if (examples.empty()) out.features = Tensor();
  for (const auto& ex : examples) {
    out.class_ids.push_back(ex.class_id);
    out.domain_ids.push_back(ex.domain_id);
  }
  return out;
}

GanModel::GanModel(bool attribute_only_, std::uint64_t seed)
    : attribute_only(attribute_only_),
      generator(attribute_only_ ? model::kAttrDim : model::kContextDim, data::example_seed(seed, 21)),
      discriminator(data::example_seed(seed, 22)),
      e_gen("E_gen", data::example_seed(seed, 23)),
      e_disc("E_disc", data::example_seed(seed, 24)) {}

std::vector<ad::ParameterSet*> GanModel::sets() {
  return {&generator.params(), &discriminator.params(), &e_gen.params(), &e_disc.params()};
}

std::vector<const ad::ParameterSet*> GanModel::sets() const {
  return {&generator.params(), &discriminator.params(), &e_gen.params(), &e_disc.params()};
}

std::vector<ad::Parameter*> GanModel::generator_params() {
  auto out = generator.params().trainable();
  if (!attribute_only) out.push_back(&e_gen.table());
  return out;
}

std::vector<ad::Parameter*> GanModel::discriminator_params() {
  auto out = discriminator.params().trainable();
  out.push_back(&e_disc.table());
  return out;
}

Var GanModel::generate(Tape& t, const Tensor& z, const Tensor& attribute_table,
                       std::span<const std::size_t> attribute_rows, const Var* embeddings,
                       std::span<const std::size_t> embedding_rows, ad::BnMode mode, Grad g) {
  const auto ctx = model::make_contexts(t, attribute_table, attribute_rows, attribute_only ? nullptr : embeddings,
                                        embedding_rows);
  return generator.forward(t, t.constant(z), ctx.contexts, ctx.rows, mode, g);
}

Var discriminator_loss(Tape& t, Var real_scores, Var fake_scores) {
  return ad::add(t, ad::mean(t, ad::hinge(t, real_scores, ad::HingeSide::real)),
                 ad::mean(t, ad::hinge(t, fake_scores, ad::HingeSide::fake)));
}

namespace {

Tensor sample_noise(std::size_t rows, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor z({rows, model::kNoiseDim});
  for (auto& v : z.storage()) v = n(rng);
  return z;
}

std::vector<std::size_t> twice(const std::vector<std::size_t>& v) {
  std::vector<std::size_t> out(v);
  out.insert(out.end(), v.begin(), v.end());
  return out;
}

}  // namespace

GanLosses discriminator_step_loss(Tape& t, GanModel& gan, const Tensor& seen_rows, const GanBatch& batch,
                                  const Tensor& z) {
  const std::size_t B = batch.class_rows.size();
  const Tensor attrs = gather(seen_rows, batch.class_rows);
  GanLosses l;
  Var eg = t.frozen(gan.e_gen.table());
  Var fake = gan.generate(t, z, seen_rows, batch.class_rows, &eg, batch.domain_rows, ad::BnMode::batch_eval, Grad::off);
  Var joint = ad::concat_rows(t, t.constant(batch.real), fake);
  Var s = gan.discriminator.forward(t, joint, t.constant(stack(attrs, attrs)), t.parameter(gan.e_disc.table()),
                                    twice(batch.domain_rows), ad::BnMode::train, Grad::on);
  l.real_scores = ad::slice_rows(t, s, 0, B);
  l.fake_scores = ad::slice_rows(t, s, B, 2 * B);
  l.adversarial = discriminator_loss(t, l.real_scores, l.fake_scores);
  l.total = l.adversarial;
  return l;
}

GanLosses generator_step_loss(Tape& t, GanModel& gan, const model::Projector& projector, const Tensor& seen_rows,
                              const GanBatch& batch, const Tensor& z, double lambda_g) {
  const Tensor attrs = gather(seen_rows, batch.class_rows);
  std::vector<int> y(batch.class_rows.begin(), batch.class_rows.end());
  GanLosses l;
  Var eg = t.parameter(gan.e_gen.table());
  Var fake = gan.generate(t, z, seen_rows, batch.class_rows, &eg, batch.domain_rows, ad::BnMode::train, Grad::on);
  // Frozen D scores with its running statistics; with batch statistics G can
  // inflate the joint batch variance instead of moving toward the reals.
  Var ed = t.frozen(gan.e_disc.table());
  l.real_scores = gan.discriminator.forward(t, t.constant(batch.real), t.constant(attrs), ed, batch.domain_rows,
                                            ad::BnMode::running_eval, Grad::off);
  l.fake_scores = gan.discriminator.forward(t, fake, t.constant(attrs), ed, batch.domain_rows,
                                            ad::BnMode::running_eval, Grad::off);
  l.adversarial = ad::scale(t, ad::mean(t, l.fake_scores), -1.0);
  l.fake_logits = projector.class_logits(t, fake, seen_rows, Grad::off);
  l.classification = ad::softmax_cross_entropy(t, l.fake_logits, y);
  l.total = ad::add(t, l.adversarial, ad::scale(t, l.classification, lambda_g));
  return l;
}

Stage2Trainer::Stage2Trainer(GanModel& gan, const model::Projector& projector, const FeatureSet& real,
                             const data::SplitSpec& split, const data::AttributeMatrix& attributes,
                             const Stage2Config& config, std::uint64_t seed)
    : gan_(gan),
      projector_(projector),
      real_(real),
      split_(split),
      config_(config),
      seed_(seed),
      seen_rows_(seen_attribute_rows(split, attributes)),
      adam_g_(gan.generator_params(), AdamConfig{config.lr, config.beta1, config.beta2, 1e-8}, "stage2.adam_g"),
      adam_d_(gan.discriminator_params(), AdamConfig{config.lr, config.beta1, config.beta2, 1e-8}, "stage2.adam_d") {
  const std::size_t n = real.class_ids.size();
  if (n < 2 || real.features.rows() != n || real.domain_ids.size() != n) {
    throw ValidationError("stage2: feature set needs at least 2 rows with matching labels");
  }
  if (split.source_domains.size() != model::kNumSources) {
    throw ConfigurationError("stage2: expected " + std::to_string(model::kNumSources) + " source domains");
  }
  for (std::size_t i = 0; i < n; ++i) {
    data::DatasetExample probe;
    probe.class_id = real.class_ids[i];
    probe.domain_id = real.domain_ids[i];
    check_example(probe, split, "stage2");
    class_rows_.push_back(static_cast<std::size_t>(split.seen_index(probe.class_id)));
    domain_rows_.push_back(static_cast<std::size_t>(split.source_index(probe.domain_id)));
  }
}

void Stage2Trainer::run_epoch() {
  diverge_guard("stage2", epochs_done_ + 1, [&] {
    const int epoch = epochs_done_ + 1;
    auto rng = epoch_rng(seed_, 2, epochs_done_);
    const auto batches = epoch_batches(class_rows_.size(), static_cast<std::size_t>(config_.batch), 2, rng);
    double d_sum = 0.0, adv_sum = 0.0, cls_sum = 0.0, real_sum = 0.0, fake_sum = 0.0;
    std::size_t steps = 0, fake_hits = 0, fake_total = 0;
    for (const auto& idx : batches) {
      const std::size_t B = idx.size();
      GanBatch batch;
      for (std::size_t i : idx) {
        if (!split_.is_seen(real_.class_ids[i]) || !split_.is_source(real_.domain_ids[i])) {
          throw LeakageError("stage2: batch contains an unseen class or non-source domain");
        }
        batch.class_rows.push_back(class_rows_[i]);
        batch.domain_rows.push_back(domain_rows_[i]);
      }
      batch.real = gather(real_.features, idx);

      for (int d = 0; d < config_.d_steps; ++d) {
        Tape t;
        adam_d_.zero_grad();
        const auto l = discriminator_step_loss(t, gan_, seen_rows_, batch, sample_noise(B, rng));
        require_finite(scalar(t, l.total), "stage2", "discriminator loss", epoch);
        t.backward(l.total);
        adam_d_.step();
        d_sum += scalar(t, l.total);
        real_sum += scalar(t, ad::mean(t, l.real_scores));
        fake_sum += scalar(t, ad::mean(t, l.fake_scores));
      }

      Tape t;
      adam_g_.zero_grad();
      const auto l = generator_step_loss(t, gan_, projector_, seen_rows_, batch, sample_noise(B, rng), config_.lambda_g);
      require_finite(scalar(t, l.total), "stage2", "generator loss", epoch);
      t.backward(l.total);
      adam_g_.step();
      adv_sum += scalar(t, l.adversarial);
      cls_sum += scalar(t, l.classification);
      for (std::size_t i = 0; i < B; ++i) fake_hits += argmax_row(t.value(l.fake_logits), i) == batch.class_rows[i];
      fake_total += B;
      ++steps;
    }
    const double n = static_cast<double>(std::max<std::size_t>(steps, 1));
    const double nd = n * config_.d_steps;
    metrics_.add(epoch, "loss_d", d_sum / nd);
    metrics_.add(epoch, "loss_g_adv", adv_sum / n);
    metrics_.add(epoch, "loss_g_cls", cls_sum / n);
    metrics_.add(epoch, "score_real", real_sum / nd);
    metrics_.add(epoch, "score_fake", fake_sum / nd);
    metrics_.add(epoch, "fake_accuracy",
                 static_cast<double>(fake_hits) / static_cast<double>(std::max<std::size_t>(fake_total, 1)));
    epochs_done_ = epoch;
  });
}

void Stage2Trainer::run(const EpochHook& hook) {
  while (epochs_done_ < config_.epochs) {
    run_epoch();
    if (hook) hook(epochs_done_);
  }
}

void Stage2Trainer::save(const fs::path& stem, const nlohmann::json& meta) const {
  nlohmann::json m = meta;
  m["attribute_only"] = gan_.attribute_only;
  save_progress(stem, "stage2", m, std::as_const(gan_).sets(), {&adam_g_.state(), &adam_d_.state()}, epochs_done_,
                metrics_);
}

void Stage2Trainer::load(const fs::path& stem) {
  load_progress(stem, "stage2", gan_.sets(), {&adam_g_.state(), &adam_d_.state()}, epochs_done_, metrics_);
}

GanEval evaluate_gan(GanModel& gan, const model::Projector& projector, const FeatureSet& real,
                     const data::SplitSpec& split, const data::AttributeMatrix& attributes, std::uint64_t seed) {
  GanEval out;
  const std::size_t B = real.class_ids.size();
  if (B < 2) throw ValidationError("evaluate_gan: need at least 2 real features");
  const Tensor seen_rows = seen_attribute_rows(split, attributes);
  std::vector<std::size_t> cls(B), dom(B);
  std::vector<int> y(B);
  for (std::size_t i = 0; i < B; ++i) {
    data::DatasetExample probe;
    probe.class_id = real.class_ids[i];
    probe.domain_id = real.domain_ids[i];
    check_example(probe, split, "evaluate_gan");
    cls[i] = static_cast<std::size_t>(split.seen_index(probe.class_id));
    dom[i] = static_cast<std::size_t>(split.source_index(probe.domain_id));
    y[i] = static_cast<int>(cls[i]);
  }
  std::mt19937_64 rng(seed);
  const Tensor attrs = gather(seen_rows, cls);

  Tape t;
  Var eg = t.frozen(gan.e_gen.table());
  Var fake = gan.generate(t, sample_noise(B, rng), seen_rows, cls, &eg, dom, ad::BnMode::batch_eval, Grad::off);
  Var ed = t.frozen(gan.e_disc.table());
  Var a = t.constant(attrs);
  Var sr = gan.discriminator.forward(t, t.constant(real.features), a, ed, dom, ad::BnMode::running_eval, Grad::off);
  Var sf = gan.discriminator.forward(t, fake, a, ed, dom, ad::BnMode::running_eval, Grad::off);
  out.mean_real_score = scalar(t, ad::mean(t, sr));
  out.mean_fake_score = scalar(t, ad::mean(t, sf));
  out.fake_accuracy = accuracy(t.value(projector.class_logits(t, fake, seen_rows, Grad::off)), y);
  return out;
}

// --- stage 3 -------------------------------------------------------------------

Stage3Trainer::Stage3Trainer(model::Classifier& classifier, const Tensor& features, std::span<const int> class_ids,
                             const data::SplitSpec& split, const Stage3Config& config, std::uint64_t seed)
    : classifier_(classifier),
      features_(features),
      config_(config),
      seed_(seed),
      adam_(classifier.params().trainable(), AdamConfig{config.lr, 0.9, 0.999, 1e-8}, "stage3.adam") {
  if (class_ids.empty() || features.rows() != class_ids.size()) {
    throw ValidationError("stage3: features and labels must be non-empty and of equal length");
  }
  if (classifier.outputs() != split.unseen_classes.size()) {
    throw DimensionError("stage3: classifier has " + std::to_string(classifier.outputs()) + " outputs for " +
                         std::to_string(split.unseen_classes.size()) + " unseen classes");
  }
  for (int c : class_ids) {
    const int idx = split.unseen_index(c);
    if (idx < 0) throw LeakageError("stage3: class " + std::to_string(c) + " is not an unseen class");
    labels_.push_back(idx);
  }
}

void Stage3Trainer::run_epoch() {
  diverge_guard("stage3", epochs_done_ + 1, [&] {
    const int epoch = epochs_done_ + 1;
    auto rng = epoch_rng(seed_, 3, epochs_done_);
    const auto batches = epoch_batches(labels_.size(), static_cast<std::size_t>(config_.batch), 1, rng);
    double loss_sum = 0.0;
    std::size_t hits = 0, seen = 0;
    for (const auto& batch : batches) {
      std::vector<int> y;
      for (std::size_t i : batch) y.push_back(labels_[i]);
      Tape t;
      adam_.zero_grad();
      Var logits = classifier_.forward(t, t.constant(gather(features_, batch)), Grad::on);
      Var loss = ad::softmax_cross_entropy(t, logits, y);
      require_finite(scalar(t, loss), "stage3", "loss", epoch);
      t.backward(loss);
      adam_.step();
      loss_sum += scalar(t, loss) * static_cast<double>(batch.size());
      for (std::size_t i = 0; i < batch.size(); ++i) hits += argmax_row(t.value(logits), i) == static_cast<std::size_t>(y[i]);
      seen += batch.size();
    }
    const double n = static_cast<double>(std::max<std::size_t>(seen, 1));
    metrics_.add(epoch, "loss_cls", loss_sum / n);
    metrics_.add(epoch, "train_accuracy", static_cast<double>(hits) / n);
    epochs_done_ = epoch;
  });
}

void Stage3Trainer::run(const EpochHook& hook) {
  while (epochs_done_ < config_.epochs) {
    run_epoch();
    if (hook) hook(epochs_done_);
  }
}

void Stage3Trainer::save(const fs::path& stem, const nlohmann::json& meta) const {
  save_progress(stem, "stage3", meta, {&classifier_.params()}, {&adam_.state()}, epochs_done_, metrics_);
}

void Stage3Trainer::load(const fs::path& stem) {
  load_progress(stem, "stage3", {&classifier_.params()}, {&adam_.state()}, epochs_done_, metrics_);
}

}  // namespace cocoa::train
