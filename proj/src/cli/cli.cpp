#include "cocoa/cli/cli.hpp"

#include <cstdlib>
#include <iostream>
#include <optional>
#include <thread>

#include "CLI11.hpp"
#include "cocoa/data/dataset_io.hpp"
#include "cocoa/data/feature_csv.hpp"
#include "cocoa/errors.hpp"
#include "cocoa/eval/gradcheck.hpp"
#include "cocoa/eval/synthesis.hpp"
#include "cocoa/model/checkpoint.hpp"
#include "cocoa/train/stages.hpp"

namespace cocoa::cli {
namespace fs = std::filesystem;
using nlohmann::json;

void RunConfig::validate() const {
  pipeline.train.validate();
  const int t = pipeline.benchmark.target_domain;
  if (t < 0 || t > 3) throw ConfigurationError("target domain must be in 0..3, got " + std::to_string(t));
  if (seeds < 1) throw ConfigurationError("seeds must be positive");
  if (variant != "full" && variant != "attribute-only") {
    throw ConfigurationError("variant must be 'full' or 'attribute-only', got '" + variant + "'");
  }
  const auto& b = pipeline.benchmark;
  if (b.train_per_cell < 1 || b.val_per_cell < 1 || b.test_per_cell < 1) {
    throw ConfigurationError("benchmark cell sizes must be positive");
  }
}

void to_json(json& j, const RunConfig& c) {
  j = c.pipeline;
  j["seeds"] = c.seeds;
  j["variant"] = c.variant;
}

void from_json(const json& j, RunConfig& c) {
  if (!j.is_object()) throw ConfigurationError("run config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (key != "benchmark" && key != "train" && key != "synthesis" && key != "seeds" && key != "variant") {
      throw ConfigurationError("run config: unknown key '" + key + "'");
    }
  }
  c.pipeline = j.get<eval::PipelineConfig>();
  try {
    c.seeds = j.value("seeds", c.seeds);
    c.variant = j.value("variant", c.variant);
  } catch (const json::exception& e) {
    throw ConfigurationError(std::string("run config: ") + e.what());
  }
}

fs::path data_dir(const fs::path& out) { return out / "data"; }
fs::path stage1_stem(const fs::path& out) { return out / "stage1"; }
fs::path gan_stem(const fs::path& out, const RunConfig& c) { return out / ("gan_" + c.variant); }
fs::path synthetic_csv(const fs::path& out, const RunConfig& c) {
  return out / ("synthetic_" + c.variant + "_" + eval::to_string(c.pipeline.synthesis.mode) + ".csv");
}
fs::path classifier_stem(const fs::path& out, const RunConfig& c) {
  return out / ("classifier_" + c.variant + "_" + eval::to_string(c.pipeline.synthesis.mode));
}

int worker_count() {
  int n = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  if (const char* env = std::getenv("COCOA_THREADS")) {
    int cap = 0;
    try {
      std::size_t used = 0;
      cap = std::stoi(env, &used);
      if (env[used] != '\0') cap = 0;
    } catch (const std::exception&) {
      cap = 0;
    }
    if (cap < 1) throw ConfigurationError(std::string("COCOA_THREADS must be a positive integer, got '") + env + "'");
    n = std::min(n, cap);
  }
  return n;
}

namespace {

struct Flags {
  std::optional<std::uint64_t> seed;
  std::optional<int> target_domain;
  std::optional<std::string> mode;
  std::optional<int> seeds;
  std::optional<std::string> variant;
  std::string out;
  std::string config;
  bool resume = false;
  std::size_t coords = 24;
};

void write_text(const fs::path& path, const std::string& text) {
  data::write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

json read_json(const fs::path& path) {
  const auto bytes = data::read_file(path);
  try {
    return json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    throw ParseError("'" + path.string() + "': " + e.what());
  }
}

class Session {
 public:
  Session(const Flags& f, std::ostream& out) : flags_(f), log_(out), out_(f.out) {
    if (!f.config.empty()) {
      cfg_ = read_json(f.config).get<RunConfig>();
    } else if (fs::exists(out_ / "config.json")) {
      cfg_ = read_json(out_ / "config.json").get<RunConfig>();
    }
    if (f.seed) cfg_.pipeline.train.seed = *f.seed;
    if (f.target_domain) cfg_.pipeline.benchmark.target_domain = *f.target_domain;
    if (f.mode) cfg_.pipeline.synthesis.mode = eval::parse_synthesis_mode(*f.mode);
    if (f.seeds) cfg_.seeds = *f.seeds;
    if (f.variant) cfg_.variant = *f.variant;
    cfg_.validate();
  }

  // The dataset directory fixes the benchmark section.
  data::Benchmark benchmark() {
    const auto manifest = data::load_manifest(data_dir(out_));
    if (flags_.target_domain && *flags_.target_domain != manifest.config.target_domain) {
      throw ConfigurationError("--target-domain " + std::to_string(*flags_.target_domain) + " conflicts with " +
                               data_dir(out_).string() + " (target " +
                               std::to_string(manifest.config.target_domain) + ")");
    }
    cfg_.pipeline.benchmark = manifest.config;
    return data::load_benchmark(data_dir(out_));
  }

  void save_config() const {
    fs::create_directories(out_);
    write_text(out_ / "config.json", json(cfg_).dump(2) + "\n");
  }

  json meta() const { return {{"seed", cfg_.seed()}, {"target_domain", cfg_.target_domain()}}; }

  void require(const fs::path& stem, const std::string& producer) const {
    if (!model::checkpoint_exists(stem)) {
      throw DependencyError("missing artifact '" + stem.string() + "' (run " + producer + " first)");
    }
  }

  std::unique_ptr<train::Stage1Model> stage1() const {
    require(stage1_stem(out_), "train-stage1");
    auto m = std::make_unique<train::Stage1Model>(cfg_.seed());
    auto sets = m->sets();
    model::load_checkpoint(stage1_stem(out_), "stage1", sets);
    return m;
  }

  std::unique_ptr<train::GanModel> gan() const {
    require(gan_stem(out_, cfg_), "train-gan --variant " + cfg_.variant);
    auto g = std::make_unique<train::GanModel>(cfg_.variant == "attribute-only", cfg_.seed());
    auto sets = g->sets();
    model::load_checkpoint(gan_stem(out_, cfg_), "stage2", sets);
    return g;
  }

  template <class Trainer>
  void train(Trainer& trainer, const fs::path& stem) {
    if (flags_.resume && model::checkpoint_exists(stem)) {
      trainer.load(stem);
      log_ << "resumed " << stem.filename().string() << " at epoch " << trainer.epochs_done() << "\n";
    }
    trainer.run([&](int) { trainer.save(stem, meta()); });
    trainer.save(stem, meta());
  }

  const RunConfig& config() const { return cfg_; }
  const fs::path& out() const { return out_; }
  std::ostream& log() { return log_; }

 private:
  Flags flags_;
  std::ostream& log_;
  fs::path out_;
  RunConfig cfg_;
};

void gen_data(Session& s) {
  const auto& c = s.config();
  data::BenchmarkConfig bc = c.pipeline.benchmark;
  bc.workers = worker_count();
  const auto b = data::build_benchmark(bc, c.seed());
  data::save_benchmark(data_dir(s.out()), b, bc, c.seed());
  s.save_config();
  s.log() << "wrote " << b.train.size() << "/" << b.val.size() << "/" << b.test.size() << " examples to "
          << data_dir(s.out()).string() << "\n";
}

void train_stage1(Session& s) {
  const auto b = s.benchmark();
  s.save_config();
  const auto& c = s.config();
  train::Stage1Model m(c.seed());
  train::Stage1Trainer t(m, b.train, b.split, b.attributes, c.pipeline.train.stage1, c.seed());
  s.train(t, stage1_stem(s.out()));
  t.metrics().write_csv(s.out() / "stage1_metrics.csv");
  const auto ev = train::evaluate_stage1(m, b.val, b.split, b.attributes);
  write_text(s.out() / "stage1_eval.json",
             json{{"val_class_accuracy", ev.class_accuracy}, {"val_rotation_accuracy", ev.rotation_accuracy}}.dump(2) +
                 "\n");
  s.log() << "stage1 val accuracy " << ev.class_accuracy << " rotation " << ev.rotation_accuracy << "\n";
}

void train_gan(Session& s) {
  const auto b = s.benchmark();
  s.save_config();
  const auto& c = s.config();
  auto stage1 = s.stage1();
  const auto features = train::extract_features(stage1->encoder, b.train);
  train::GanModel gan(c.variant == "attribute-only", c.seed());
  train::Stage2Trainer t(gan, stage1->projector, features, b.split, b.attributes, c.pipeline.train.stage2, c.seed());
  const auto stem = gan_stem(s.out(), c);
  s.train(t, stem);
  t.metrics().write_csv(fs::path(stem.string() + "_metrics.csv"));
  const auto held_out = train::extract_features(stage1->encoder, b.val);
  const auto ev = train::evaluate_gan(gan, stage1->projector, held_out, b.split, b.attributes, c.seed());
  write_text(fs::path(stem.string() + "_eval.json"), json{{"mean_real_score", ev.mean_real_score},
                                                          {"mean_fake_score", ev.mean_fake_score},
                                                          {"fake_accuracy", ev.fake_accuracy}}
                                                         .dump(2) +
                                                         "\n");
  s.log() << "gan " << c.variant << " real " << ev.mean_real_score << " fake " << ev.mean_fake_score
          << " fake accuracy " << ev.fake_accuracy << "\n";
}

void synthesize(Session& s) {
  const auto b = s.benchmark();
  s.save_config();
  const auto& c = s.config();
  auto gan = s.gan();
  const auto generated =
      eval::synthesize_unseen(*gan, b.split, b.attributes, b.split.unseen_classes, c.pipeline.synthesis, c.seed());
  eval::export_features_csv(generated, synthetic_csv(s.out(), c));
  s.log() << "wrote " << generated.size() << " features to " << synthetic_csv(s.out(), c).string() << "\n";
}

void train_classifier(Session& s) {
  const auto b = s.benchmark();
  s.save_config();
  const auto& c = s.config();
  const auto csv = synthetic_csv(s.out(), c);
  if (!fs::exists(csv)) throw DependencyError("missing artifact '" + csv.string() + "' (run synthesize first)");
  const auto records = data::load_feature_records(csv);
  ad::Tensor features({records.size(), model::kFeatureDim});
  std::vector<int> labels;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].feature.size() != model::kFeatureDim) {
      throw DimensionError("'" + csv.string() + "' row " + std::to_string(i + 1) + " has " +
                           std::to_string(records[i].feature.size()) + " features");
    }
    std::copy(records[i].feature.begin(), records[i].feature.end(), features.row(i).begin());
    labels.push_back(records[i].class_id);
  }
  model::Classifier clf(b.split.unseen_classes.size(), data::example_seed(c.seed(), 31));
  train::Stage3Trainer t(clf, features, labels, b.split, c.pipeline.train.stage3, c.seed());
  const auto stem = classifier_stem(s.out(), c);
  s.train(t, stem);
  t.metrics().write_csv(fs::path(stem.string() + "_metrics.csv"));
  s.log() << "classifier trained on " << records.size() << " features\n";
}

void evaluate(Session& s) {
  const auto b = s.benchmark();
  const auto& c = s.config();
  const auto stem = classifier_stem(s.out(), c);
  s.require(stem, "train-classifier");
  auto stage1 = s.stage1();
  model::Classifier clf(b.split.unseen_classes.size(), data::example_seed(c.seed(), 31));
  std::vector<ad::ParameterSet*> sets{&clf.params()};
  model::load_checkpoint(stem, "stage3", sets);
  s.save_config();
  const auto predicted = eval::predict(stage1->encoder, clf, b.test, b.split);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) correct += predicted[i] == b.test[i].class_id;
  const double chance = 1.0 / static_cast<double>(b.split.unseen_classes.size());
  const double acc = b.test.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(b.test.size());
  const json report{{"variant", c.variant},
                    {"mode", eval::to_string(c.pipeline.synthesis.mode)},
                    {"target_domain", b.split.target_domain},
                    {"seed", c.seed()},
                    {"accuracy", acc},
                    {"correct", correct},
                    {"total", b.test.size()},
                    {"chance", chance},
                    {"p_value", eval::binomial_upper_tail(correct, b.test.size(), chance)}};
  write_text(fs::path(stem.string() + "_evaluation.json"), report.dump(2) + "\n");
  s.log() << "accuracy " << acc << " (" << correct << "/" << b.test.size() << ")\n";
}

void ablate(Session& s) {
  s.save_config();
  const auto& c = s.config();
  std::vector<std::uint64_t> seeds;
  for (int i = 0; i < c.seeds; ++i) seeds.push_back(c.seed() + static_cast<std::uint64_t>(i));
  const std::vector<int> targets{0, 1, 2, 3};
  const auto result = eval::run_ablation(c.pipeline, c.seed(), targets, seeds, worker_count());
  write_text(s.out() / "ablation.csv", eval::ablation_csv(result.rows));
  json summary = json::array();
  for (const auto& v : result.summary()) {
    std::size_t correct = 0, total = 0;
    for (const auto& r : result.rows) {
      if (r.variant != v.variant) continue;
      correct += r.correct;
      total += r.total;
    }
    summary.push_back({{"variant", v.variant},
                       {"mean", v.mean},
                       {"stddev", v.stddev},
                       {"cells", v.cells},
                       {"pooled_correct", correct},
                       {"pooled_total", total},
                       {"p_value_vs_chance", eval::binomial_upper_tail(correct, total, 0.25)}});
    s.log() << v.variant << " " << v.mean << " +- " << v.stddev << "\n";
  }
  json probes = json::array();
  for (std::size_t i = 0; i < result.pipelines.size(); ++i) {
    const auto& p = result.pipelines[i];
    probes.push_back({{"target_domain", targets[i / seeds.size()]},
                      {"seed", seeds[i % seeds.size()]},
                      {"probe_conditioned", p.probe_conditioned},
                      {"probe_semantic", p.probe_semantic},
                      {"stage1_val_accuracy", p.stage1_val_accuracy},
                      {"stage1_val_rotation", p.stage1_val_rotation}});
  }
  write_text(s.out() / "ablation_summary.json", json{{"variants", summary}, {"cells", probes}}.dump(2) + "\n");
}

void export_features(Session& s) {
  const auto b = s.benchmark();
  s.save_config();
  auto stage1 = s.stage1();
  std::vector<data::FeatureRecord> records;
  for (const auto* part : {&b.train, &b.test}) {
    const auto f = train::extract_features(stage1->encoder, *part);
    for (std::size_t i = 0; i < f.class_ids.size(); ++i) {
      data::FeatureRecord r;
      const auto row = f.features.row(i);
      r.feature.assign(row.begin(), row.end());
      r.class_id = f.class_ids[i];
      r.domain_id = f.domain_ids[i];
      records.push_back(std::move(r));
    }
  }
  data::write_feature_records(s.out() / "features_real.csv", records, data::FeatureColumns::domain);
  s.log() << "wrote " << records.size() << " encoder features to " << (s.out() / "features_real.csv").string()
          << "\n";
  const auto csv = synthetic_csv(s.out(), s.config());
  if (fs::exists(csv)) s.log() << "generated features: " << csv.string() << "\n";
}

void grad_check(Session& s, std::size_t coords) {
  s.save_config();
  eval::GradCheckSuiteOptions opt;
  opt.seed = s.config().seed();
  opt.coords_per_parameter = coords;
  const auto cases = eval::run_grad_check_suite(opt);
  json report = json::array();
  for (const auto& c : cases) {
    s.log() << c.name << " " << c.report.summary() << "\n";
    report.push_back({{"name", c.name},
                      {"passed", c.report.passed},
                      {"max_relative_error", c.report.max_relative_error},
                      {"checked", c.report.checked},
                      {"skipped_at_kinks", c.report.skipped_at_kinks}});
  }
  write_text(s.out() / "grad_check.json", report.dump(2) + "\n");
  if (!eval::all_passed(cases)) throw NumericError("grad-check failed; see " + (s.out() / "grad_check.json").string());
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"cocoa: zero-shot domain generalization pipeline on a synthetic benchmark"};
  app.require_subcommand(1);
  Flags f;
  std::string which;

  auto add = [&](const std::string& name, const std::string& help) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--out", f.out, "run directory")->required();
    sub->add_option("--config", f.config, "JSON run config; flags override it");
    sub->add_option_function<std::uint64_t>("--seed", [&](const std::uint64_t& v) { f.seed = v; }, "master seed");
    sub->add_option_function<int>("--target-domain", [&](const int& v) { f.target_domain = v; },
                                  "held-out domain 0..3");
    sub->add_option_function<std::string>("--mode", [&](const std::string& v) { f.mode = v; },
                                          "source-only | interpolated | mixed");
    sub->add_option_function<int>("--seeds", [&](const int& v) { f.seeds = v; }, "number of ablation seeds");
    sub->add_option_function<std::string>("--variant", [&](const std::string& v) { f.variant = v; },
                                          "full | attribute-only");
    sub->add_flag("--resume", f.resume, "continue from an existing checkpoint");
    sub->callback([&, name] { which = name; });
    return sub;
  };
  add("gen-data", "build the synthetic benchmark into <out>/data");
  add("train-stage1", "train encoder, projector and rotation head");
  add("train-gan", "train the conditional feature GAN");
  add("synthesize", "generate unseen-class features");
  add("train-classifier", "train the unseen-class classifier on generated features");
  add("evaluate", "score the classifier on target-domain test images");
  add("ablate", "S1..S4 over all targets and --seeds seeds");
  add("export-features", "write encoder features as CSV");
  add("grad-check", "finite-difference gradient checks")
      ->add_option("--coords", f.coords, "coordinates per parameter (0 = all)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 1;
  }

  try {
    Session s(f, out);
    if (which == "gen-data") gen_data(s);
    else if (which == "train-stage1") train_stage1(s);
    else if (which == "train-gan") train_gan(s);
    else if (which == "synthesize") synthesize(s);
    else if (which == "train-classifier") train_classifier(s);
    else if (which == "evaluate") evaluate(s);
    else if (which == "ablate") ablate(s);
    else if (which == "export-features") export_features(s);
    else if (which == "grad-check") grad_check(s, f.coords);
    return 0;
  } catch (const NumericError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace cocoa::cli
