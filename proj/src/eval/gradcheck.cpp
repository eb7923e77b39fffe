#include "cocoa/eval/gradcheck.hpp"

#include <random>

#include "cocoa/autodiff/ops.hpp"
#include "cocoa/data/benchmark.hpp"
#include "cocoa/model/networks.hpp"
#include "cocoa/train/stages.hpp"

namespace cocoa::eval {
namespace {

using ad::Parameter;
using ad::ParameterSet;
using ad::Tape;
using ad::Tensor;
using ad::Var;

Tensor random_tensor(ad::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor out(shape);
  std::uniform_real_distribution<double> u(lo, hi);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = u(rng);
  return out;
}

std::vector<int> random_labels(std::size_t n, int k, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> u(0, k - 1);
  std::vector<int> out(n);
  for (auto& v : out) v = u(rng);
  return out;
}

// Scalar read-out that weights every output entry differently.
Var readout(Tape& t, Var x, const Tensor& w) { return ad::sum(t, ad::mul(t, x, t.constant(w))); }

void append(std::vector<Parameter*>& out, std::vector<Parameter*> more) {
  out.insert(out.end(), more.begin(), more.end());
}

}  // namespace

std::vector<GradCheckCase> run_grad_check_suite(const GradCheckSuiteOptions& options) {
  std::mt19937_64 rng(options.seed ^ 0x6a09e667f3bcc908ULL);
  ad::GradCheckOptions gc;
  gc.tolerance = options.tolerance;
  gc.max_coords_per_parameter = options.coords_per_parameter;
  gc.seed = options.seed;

  std::vector<GradCheckCase> cases;
  auto run = [&](std::string name, const ad::LossFn& fn, std::vector<Parameter*> params) {
    cases.push_back({std::move(name), ad::grad_check(fn, params, gc)});
  };

  // primitives
  {
    ParameterSet ps;
    Parameter& a = ps.add("a", random_tensor({5, 4}, rng));
    Parameter& b = ps.add("b", random_tensor({4, 3}, rng));
    Parameter& c = ps.add("c", random_tensor({3}, rng));
    const Tensor w = random_tensor({5, 3}, rng);
    run("matmul_add_row",
        [&](Tape& t) { return readout(t, ad::add_row(t, ad::matmul(t, t.parameter(a), t.parameter(b)), t.parameter(c)), w); },
        ps.trainable());
  }
  {
    ParameterSet ps;
    Parameter& a = ps.add("a", random_tensor({4, 3}, rng));
    Parameter& b = ps.add("b", random_tensor({4, 3}, rng));
    const Tensor w = random_tensor({4, 3}, rng);
    run("elementwise",
        [&](Tape& t) {
          Var x = t.parameter(a), y = t.parameter(b);
          Var z = ad::add(t, ad::mul(t, x, y), ad::scale(t, ad::sub(t, x, y), 0.7));
          return ad::add(t, readout(t, ad::add_scalar(t, z, 0.3), w), ad::mean(t, ad::rowwise_dot(t, x, y)));
        },
        ps.trainable());
  }
  {
    ParameterSet ps;
    Parameter& a = ps.add("a", random_tensor({6, 5}, rng));
    const Tensor w = random_tensor({6, 5}, rng);
    run("leaky_relu_relu",
        [&](Tape& t) {
          Var x = t.parameter(a);
          return ad::add(t, readout(t, ad::leaky_relu(t, x, model::kLeakySlope), w), readout(t, ad::relu(t, x), w));
        },
        ps.trainable());
  }
  {
    ParameterSet ps;
    Parameter& s = ps.add("s", random_tensor({8, 1}, rng, -2.0, 2.0));
    run("hinge",
        [&](Tape& t) {
          Var x = t.parameter(s);
          return ad::add(t, ad::mean(t, ad::hinge(t, x, ad::HingeSide::real)),
                         ad::mean(t, ad::hinge(t, x, ad::HingeSide::fake)));
        },
        ps.trainable());
  }
  {
    ParameterSet ps;
    Parameter& a = ps.add("a", random_tensor({4, 3}, rng));
    Parameter& b = ps.add("b", random_tensor({4, 2}, rng));
    Parameter& table = ps.add("table", random_tensor({3, 5}, rng));
    const std::vector<std::size_t> idx{2, 0, 2, 1};
    const Tensor w = random_tensor({8, 2}, rng);
    run("concat_slice_gather",
        [&](Tape& t) {
          Var ab = ad::concat(t, t.parameter(a), t.parameter(b));            // 4 x 5
          Var g = ad::gather_rows(t, t.parameter(table), idx);               // 4 x 5
          Var rows = ad::concat_rows(t, ab, g);                              // 8 x 5
          Var mid = ad::slice_cols(t, rows, 1, 3);                           // 8 x 2
          return ad::add(t, readout(t, mid, w), ad::sum(t, ad::slice_rows(t, rows, 5, 7)));
        },
        ps.trainable());
  }
  {
    ParameterSet ps;
    Parameter& x = ps.add("x", random_tensor({7, 4}, rng, -2.0, 2.0));
    Parameter& gamma = ps.add("gamma", random_tensor({4}, rng, 0.5, 1.5));
    Parameter& beta = ps.add("beta", random_tensor({4}, rng));
    const Tensor w = random_tensor({7, 4}, rng);
    run("batchnorm_shared",
        [&](Tape& t) {
          return readout(t, ad::batchnorm_cond(t, t.parameter(x), t.parameter(gamma), t.parameter(beta),
                                               ad::BnMode::batch_eval, nullptr),
                         w);
        },
        ps.trainable());
  }
  {
    ParameterSet ps;
    Parameter& x = ps.add("x", random_tensor({6, 3}, rng, -2.0, 2.0));
    Parameter& gamma = ps.add("gamma", random_tensor({6, 3}, rng, 0.5, 1.5));
    Parameter& beta = ps.add("beta", random_tensor({6, 3}, rng));
    const Tensor w = random_tensor({6, 3}, rng);
    run("batchnorm_per_example",
        [&](Tape& t) {
          return readout(t, ad::batchnorm_cond(t, t.parameter(x), t.parameter(gamma), t.parameter(beta),
                                               ad::BnMode::batch_eval, nullptr),
                         w);
        },
        ps.trainable());
  }
  {
    ParameterSet ps;
    Parameter& logits = ps.add("logits", random_tensor({6, 5}, rng, -3.0, 3.0));
    const auto y = random_labels(6, 5, rng);
    run("softmax_cross_entropy", [&](Tape& t) { return ad::softmax_cross_entropy(t, t.parameter(logits), y); },
        ps.trainable());
  }

  // training losses
  const auto split = data::SplitSpec::leave_one_out(0);
  const auto attributes = data::AttributeMatrix::default_matrix();
  const Tensor seen_rows = train::seen_attribute_rows(split, attributes);
  const int num_seen = static_cast<int>(split.seen_classes.size());
  const std::uint64_t s = options.seed;

  train::Stage1Model stage1(s + 11);
  {
    const std::size_t B = 8;
    const Tensor images = random_tensor({B, model::kInputDim}, rng, 0.0, 1.0);
    const Tensor rotated = random_tensor({B, model::kInputDim}, rng, 0.0, 1.0);
    const auto y = random_labels(B, num_seen, rng);
    const auto k = random_labels(B, static_cast<int>(model::kRotations), rng);
    std::vector<Parameter*> ps;
    for (auto* set : stage1.sets()) append(ps, set->trainable());
    run("L_AGG",
        [&](Tape& t) {
          return train::stage1_step_loss(t, stage1, images, rotated, y, k, seen_rows, 1.0, ad::BnMode::batch_eval)
              .total;
        },
        ps);
  }

  train::GanModel gan(false, s + 23);
  {
    const std::size_t B = 8;
    train::GanBatch batch;
    batch.real = random_tensor({B, model::kFeatureDim}, rng);
    std::uniform_int_distribution<std::size_t> cls(0, seen_rows.rows() - 1), dom(0, model::kNumSources - 1);
    for (std::size_t i = 0; i < B; ++i) {
      batch.class_rows.push_back(cls(rng));
      batch.domain_rows.push_back(dom(rng));
    }
    std::normal_distribution<double> n01;
    Tensor z({B, model::kNoiseDim});
    for (std::size_t i = 0; i < z.numel(); ++i) z[i] = n01(rng);

    // The discriminator's running statistics feed L_G; give them realistic values.
    {
      Tape t;
      train::discriminator_step_loss(t, gan, seen_rows, batch, z);
    }
    run("L_D", [&](Tape& t) { return train::discriminator_step_loss(t, gan, seen_rows, batch, z).total; },
        gan.discriminator_params());
    run("L_G",
        [&](Tape& t) { return train::generator_step_loss(t, gan, stage1.projector, seen_rows, batch, z, 0.1).total; },
        gan.generator_params());
  }

  {
    model::Classifier classifier(4, s + 37);
    const Tensor x = random_tensor({10, model::kFeatureDim}, rng);
    const auto y = random_labels(10, 4, rng);
    run("L_CLS",
        [&](Tape& t) {
          return ad::softmax_cross_entropy(t, classifier.forward(t, t.constant(x), model::Grad::on), y);
        },
        classifier.params().trainable());
  }
  return cases;
}

bool all_passed(const std::vector<GradCheckCase>& cases) {
  for (const auto& c : cases) {
    if (!c.report.passed) return false;
  }
  return !cases.empty();
}

}  // namespace cocoa::eval
