#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "cocoa/autodiff/grad_check.hpp"
#include "cocoa/autodiff/ops.hpp"
#include "cocoa/errors.hpp"
#include "doctest.h"

using namespace cocoa;
using namespace cocoa::ad;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (auto& v : t.storage()) v = u(rng);
  return t;
}

// Scalarizes an op output with a fixed random weighting so every output
// coordinate contributes a distinct amount to the loss.
Var weighted_sum(Tape& t, Var y, const Tensor& weights) {
  return sum(t, mul(t, y, t.constant(weights)));
}

}  // namespace

TEST_CASE("matmul values and shape errors") {
  Tape t;
  auto c = matmul(t, t.constant(Tensor::matrix({{1, 0}, {0, 1}})), t.constant(Tensor::matrix({{3, 4}, {5, 6}})));
  CHECK(t.value(c) == Tensor::matrix({{3, 4}, {5, 6}}));

  auto d = matmul(t, t.constant(Tensor::matrix({{1, 2}})), t.constant(Tensor::matrix({{3}, {4}})));
  CHECK(t.value(d)[0] == 11.0);

  try {
    matmul(t, t.constant(Tensor({2, 3})), t.constant(Tensor({2, 3})));
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("and [2x3]") != std::string::npos);
  }
}

TEST_CASE("matmul gradient matches finite differences") {
  std::mt19937_64 rng(11);
  ParameterSet ps;
  auto& a = ps.add("a", random_tensor({3, 4}, rng));
  auto& b = ps.add("b", random_tensor({4, 2}, rng));
  const Tensor w = random_tensor({3, 2}, rng);
  auto params = ps.trainable();
  auto report = grad_check([&](Tape& t) { return weighted_sum(t, matmul(t, t.parameter(a), t.parameter(b)), w); },
                           params, {.step = 1e-4, .tolerance = 1e-6});
  CHECK_MESSAGE(report.passed, report.summary());
}

TEST_CASE("leaky_relu values") {
  Tape t;
  auto y = leaky_relu(t, t.constant(Tensor::vector({2, -2})), 0.2);
  CHECK(t.value(y)[0] == 2.0);
  CHECK(t.value(y)[1] == doctest::Approx(-0.4).epsilon(1e-15));
  for (double slope : {0.01, 0.2, 0.9}) {
    CHECK(t.value(leaky_relu(t, t.constant(Tensor::vector({0.0})), slope))[0] == 0.0);
  }
  CHECK_THROWS_AS(leaky_relu(t, t.constant(Tensor::vector({1.0})), 1.5), ValidationError);
}

TEST_CASE("concat values, shape law and errors") {
  Tape t;
  auto c = concat(t, t.constant(Tensor::matrix({{1}})), t.constant(Tensor::matrix({{2}})));
  CHECK(t.value(c) == Tensor::matrix({{1, 2}}));
  auto ctx = concat(t, t.constant(Tensor({4, 6})), t.constant(Tensor({4, 8})));
  CHECK(t.value(ctx).shape() == Shape{4, 14});
  CHECK_THROWS_AS(concat(t, t.constant(Tensor({3, 6})), t.constant(Tensor({4, 8}))), DimensionError);
}

TEST_CASE("batchnorm_cond identity and collapse cases") {
  std::mt19937_64 rng(3);
  // Build a batch with exactly zero mean and unit (biased) variance per feature.
  Tensor x = random_tensor({8, 4}, rng);
  for (std::size_t j = 0; j < 4; ++j) {
    double mu = 0, var = 0;
    for (std::size_t i = 0; i < 8; ++i) mu += x.at(i, j);
    mu /= 8;
    for (std::size_t i = 0; i < 8; ++i) var += (x.at(i, j) - mu) * (x.at(i, j) - mu);
    var /= 8;
    for (std::size_t i = 0; i < 8; ++i) x.at(i, j) = (x.at(i, j) - mu) / std::sqrt(var);
  }
  Tape t;
  auto y = batchnorm_cond(t, t.constant(x), t.constant(Tensor({4}, 1.0)), t.constant(Tensor({4}, 0.0)),
                          BnMode::batch_eval, nullptr);
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(std::abs(t.value(y)[i] - x[i]) < 1e-5);

  auto z = batchnorm_cond(t, t.constant(x), t.constant(Tensor({4}, 0.0)), t.constant(Tensor({4}, 5.0)),
                          BnMode::batch_eval, nullptr);
  for (double v : t.value(z).data()) CHECK(v == 5.0);
}

TEST_CASE("batchnorm normalized statistics and gradient") {
  std::mt19937_64 rng(5);
  ParameterSet ps;
  auto& x = ps.add("x", random_tensor({8, 4}, rng, -3.0, 2.0));
  auto& gamma = ps.add("gamma", random_tensor({4}, rng, 0.5, 1.5));
  auto& beta = ps.add("beta", random_tensor({4}, rng));
  {
    Tape t;
    auto xhat = normalize(t, t.parameter(x), BnMode::batch_eval, nullptr);
    const Tensor& v = t.value(xhat);
    for (std::size_t j = 0; j < 4; ++j) {
      double mu = 0, var = 0;
      for (std::size_t i = 0; i < 8; ++i) mu += v.at(i, j);
      mu /= 8;
      for (std::size_t i = 0; i < 8; ++i) var += (v.at(i, j) - mu) * (v.at(i, j) - mu);
      var /= 8;
      CHECK(std::abs(mu) < 1e-9);
      CHECK(std::abs(var - 1.0) < 1e-4);
    }
  }
  const Tensor w = random_tensor({8, 4}, rng);
  auto params = ps.trainable();
  auto report = grad_check(
      [&](Tape& t) {
        return weighted_sum(
            t,
            batchnorm_cond(t, t.parameter(x), t.parameter(gamma), t.parameter(beta), BnMode::batch_eval, nullptr),
            w);
      },
      params, {.tolerance = 1e-5});
  CHECK_MESSAGE(report.passed, report.summary());
}

TEST_CASE("batchnorm per-example affine gradient") {
  std::mt19937_64 rng(9);
  ParameterSet ps;
  auto& x = ps.add("x", random_tensor({6, 3}, rng, -2.0, 2.0));
  auto& gamma = ps.add("gamma", random_tensor({6, 3}, rng, 0.5, 1.5));
  auto& beta = ps.add("beta", random_tensor({6, 3}, rng));
  const Tensor w = random_tensor({6, 3}, rng);
  auto params = ps.trainable();
  auto report = grad_check(
      [&](Tape& t) {
        return weighted_sum(
            t, batchnorm_cond(t, t.parameter(x), t.parameter(gamma), t.parameter(beta), BnMode::batch_eval, nullptr),
            w);
      },
      params, {.tolerance = 1e-5});
  CHECK_MESSAGE(report.passed, report.summary());
}

TEST_CASE("batchnorm running statistics and errors") {
  Tensor rm({2}, 0.0), rv({2}, 1.0);
  RunningStats stats{&rm, &rv, 0.1};
  Tape t;
  // Feature 0: values 1,3 -> mean 2, biased var 1, unbiased var 2.
  auto x = t.constant(Tensor::matrix({{1, 0}, {3, 0}}));
  normalize(t, x, BnMode::train, &stats);
  CHECK(rm[0] == doctest::Approx(0.2));
  CHECK(rv[0] == doctest::Approx(0.9 + 0.1 * 2.0));
  CHECK(rv[1] == doctest::Approx(0.9));

  const Tensor rm_before = rm;
  normalize(t, x, BnMode::batch_eval, &stats);
  CHECK(rm == rm_before);

  auto y = normalize(t, t.constant(Tensor::matrix({{2, 0}})), BnMode::running_eval, &stats);
  CHECK(t.value(y)[0] == doctest::Approx((2.0 - 0.2) / std::sqrt(1.1 + kBatchNormEps)));

  CHECK_THROWS_AS(normalize(t, t.constant(Tensor::matrix({{1, 2}})), BnMode::train, &stats), DegenerateBatchError);
  CHECK_THROWS_AS(normalize(t, t.constant(Tensor::matrix({{1, 2}})), BnMode::batch_eval, nullptr),
                  DegenerateBatchError);
  const double inf = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(normalize(t, t.constant(Tensor::matrix({{inf, 0}, {1, 0}})), BnMode::batch_eval, nullptr),
                  NumericError);
}

TEST_CASE("softmax cross entropy") {
  Tape t;
  for (std::size_t c : {2u, 4u, 8u, 13u}) {
    std::vector<int> labels{0, static_cast<int>(c - 1)};
    auto l = softmax_cross_entropy(t, t.constant(Tensor({2, c}, 0.37)), labels);
    CHECK(std::abs(t.value(l)[0] - std::log(static_cast<double>(c))) < 1e-12);
  }
  std::vector<int> zero{0};
  auto sat = softmax_cross_entropy(t, t.constant(Tensor::matrix({{10, -10}})), zero);
  CHECK(t.value(sat)[0] < 1e-4);
  CHECK(t.value(sat)[0] >= 0.0);

  std::vector<int> bad{4};
  CHECK_THROWS_AS(softmax_cross_entropy(t, t.constant(Tensor({1, 4})), bad), LabelError);
}

TEST_CASE("softmax cross entropy gradient is softmax minus one-hot") {
  std::mt19937_64 rng(21);
  ParameterSet ps;
  auto& logits = ps.add("logits", random_tensor({5, 4}, rng, -3, 3));
  std::vector<int> labels{0, 3, 1, 1, 2};
  {
    Tape t;
    auto loss = softmax_cross_entropy(t, t.parameter(logits), labels);
    t.backward(loss);
    for (std::size_t i = 0; i < 5; ++i) {
      auto p = softmax_row(logits.value.row(i));
      for (std::size_t j = 0; j < 4; ++j) {
        const double expected = (p[j] - (static_cast<int>(j) == labels[i] ? 1.0 : 0.0)) / 5.0;
        CHECK(logits.grad.at(i, j) == doctest::Approx(expected).epsilon(1e-12));
      }
    }
  }
  auto params = ps.trainable();
  auto report = grad_check([&](Tape& t) { return softmax_cross_entropy(t, t.parameter(logits), labels); }, params,
                           {.tolerance = 1e-6});
  CHECK_MESSAGE(report.passed, report.summary());
}

TEST_CASE("hinge terms") {
  Tape t;
  auto real = hinge(t, t.constant(Tensor::vector({2.0, 0.0})), HingeSide::real);
  CHECK(t.value(real)[0] == 0.0);
  CHECK(t.value(real)[1] == 1.0);
  auto fake = hinge(t, t.constant(Tensor::vector({-3.0, 0.0})), HingeSide::fake);
  CHECK(t.value(fake)[0] == 0.0);
  CHECK(t.value(fake)[1] == 1.0);

  // Subgradient at the kink is zero: real term kinks at s=1, fake term at s=-1.
  ParameterSet ps;
  auto& r = ps.add("r", Tensor::vector({1.0}));
  auto& f = ps.add("f", Tensor::vector({-1.0}));
  Tape t2;
  auto loss = add(t2, sum(t2, hinge(t2, t2.parameter(r), HingeSide::real)),
                  sum(t2, hinge(t2, t2.parameter(f), HingeSide::fake)));
  t2.backward(loss);
  CHECK(r.grad[0] == 0.0);
  CHECK(f.grad[0] == 0.0);
}

TEST_CASE("grad_check on a linear function is exact") {
  ParameterSet ps;
  auto& x = ps.add("x", Tensor::vector({0.3, -1.2, 2.5}));
  const Tensor w = Tensor::vector({1.5, -0.5, 2.0});
  auto params = ps.trainable();
  auto report = grad_check([&](Tape& t) { return weighted_sum(t, t.parameter(x), w); }, params,
                           {.tolerance = 1e-10});
  CHECK_MESSAGE(report.passed, report.summary());
  CHECK(report.max_relative_error < 1e-10);
}

TEST_CASE("grad_check detects a corrupted backward and names the parameter") {
  ParameterSet ps;
  auto& good = ps.add("model.good", Tensor::vector({0.5, -0.7}));
  auto& bad = ps.add("model.flipped", Tensor::vector({1.1, 0.4}));
  auto flipped_square = [](Tape& t, Var x) {
    Tensor y = t.value(x);
    for (auto& v : y.storage()) v *= v;
    const Var out{static_cast<std::uint32_t>(t.size())};
    return t.record(std::move(y), true, [x, out](Tape& tp) {
      for (std::size_t i = 0; i < tp.value(x).numel(); ++i) {
        tp.grad(x)[i] -= 2.0 * tp.value(x)[i] * tp.grad(out)[i];  // wrong sign
      }
    });
  };
  auto params = ps.trainable();
  auto report = grad_check(
      [&](Tape& t) {
        auto g = mul(t, t.parameter(good), t.parameter(good));
        return add(t, sum(t, g), sum(t, flipped_square(t, t.parameter(bad))));
      },
      params);
  CHECK_FALSE(report.passed);
  REQUIRE_FALSE(report.failures.empty());
  for (const auto& f : report.failures) CHECK(f.parameter == "model.flipped");
  CHECK(report.summary().find("model.flipped") != std::string::npos);
}

TEST_CASE("grad_check rejects bad steps and non-finite losses") {
  ParameterSet ps;
  auto& x = ps.add("x", Tensor::vector({1.0}));
  auto params = ps.trainable();
  auto fn = [&](Tape& t) { return sum(t, t.parameter(x)); };
  CHECK_THROWS_AS(grad_check(fn, params, {.step = 1e-2}), ValidationError);
  auto nan_fn = [&](Tape& t) { return scale(t, sum(t, t.parameter(x)), std::nan("")); };
  CHECK_THROWS_AS(grad_check(nan_fn, params), NumericError);
}

// Every primitive at 100 random points, h = 1e-4, relative error < 1e-5.
TEST_CASE("primitive gradients at random points") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> dim(2, 5);
  using Builder = std::function<Var(Tape&, std::vector<Var>&)>;
  struct Case {
    const char* name;
    std::function<std::vector<Shape>(int, int, int)> shapes;
    Builder build;
  };
  std::vector<int> labels;
  std::vector<std::size_t> rows;
  const std::vector<Case> cases = {
      {"matmul", [](int m, int k, int n) { return std::vector<Shape>{{(size_t)m, (size_t)k}, {(size_t)k, (size_t)n}}; },
       [](Tape& t, std::vector<Var>& v) { return matmul(t, v[0], v[1]); }},
      {"add_row", [](int m, int, int n) { return std::vector<Shape>{{(size_t)m, (size_t)n}, {(size_t)n}}; },
       [](Tape& t, std::vector<Var>& v) { return add_row(t, v[0], v[1]); }},
      {"mul", [](int m, int, int n) { return std::vector<Shape>{{(size_t)m, (size_t)n}, {(size_t)m, (size_t)n}}; },
       [](Tape& t, std::vector<Var>& v) { return mul(t, v[0], v[1]); }},
      {"sub", [](int m, int, int n) { return std::vector<Shape>{{(size_t)m, (size_t)n}, {(size_t)m, (size_t)n}}; },
       [](Tape& t, std::vector<Var>& v) { return sub(t, v[0], v[1]); }},
      {"rowwise_dot",
       [](int m, int, int n) { return std::vector<Shape>{{(size_t)m, (size_t)n}, {(size_t)m, (size_t)n}}; },
       [](Tape& t, std::vector<Var>& v) { return rowwise_dot(t, v[0], v[1]); }},
      {"concat", [](int m, int k, int n) { return std::vector<Shape>{{(size_t)m, (size_t)k}, {(size_t)m, (size_t)n}}; },
       [](Tape& t, std::vector<Var>& v) { return concat(t, v[0], v[1]); }},
      {"concat_rows",
       [](int m, int k, int n) { return std::vector<Shape>{{(size_t)m, (size_t)n}, {(size_t)k, (size_t)n}}; },
       [](Tape& t, std::vector<Var>& v) { return concat_rows(t, v[0], v[1]); }},
      {"slice_cols", [](int m, int, int n) { return std::vector<Shape>{{(size_t)m, (size_t)n + 2}}; },
       [](Tape& t, std::vector<Var>& v) { return slice_cols(t, v[0], 1, t.value(v[0]).cols() - 1); }},
      {"slice_rows", [](int m, int, int n) { return std::vector<Shape>{{(size_t)m + 2, (size_t)n}}; },
       [](Tape& t, std::vector<Var>& v) { return slice_rows(t, v[0], 1, t.value(v[0]).rows() - 1); }},
      {"gather_rows", [](int m, int, int n) { return std::vector<Shape>{{(size_t)m, (size_t)n}}; },
       [](Tape& t, std::vector<Var>& v) {
         const std::size_t r = t.value(v[0]).rows();
         std::vector<std::size_t> idx{r - 1, 0, r - 1, 1};
         return gather_rows(t, v[0], idx);
       }},
      {"leaky_relu", [](int m, int, int n) { return std::vector<Shape>{{(size_t)m, (size_t)n}}; },
       [](Tape& t, std::vector<Var>& v) { return leaky_relu(t, v[0], 0.2); }},
      {"relu", [](int m, int, int n) { return std::vector<Shape>{{(size_t)m, (size_t)n}}; },
       [](Tape& t, std::vector<Var>& v) { return relu(t, v[0]); }},
      {"hinge_real", [](int m, int, int) { return std::vector<Shape>{{(size_t)m, 1}}; },
       [](Tape& t, std::vector<Var>& v) { return hinge(t, scale(t, v[0], 2.0), HingeSide::real); }},
      {"hinge_fake", [](int m, int, int) { return std::vector<Shape>{{(size_t)m, 1}}; },
       [](Tape& t, std::vector<Var>& v) { return hinge(t, scale(t, v[0], 2.0), HingeSide::fake); }},
      {"batchnorm_cond",
       [](int m, int, int n) {
         return std::vector<Shape>{{(size_t)m + 3, (size_t)n}, {(size_t)m + 3, (size_t)n}, {(size_t)n}};
       },
       [](Tape& t, std::vector<Var>& v) {
         return batchnorm_cond(t, v[0], v[1], v[2], BnMode::batch_eval, nullptr);
       }},
      {"mean", [](int m, int, int n) { return std::vector<Shape>{{(size_t)m, (size_t)n}}; },
       [](Tape& t, std::vector<Var>& v) { return mean(t, v[0]); }},
      {"add_scalar", [](int m, int, int n) { return std::vector<Shape>{{(size_t)m, (size_t)n}}; },
       [](Tape& t, std::vector<Var>& v) { return add_scalar(t, scale(t, v[0], -1.5), 0.25); }},
  };

  for (const auto& c : cases) {
    CAPTURE(c.name);
    double worst = 0.0;
    std::size_t checked = 0;
    for (int trial = 0; trial < 100; ++trial) {
      const auto shapes = c.shapes(dim(rng), dim(rng), dim(rng));
      ParameterSet ps;
      for (std::size_t i = 0; i < shapes.size(); ++i) ps.add("in" + std::to_string(i), random_tensor(shapes[i], rng));
      Tensor w;
      {
        Tape t;
        std::vector<Var> in;
        for (auto* p : ps.trainable()) in.push_back(t.parameter(*p));
        w = random_tensor(t.value(c.build(t, in)).shape(), rng);
      }
      auto params = ps.trainable();
      auto report = grad_check(
          [&](Tape& t) {
            std::vector<Var> in;
            for (auto* p : params) in.push_back(t.parameter(*p));
            return weighted_sum(t, c.build(t, in), w);
          },
          params, {.step = 1e-4, .tolerance = 1e-5});
      worst = std::max(worst, report.max_relative_error);
      checked += report.checked;
      CHECK_MESSAGE(report.passed, report.summary());
    }
    CHECK(checked > 0);
    MESSAGE(c.name << " worst relative error " << worst);
  }

  // Cross entropy has integer labels, checked separately.
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t b = static_cast<std::size_t>(dim(rng)), k = static_cast<std::size_t>(dim(rng));
    ParameterSet ps;
    auto& logits = ps.add("logits", random_tensor({b, k}, rng, -4, 4));
    std::vector<int> lab(b);
    for (auto& l : lab) l = std::uniform_int_distribution<int>(0, static_cast<int>(k) - 1)(rng);
    auto params = ps.trainable();
    auto report = grad_check([&](Tape& t) { return softmax_cross_entropy(t, t.parameter(logits), lab); }, params,
                             {.tolerance = 1e-5});
    CHECK_MESSAGE(report.passed, report.summary());
  }
}

TEST_CASE("backward visits shared inputs once per use") {
  ParameterSet ps;
  auto& x = ps.add("x", Tensor::vector({3.0}));
  Tape t;
  auto v = t.parameter(x);
  auto y = add(t, mul(t, v, v), v);  // x^2 + x
  t.backward(y);
  CHECK(x.grad[0] == 7.0);
}
