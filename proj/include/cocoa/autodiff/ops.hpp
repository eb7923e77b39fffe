#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "cocoa/autodiff/tape.hpp"
#include "cocoa/autodiff/tensor.hpp"

namespace cocoa::ad {

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

enum class BnMode {
  train,         // batch statistics, running statistics updated
  batch_eval,    // batch statistics, running statistics untouched
  running_eval,  // running statistics
};

// Views into the running mean / unbiased running variance of one BN layer.
struct RunningStats {
  Tensor* mean = nullptr;
  Tensor* var = nullptr;
  double momentum = kBatchNormMomentum;
};

enum class HingeSide {
  real,  // max(0, 1 - s)
  fake,  // max(0, 1 + s)
};

// Plain tensor helpers (not recorded).
Tensor transpose(const Tensor& m);
Tensor matmul(const Tensor& a, const Tensor& b);

// Linear algebra.
Var matmul(Tape& t, Var a, Var b);
Var add_row(Tape& t, Var x, Var bias);  // x [B x n] + bias [n] broadcast over rows
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);  // elementwise, equal shapes
Var scale(Tape& t, Var x, double s);
Var add_scalar(Tape& t, Var x, double s);
Var sum(Tape& t, Var x);
Var mean(Tape& t, Var x);
Var rowwise_dot(Tape& t, Var a, Var b);  // [B x n], [B x n] -> [B x 1]

// Structure.
Var concat(Tape& t, Var a, Var b);  // columnwise [m x p], [m x q] -> [m x (p+q)]
Var concat_rows(Tape& t, Var a, Var b);
Var slice_cols(Tape& t, Var x, std::size_t begin, std::size_t end);
Var slice_rows(Tape& t, Var x, std::size_t begin, std::size_t end);
Var gather_rows(Tape& t, Var table, std::span<const std::size_t> indices);

// Nonlinearities.
Var leaky_relu(Tape& t, Var x, double slope);
Var relu(Tape& t, Var x);
Var hinge(Tape& t, Var scores, HingeSide side);  // elementwise margin term

// Batch normalization. normalize() yields the pre-affine activations;
// batchnorm_cond() applies gamma/beta, which may be [h] (shared) or
// [B x h] (one affine pair per example).
Var normalize(Tape& t, Var x, BnMode mode, RunningStats* stats, double eps = kBatchNormEps);
Var affine(Tape& t, Var xhat, Var gamma, Var beta);
Var batchnorm_cond(Tape& t, Var x, Var gamma, Var beta, BnMode mode, RunningStats* stats,
                   double eps = kBatchNormEps);

// Mean over the batch of -log softmax(logits)[label].
Var softmax_cross_entropy(Tape& t, Var logits, std::span<const int> labels);
std::vector<double> softmax_row(std::span<const double> logits);

}  // namespace cocoa::ad
