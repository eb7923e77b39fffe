#include "cocoa/autodiff/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cocoa/errors.hpp"

namespace cocoa::ad {
namespace {

Var next_var(const Tape& t) { return Var{static_cast<std::uint32_t>(t.size())}; }

void require_matrix(const Tensor& x, const char* op) {
  if (x.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_string(x.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

// C += A * B
void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C += A * B^T   (A [m x n], B [k x n], C [m x k])
void gemm_nt_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += arow[j] * brow[j];
      c[i * k + p] += s;
    }
  }
}

// C += A^T * B   (A [m x k], B [m x n], C [k x n])
void gemm_tn_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      double* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

Tensor transpose(const Tensor& m) {
  require_matrix(m, "transpose");
  Tensor out({m.cols(), m.rows()});
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) out.at(j, i) = m.at(i, j);
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions disagree for " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()));
  }
  Tensor c({a.rows(), b.cols()}, 0.0);
  gemm_acc(a.data().data(), b.data().data(), c.data().data(), a.rows(), a.cols(), b.cols());
  return c;
}

Var matmul(Tape& t, Var a, Var b) {
  Tensor c = matmul(t.value(a), t.value(b));
  const Var out = next_var(t);
  return t.record(std::move(c), t.requires_grad(a) || t.requires_grad(b), [a, b, out](Tape& tp) {
    const Tensor& A = tp.value(a);
    const Tensor& B = tp.value(b);
    const Tensor& G = tp.grad(out);
    const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
    if (tp.requires_grad(a)) gemm_nt_acc(G.data().data(), B.data().data(), tp.grad(a).data().data(), m, n, k);
    if (tp.requires_grad(b)) gemm_tn_acc(A.data().data(), G.data().data(), tp.grad(b).data().data(), m, k, n);
  });
}

Var add_row(Tape& t, Var x, Var bias) {
  const Tensor& X = t.value(x);
  const Tensor& b = t.value(bias);
  require_matrix(X, "add_row");
  if (b.numel() != X.cols()) {
    throw DimensionError("add_row: bias " + shape_string(b.shape()) + " does not fit " + shape_string(X.shape()));
  }
  Tensor y = X;
  for (std::size_t i = 0; i < y.rows(); ++i) {
    auto r = y.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += b[j];
  }
  const Var out = next_var(t);
  return t.record(std::move(y), t.requires_grad(x) || t.requires_grad(bias), [x, bias, out](Tape& tp) {
    const Tensor& G = tp.grad(out);
    if (tp.requires_grad(x)) {
      auto& gx = tp.grad(x);
      for (std::size_t i = 0; i < G.numel(); ++i) gx[i] += G[i];
    }
    if (tp.requires_grad(bias)) {
      auto& gb = tp.grad(bias);
      for (std::size_t i = 0; i < G.rows(); ++i) {
        auto r = G.row(i);
        for (std::size_t j = 0; j < r.size(); ++j) gb[j] += r[j];
      }
    }
  });
}

Var add(Tape& t, Var a, Var b) {
  require_same_shape(t.value(a), t.value(b), "add");
  Tensor y = t.value(a);
  const Tensor& B = t.value(b);
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] += B[i];
  const Var out = next_var(t);
  return t.record(std::move(y), t.requires_grad(a) || t.requires_grad(b), [a, b, out](Tape& tp) {
    const Tensor& G = tp.grad(out);
    for (Var v : {a, b}) {
      if (!tp.requires_grad(v)) continue;
      auto& g = tp.grad(v);
      for (std::size_t i = 0; i < G.numel(); ++i) g[i] += G[i];
    }
  });
}

Var sub(Tape& t, Var a, Var b) {
  require_same_shape(t.value(a), t.value(b), "sub");
  Tensor y = t.value(a);
  const Tensor& B = t.value(b);
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] -= B[i];
  const Var out = next_var(t);
  return t.record(std::move(y), t.requires_grad(a) || t.requires_grad(b), [a, b, out](Tape& tp) {
    const Tensor& G = tp.grad(out);
    if (tp.requires_grad(a)) {
      auto& g = tp.grad(a);
      for (std::size_t i = 0; i < G.numel(); ++i) g[i] += G[i];
    }
    if (tp.requires_grad(b)) {
      auto& g = tp.grad(b);
      for (std::size_t i = 0; i < G.numel(); ++i) g[i] -= G[i];
    }
  });
}

Var mul(Tape& t, Var a, Var b) {
  require_same_shape(t.value(a), t.value(b), "mul");
  Tensor y = t.value(a);
  const Tensor& B = t.value(b);
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] *= B[i];
  const Var out = next_var(t);
  return t.record(std::move(y), t.requires_grad(a) || t.requires_grad(b), [a, b, out](Tape& tp) {
    const Tensor& G = tp.grad(out);
    if (tp.requires_grad(a)) {
      const Tensor& B = tp.value(b);
      auto& g = tp.grad(a);
      for (std::size_t i = 0; i < G.numel(); ++i) g[i] += G[i] * B[i];
    }
    if (tp.requires_grad(b)) {
      const Tensor& A = tp.value(a);
      auto& g = tp.grad(b);
      for (std::size_t i = 0; i < G.numel(); ++i) g[i] += G[i] * A[i];
    }
  });
}

Var scale(Tape& t, Var x, double s) {
  Tensor y = t.value(x);
  for (auto& v : y.storage()) v *= s;
  const Var out = next_var(t);
  return t.record(std::move(y), t.requires_grad(x), [x, s, out](Tape& tp) {
    const Tensor& G = tp.grad(out);
    auto& g = tp.grad(x);
    for (std::size_t i = 0; i < G.numel(); ++i) g[i] += s * G[i];
  });
}

Var add_scalar(Tape& t, Var x, double s) {
  Tensor y = t.value(x);
  for (auto& v : y.storage()) v += s;
  const Var out = next_var(t);
  return t.record(std::move(y), t.requires_grad(x), [x, out](Tape& tp) {
    const Tensor& G = tp.grad(out);
    auto& g = tp.grad(x);
    for (std::size_t i = 0; i < G.numel(); ++i) g[i] += G[i];
  });
}

Var sum(Tape& t, Var x) {
  double s = 0.0;
  for (double v : t.value(x).data()) s += v;
  const Var out = next_var(t);
  return t.record(Tensor({1}, s), t.requires_grad(x), [x, out](Tape& tp) {
    const double g0 = tp.grad(out)[0];
    for (auto& g : tp.grad(x).storage()) g += g0;
  });
}

Var mean(Tape& t, Var x) {
  const double n = static_cast<double>(t.value(x).numel());
  double s = 0.0;
  for (double v : t.value(x).data()) s += v;
  const Var out = next_var(t);
  return t.record(Tensor({1}, s / n), t.requires_grad(x), [x, n, out](Tape& tp) {
    const double g0 = tp.grad(out)[0] / n;
    for (auto& g : tp.grad(x).storage()) g += g0;
  });
}

Var rowwise_dot(Tape& t, Var a, Var b) {
  const Tensor& A = t.value(a);
  const Tensor& B = t.value(b);
  require_matrix(A, "rowwise_dot");
  require_same_shape(A, B, "rowwise_dot");
  Tensor y({A.rows(), 1}, 0.0);
  for (std::size_t i = 0; i < A.rows(); ++i) {
    auto ra = A.row(i);
    auto rb = B.row(i);
    double s = 0.0;
    for (std::size_t j = 0; j < ra.size(); ++j) s += ra[j] * rb[j];
    y[i] = s;
  }
  const Var out = next_var(t);
  return t.record(std::move(y), t.requires_grad(a) || t.requires_grad(b), [a, b, out](Tape& tp) {
    const Tensor& G = tp.grad(out);
    const Tensor& A = tp.value(a);
    const Tensor& B = tp.value(b);
    const std::size_t n = A.cols();
    if (tp.requires_grad(a)) {
      auto& ga = tp.grad(a);
      for (std::size_t i = 0; i < A.rows(); ++i)
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += G[i] * B[i * n + j];
    }
    if (tp.requires_grad(b)) {
      auto& gb = tp.grad(b);
      for (std::size_t i = 0; i < A.rows(); ++i)
        for (std::size_t j = 0; j < n; ++j) gb[i * n + j] += G[i] * A[i * n + j];
    }
  });
}

Var concat(Tape& t, Var a, Var b) {
  const Tensor& A = t.value(a);
  const Tensor& B = t.value(b);
  require_matrix(A, "concat");
  require_matrix(B, "concat");
  if (A.rows() != B.rows()) {
    throw DimensionError("concat: leading dimensions differ for " + shape_string(A.shape()) + " and " +
                         shape_string(B.shape()));
  }
  const std::size_t p = A.cols(), q = B.cols();
  Tensor y({A.rows(), p + q});
  for (std::size_t i = 0; i < A.rows(); ++i) {
    auto r = y.row(i);
    std::copy(A.row(i).begin(), A.row(i).end(), r.begin());
    std::copy(B.row(i).begin(), B.row(i).end(), r.begin() + static_cast<std::ptrdiff_t>(p));
  }
  const Var out = next_var(t);
  return t.record(std::move(y), t.requires_grad(a) || t.requires_grad(b), [a, b, p, q, out](Tape& tp) {
    const Tensor& G = tp.grad(out);
    for (std::size_t i = 0; i < G.rows(); ++i) {
      auto r = G.row(i);
      if (tp.requires_grad(a)) {
        auto ga = tp.grad(a).row(i);
        for (std::size_t j = 0; j < p; ++j) ga[j] += r[j];
      }
      if (tp.requires_grad(b)) {
        auto gb = tp.grad(b).row(i);
        for (std::size_t j = 0; j < q; ++j) gb[j] += r[p + j];
      }
    }
  });
}

Var concat_rows(Tape& t, Var a, Var b) {
  const Tensor& A = t.value(a);
  const Tensor& B = t.value(b);
  require_matrix(A, "concat_rows");
  require_matrix(B, "concat_rows");
  if (A.cols() != B.cols()) {
    throw DimensionError("concat_rows: widths differ for " + shape_string(A.shape()) + " and " +
                         shape_string(B.shape()));
  }
  std::vector<double> data(A.storage());
  data.insert(data.end(), B.storage().begin(), B.storage().end());
  const std::size_t split = A.numel();
  const Var out = next_var(t);
  return t.record(Tensor({A.rows() + B.rows(), A.cols()}, std::move(data)),
                  t.requires_grad(a) || t.requires_grad(b), [a, b, split, out](Tape& tp) {
                    const Tensor& G = tp.grad(out);
                    if (tp.requires_grad(a)) {
                      auto& ga = tp.grad(a);
                      for (std::size_t i = 0; i < split; ++i) ga[i] += G[i];
                    }
                    if (tp.requires_grad(b)) {
                      auto& gb = tp.grad(b);
                      for (std::size_t i = split; i < G.numel(); ++i) gb[i - split] += G[i];
                    }
                  });
}

Var slice_cols(Tape& t, Var x, std::size_t begin, std::size_t end) {
  const Tensor& X = t.value(x);
  require_matrix(X, "slice_cols");
  if (begin >= end || end > X.cols()) {
    throw DimensionError("slice_cols: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") invalid for " + shape_string(X.shape()));
  }
  const std::size_t w = end - begin;
  Tensor y({X.rows(), w});
  for (std::size_t i = 0; i < X.rows(); ++i) {
    auto src = X.row(i);
    std::copy(src.begin() + static_cast<std::ptrdiff_t>(begin), src.begin() + static_cast<std::ptrdiff_t>(end),
              y.row(i).begin());
  }
  const Var out = next_var(t);
  return t.record(std::move(y), t.requires_grad(x), [x, begin, w, out](Tape& tp) {
    const Tensor& G = tp.grad(out);
    auto& gx = tp.grad(x);
    for (std::size_t i = 0; i < G.rows(); ++i) {
      auto dst = gx.row(i);
      auto src = G.row(i);
      for (std::size_t j = 0; j < w; ++j) dst[begin + j] += src[j];
    }
  });
}

Var slice_rows(Tape& t, Var x, std::size_t begin, std::size_t end) {
  const Tensor& X = t.value(x);
  require_matrix(X, "slice_rows");
  if (begin >= end || end > X.rows()) {
    throw DimensionError("slice_rows: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") invalid for " + shape_string(X.shape()));
  }
  const std::size_t n = X.cols();
  std::vector<double> data(X.storage().begin() + static_cast<std::ptrdiff_t>(begin * n),
                           X.storage().begin() + static_cast<std::ptrdiff_t>(end * n));
  const Var out = next_var(t);
  return t.record(Tensor({end - begin, n}, std::move(data)), t.requires_grad(x), [x, begin, n, out](Tape& tp) {
    const Tensor& G = tp.grad(out);
    auto& gx = tp.grad(x);
    for (std::size_t i = 0; i < G.numel(); ++i) gx[begin * n + i] += G[i];
  });
}

Var gather_rows(Tape& t, Var table, std::span<const std::size_t> indices) {
  const Tensor& T = t.value(table);
  require_matrix(T, "gather_rows");
  if (indices.empty()) throw DimensionError("gather_rows: empty index list");
  const std::size_t n = T.cols();
  Tensor y({indices.size(), n});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= T.rows()) {
      throw DimensionError("gather_rows: index " + std::to_string(indices[i]) + " out of range for " +
                           shape_string(T.shape()));
    }
    std::copy(T.row(indices[i]).begin(), T.row(indices[i]).end(), y.row(i).begin());
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  const Var out = next_var(t);
  return t.record(std::move(y), t.requires_grad(table), [table, idx = std::move(idx), n, out](Tape& tp) {
    const Tensor& G = tp.grad(out);
    auto& gt = tp.grad(table);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      auto src = G.row(i);
      auto dst = gt.row(idx[i]);
      for (std::size_t j = 0; j < n; ++j) dst[j] += src[j];
    }
  });
}

Var leaky_relu(Tape& t, Var x, double slope) {
  if (!(slope > 0.0 && slope < 1.0)) throw ValidationError("leaky_relu: slope must lie in (0,1)");
  Tensor y = t.value(x);
  const bool track = t.track_kinks();
  for (auto& v : y.storage()) {
    if (track) t.note_kink(v);
    if (v < 0.0) v *= slope;
  }
  const Var out = next_var(t);
  return t.record(std::move(y), t.requires_grad(x), [x, slope, out](Tape& tp) {
    const Tensor& X = tp.value(x);
    const Tensor& G = tp.grad(out);
    auto& gx = tp.grad(x);
    for (std::size_t i = 0; i < G.numel(); ++i) gx[i] += X[i] < 0.0 ? slope * G[i] : G[i];
  });
}

Var relu(Tape& t, Var x) {
  Tensor y = t.value(x);
  const bool track = t.track_kinks();
  for (auto& v : y.storage()) {
    if (track) t.note_kink(v);
    if (v < 0.0) v = 0.0;
  }
  const Var out = next_var(t);
  return t.record(std::move(y), t.requires_grad(x), [x, out](Tape& tp) {
    const Tensor& X = tp.value(x);
    const Tensor& G = tp.grad(out);
    auto& gx = tp.grad(x);
    // Subgradient at exactly 0 is 0.
    for (std::size_t i = 0; i < G.numel(); ++i) gx[i] += X[i] > 0.0 ? G[i] : 0.0;
  });
}

Var hinge(Tape& t, Var scores, HingeSide side) {
  const double sign = side == HingeSide::real ? -1.0 : 1.0;
  Tensor y = t.value(scores);
  const bool track = t.track_kinks();
  for (auto& v : y.storage()) {
    const double m = 1.0 + sign * v;
    if (track) t.note_kink(m);
    v = m > 0.0 ? m : 0.0;
  }
  const Var out = next_var(t);
  return t.record(std::move(y), t.requires_grad(scores), [scores, sign, out](Tape& tp) {
    const Tensor& S = tp.value(scores);
    const Tensor& G = tp.grad(out);
    auto& gs = tp.grad(scores);
    for (std::size_t i = 0; i < G.numel(); ++i) {
      if (1.0 + sign * S[i] > 0.0) gs[i] += sign * G[i];
    }
  });
}

Var normalize(Tape& t, Var x, BnMode mode, RunningStats* stats, double eps) {
  const Tensor& X = t.value(x);
  require_matrix(X, "batchnorm");
  if (!(eps > 0.0)) throw ValidationError("batchnorm: eps must be positive");
  const std::size_t batch = X.rows(), h = X.cols();
  std::vector<double> mu(h, 0.0), inv_std(h, 0.0);

  if (mode == BnMode::running_eval) {
    if (!stats || !stats->mean || !stats->var) throw ValidationError("batchnorm: running-eval needs running stats");
    if (stats->mean->numel() != h || stats->var->numel() != h) {
      throw DimensionError("batchnorm: running stats do not match width " + std::to_string(h));
    }
    for (std::size_t j = 0; j < h; ++j) {
      mu[j] = (*stats->mean)[j];
      inv_std[j] = 1.0 / std::sqrt((*stats->var)[j] + eps);
    }
  } else {
    if (batch < 2) {
      throw DegenerateBatchError("batchnorm: batch statistics need at least 2 rows, got " + std::to_string(batch));
    }
    std::vector<double> var(h, 0.0);
    for (std::size_t i = 0; i < batch; ++i) {
      auto r = X.row(i);
      for (std::size_t j = 0; j < h; ++j) mu[j] += r[j];
    }
    for (auto& m : mu) m /= static_cast<double>(batch);
    for (std::size_t i = 0; i < batch; ++i) {
      auto r = X.row(i);
      for (std::size_t j = 0; j < h; ++j) {
        const double d = r[j] - mu[j];
        var[j] += d * d;
      }
    }
    for (std::size_t j = 0; j < h; ++j) {
      var[j] /= static_cast<double>(batch);
      if (!std::isfinite(var[j])) throw NumericError("batchnorm: non-finite variance in feature " + std::to_string(j));
      inv_std[j] = 1.0 / std::sqrt(var[j] + eps);
    }
    if (mode == BnMode::train && stats && stats->mean && stats->var) {
      const double m = stats->momentum;
      const double unbias = static_cast<double>(batch) / static_cast<double>(batch - 1);
      for (std::size_t j = 0; j < h; ++j) {
        (*stats->mean)[j] = (1.0 - m) * (*stats->mean)[j] + m * mu[j];
        (*stats->var)[j] = (1.0 - m) * (*stats->var)[j] + m * var[j] * unbias;
      }
    }
  }

  Tensor y({batch, h});
  for (std::size_t i = 0; i < batch; ++i) {
    auto src = X.row(i);
    auto dst = y.row(i);
    for (std::size_t j = 0; j < h; ++j) dst[j] = (src[j] - mu[j]) * inv_std[j];
  }

  const bool batch_stats = mode != BnMode::running_eval;
  const Var out = next_var(t);
  return t.record(std::move(y), t.requires_grad(x), [x, out, inv_std = std::move(inv_std), batch_stats](Tape& tp) {
    const Tensor& G = tp.grad(out);
    const Tensor& Y = tp.value(out);
    auto& gx = tp.grad(x);
    const std::size_t batch = G.rows(), h = G.cols();
    if (!batch_stats) {
      for (std::size_t i = 0; i < batch; ++i)
        for (std::size_t j = 0; j < h; ++j) gx[i * h + j] += G[i * h + j] * inv_std[j];
      return;
    }
    // dx = inv_std / B * (B*g - sum(g) - xhat * sum(g * xhat))
    std::vector<double> sg(h, 0.0), sgy(h, 0.0);
    for (std::size_t i = 0; i < batch; ++i)
      for (std::size_t j = 0; j < h; ++j) {
        sg[j] += G[i * h + j];
        sgy[j] += G[i * h + j] * Y[i * h + j];
      }
    const double b = static_cast<double>(batch);
    for (std::size_t i = 0; i < batch; ++i)
      for (std::size_t j = 0; j < h; ++j) {
        const std::size_t k = i * h + j;
        gx[k] += inv_std[j] / b * (b * G[k] - sg[j] - Y[k] * sgy[j]);
      }
  });
}

Var affine(Tape& t, Var xhat, Var gamma, Var beta) {
  const Tensor& X = t.value(xhat);
  const Tensor& g = t.value(gamma);
  const Tensor& b = t.value(beta);
  require_matrix(X, "affine");
  const std::size_t batch = X.rows(), h = X.cols();
  auto per_example = [&](const Tensor& p, const char* what) {
    if (p.numel() == h) return false;
    if (p.rank() == 2 && p.rows() == batch && p.cols() == h) return true;
    throw DimensionError(std::string("batchnorm: ") + what + " " + shape_string(p.shape()) + " does not fit " +
                         shape_string(X.shape()));
  };
  const bool g_rows = per_example(g, "gamma");
  const bool b_rows = per_example(b, "beta");
  Tensor y({batch, h});
  for (std::size_t i = 0; i < batch; ++i)
    for (std::size_t j = 0; j < h; ++j) {
      const double gv = g_rows ? g[i * h + j] : g[j];
      const double bv = b_rows ? b[i * h + j] : b[j];
      y[i * h + j] = gv * X[i * h + j] + bv;
    }
  const Var out = next_var(t);
  const bool rg = t.requires_grad(xhat) || t.requires_grad(gamma) || t.requires_grad(beta);
  return t.record(std::move(y), rg, [xhat, gamma, beta, out, g_rows, b_rows](Tape& tp) {
    const Tensor& G = tp.grad(out);
    const Tensor& X = tp.value(xhat);
    const Tensor& gm = tp.value(gamma);
    const std::size_t batch = G.rows(), h = G.cols();
    if (tp.requires_grad(xhat)) {
      auto& gx = tp.grad(xhat);
      for (std::size_t i = 0; i < batch; ++i)
        for (std::size_t j = 0; j < h; ++j) {
          const std::size_t k = i * h + j;
          gx[k] += G[k] * (g_rows ? gm[k] : gm[j]);
        }
    }
    if (tp.requires_grad(gamma)) {
      auto& gg = tp.grad(gamma);
      for (std::size_t i = 0; i < batch; ++i)
        for (std::size_t j = 0; j < h; ++j) {
          const std::size_t k = i * h + j;
          gg[g_rows ? k : j] += G[k] * X[k];
        }
    }
    if (tp.requires_grad(beta)) {
      auto& gb = tp.grad(beta);
      for (std::size_t i = 0; i < batch; ++i)
        for (std::size_t j = 0; j < h; ++j) {
          const std::size_t k = i * h + j;
          gb[b_rows ? k : j] += G[k];
        }
    }
  });
}

Var batchnorm_cond(Tape& t, Var x, Var gamma, Var beta, BnMode mode, RunningStats* stats, double eps) {
  return affine(t, normalize(t, x, mode, stats, eps), gamma, beta);
}

std::vector<double> softmax_row(std::span<const double> logits) {
  std::vector<double> p(logits.begin(), logits.end());
  const double mx = *std::max_element(p.begin(), p.end());
  double z = 0.0;
  for (auto& v : p) {
    v = std::exp(v - mx);
    z += v;
  }
  for (auto& v : p) v /= z;
  return p;
}

Var softmax_cross_entropy(Tape& t, Var logits, std::span<const int> labels) {
  const Tensor& L = t.value(logits);
  require_matrix(L, "softmax_cross_entropy");
  const std::size_t batch = L.rows(), classes = L.cols();
  if (labels.size() != batch) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                         std::to_string(batch));
  }
  double total = 0.0;
  for (std::size_t i = 0; i < batch; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw LabelError("softmax_cross_entropy: label " + std::to_string(y) + " outside [0," +
                       std::to_string(classes) + ")");
    }
    auto r = L.row(i);
    const double mx = *std::max_element(r.begin(), r.end());
    double z = 0.0;
    for (double v : r) z += std::exp(v - mx);
    total += (mx + std::log(z)) - r[static_cast<std::size_t>(y)];
  }
  std::vector<int> lab(labels.begin(), labels.end());
  const Var out = next_var(t);
  return t.record(Tensor({1}, total / static_cast<double>(batch)), t.requires_grad(logits),
                  [logits, lab = std::move(lab), out](Tape& tp) {
                    const Tensor& L = tp.value(logits);
                    const double g0 = tp.grad(out)[0] / static_cast<double>(L.rows());
                    auto& gl = tp.grad(logits);
                    for (std::size_t i = 0; i < L.rows(); ++i) {
                      auto p = softmax_row(L.row(i));
                      auto dst = gl.row(i);
                      for (std::size_t j = 0; j < p.size(); ++j) {
                        const double onehot = static_cast<int>(j) == lab[i] ? 1.0 : 0.0;
                        dst[j] += g0 * (p[j] - onehot);
                      }
                    }
                  });
}

}  // namespace cocoa::ad
