#include "cocoa/autodiff/tape.hpp"

#include <cmath>

#include "cocoa/errors.hpp"

namespace cocoa::ad {

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::parameter(Parameter& p) {
  Node n;
  n.external = &p.value;
  n.grad_sink = &p.grad;
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::frozen(const Parameter& p) {
  Node n;
  n.external = &p.value;
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::record(Tensor value, bool requires_grad, Backward backward) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

const Tensor& Tape::value(Var v) const {
  const Node& n = nodes_[v.id];
  return n.external ? *n.external : n.value;
}

Tensor& Tape::grad(Var v) {
  Node& n = nodes_[v.id];
  if (n.grad_sink) {
    n.grad_ready = true;
    return *n.grad_sink;
  }
  if (!n.grad_ready) {
    n.grad = Tensor(value(v).shape(), 0.0);
    n.grad_ready = true;
  }
  return n.grad;
}

bool Tape::has_grad(Var v) const { return nodes_[v.id].grad_ready; }

void Tape::backward(Var loss) {
  if (value(loss).numel() != 1) {
    throw DimensionError("backward() needs a scalar loss, got " + shape_string(value(loss).shape()));
  }
  if (!requires_grad(loss)) return;
  grad(loss)[0] += 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.grad_ready || !n.backward) continue;
    n.backward(*this);
  }
}

void Tape::note_kink(double signed_distance) {
  const std::uint64_t side = signed_distance > 0 ? 1 : (signed_distance < 0 ? 2 : 3);
  kink_signature_ = (kink_signature_ ^ side) * 1099511628211ULL;
  const double m = std::abs(signed_distance);
  if (m < min_kink_margin_) min_kink_margin_ = m;
}

}  // namespace cocoa::ad
