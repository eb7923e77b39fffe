#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include "cocoa/autodiff/parameter.hpp"
#include "cocoa/autodiff/tensor.hpp"

namespace cocoa::ad {

class Tape;

// Handle to a node recorded on a Tape. Only valid for the tape that made it.
struct Var {
  std::uint32_t id = 0;
};

// Reverse-mode recording. Nodes are appended in evaluation order, so the
// node list is already topologically sorted; backward() walks it once in
// reverse. Not thread-safe: one tape per training step.
class Tape {
 public:
  using Backward = std::function<void(Tape&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  // Leaf whose value aliases p.value; gradients accumulate into p.grad.
  Var parameter(Parameter& p);
  // Leaf that does not accumulate into any parameter (frozen weights).
  Var frozen(const Parameter& p);
  Var record(Tensor value, bool requires_grad, Backward backward);

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  // Gradient buffer of a node, allocated on first access.
  Tensor& grad(Var v);
  bool has_grad(Var v) const;

  void backward(Var loss);
  std::size_t size() const { return nodes_.size(); }

  // Piecewise-linear ops report the signed distance of each input to their
  // kink. The signature changes whenever any input changes side, which is
  // how finite-difference probes detect that they straddled a kink.
  void set_track_kinks(bool on) { track_kinks_ = on; }
  bool track_kinks() const { return track_kinks_; }
  void note_kink(double signed_distance);
  std::uint64_t kink_signature() const { return kink_signature_; }
  double min_kink_margin() const { return min_kink_margin_; }

 private:
  struct Node {
    Tensor value;
    const Tensor* external = nullptr;
    Tensor grad;
    Tensor* grad_sink = nullptr;
    bool requires_grad = false;
    bool grad_ready = false;
    Backward backward;
  };

  std::vector<Node> nodes_;
  bool track_kinks_ = false;
  std::uint64_t kink_signature_ = 1469598103934665603ULL;
  double min_kink_margin_ = std::numeric_limits<double>::infinity();
};

}  // namespace cocoa::ad
