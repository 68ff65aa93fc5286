#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "accent_ssl/numerics/tensor.hpp"

namespace accent_ssl {

// A named learnable array. Parameters live outside any tape; a tape only
// borrows their values for the duration of one forward/backward pass.
template <class S>
struct Parameter {
  std::string name;
  Tensor<S> value;
  bool trainable = true;
};

template <class S>
class Tape;

// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
template <class S>
struct Var {
  Tape<S>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<S>& value() const { return tape->value(id); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return tape->requires_grad(id); }
  S item() const {
    if (value().size() != 1) throw DimensionError("item() on non-scalar " + shape_str(shape()));
    return value()[0];
  }
};

// Records primitive operations in forward execution order. backward() walks
// the record in reverse, so every node's gradient is complete before its own
// backward closure runs. A tape built with record=false keeps values only
// (inference mode).
template <class S>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const noexcept { return record_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  Var<S> constant(Tensor<S> value) { return push(std::move(value), false, {}); }

  Var<S> input(Tensor<S> value, bool requires_grad = true) {
    return push(std::move(value), requires_grad && record_, {});
  }

  // One leaf per parameter per tape; repeated uses share the node so the
  // gradient accumulates in a single buffer.
  Var<S> param(Parameter<S>& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return {this, it->second};
    Node n;
    n.external = &p.value;
    n.requires_grad = record_ && p.trainable;
    nodes_.push_back(std::move(n));
    const std::size_t id = nodes_.size() - 1;
    param_nodes_.emplace(&p, id);
    param_order_.push_back(&p);
    return {this, id};
  }

  Var<S> push(Tensor<S> value, bool requires_grad, BackwardFn backward) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad && record_;
    if (n.requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  const Tensor<S>& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.value;
  }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  // Gradient buffer for node id, zero-initialized on first touch.
  Tensor<S>& grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty() && value(id).size() != 0) n.grad = Tensor<S>(value(id).shape());
    return n.grad;
  }
  const Tensor<S>* grad(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.grad.empty() ? nullptr : &n.grad;
  }
  const Tensor<S>* grad(Var<S> v) const { return grad(v.id); }

  void accumulate(std::size_t id, const Tensor<S>& g) {
    if (!nodes_[id].requires_grad) return;
    grad_buffer(id) += g;
  }

  void backward(Var<S> loss) {
    if (!record_) throw ContractError("backward() on a tape built without recording");
    if (value(loss.id).size() != 1)
      throw DimensionError("backward() requires a scalar loss, got " + shape_str(loss.shape()));
    if (!nodes_[loss.id].requires_grad) return;
    grad_buffer(loss.id)[0] += S{1};
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward && !n.grad.empty()) n.backward(*this, i);
    }
  }

  // Visits (parameter, gradient) for every parameter that is used on this
  // tape and received a gradient, in first-use order.
  template <class F>
  void for_each_param_grad(F&& f) const {
    for (Parameter<S>* p : param_order_) {
      const std::size_t id = param_nodes_.at(p);
      if (const Tensor<S>* g = grad(id)) f(*p, *g);
    }
  }

  const std::vector<Parameter<S>*>& used_params() const noexcept { return param_order_; }

 private:
  struct Node {
    Tensor<S> value;
    const Tensor<S>* external = nullptr;
    Tensor<S> grad;
    BackwardFn backward;
    bool requires_grad = false;
  };

  bool record_;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter<S>*, std::size_t> param_nodes_;
  std::vector<Parameter<S>*> param_order_;
};

}  // namespace accent_ssl
