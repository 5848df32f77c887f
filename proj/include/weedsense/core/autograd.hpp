#pragma once

#include <functional>
#include <initializer_list>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "weedsense/core/tensor.hpp"

namespace weedsense {

enum class Mode { kTrain, kEval };

/// Named model tensor. Buffers (e.g. batch-norm running statistics) are
/// parameters with trainable == false: checkpointed, never differentiated.
template <typename Scalar>
struct Parameter {
  std::string name;
  Tensor<Scalar> value;
  Tensor<Scalar> grad;
  bool trainable = true;
};

/// Owns parameters with stable addresses, in creation order.
template <typename Scalar>
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;
  ParameterStore(ParameterStore&&) = default;
  ParameterStore& operator=(ParameterStore&&) = default;

  Parameter<Scalar>& add(const std::string& name, Tensor<Scalar> value, bool trainable = true);

  Parameter<Scalar>* find(const std::string& name);
  const Parameter<Scalar>* find(const std::string& name) const;
  Parameter<Scalar>& at(const std::string& name);
  const Parameter<Scalar>& at(const std::string& name) const;

  const std::vector<std::unique_ptr<Parameter<Scalar>>>& all() const { return params_; }
  std::vector<Parameter<Scalar>*> trainable() const;

  /// Number of trainable scalars.
  Index trainable_count() const;
  void zero_grad();

 private:
  std::vector<std::unique_ptr<Parameter<Scalar>>> params_;
  std::map<std::string, Parameter<Scalar>*> by_name_;
};

/// One value in a recorded computation. `backward` pushes this node's
/// gradient into the gradients of its inputs.
template <typename Scalar>
struct Node {
  Tensor<Scalar> owned;
  const Tensor<Scalar>* borrowed = nullptr;
  Tensor<Scalar> grad;
  bool requires_grad = false;
  Parameter<Scalar>* param = nullptr;
  std::function<void()> backward;

  const Tensor<Scalar>& value() const { return borrowed ? *borrowed : owned; }

  Tensor<Scalar>& grad_buffer() {
    if (grad.empty()) grad = Tensor<Scalar>::zeros_like(value());
    return grad;
  }
};

/// Handle to a node. Cheap to copy; values are immutable once produced.
template <typename Scalar>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<Scalar>> node) : node_(std::move(node)) {}

  static Var constant(Tensor<Scalar> value) {
    auto n = std::make_shared<Node<Scalar>>();
    n->owned = std::move(value);
    return Var(std::move(n));
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor<Scalar>& value() const { return node_->value(); }
  const Shape& shape() const { return node_->value().shape(); }
  Index dim(int axis) const { return shape()[axis]; }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  /// Gradient accumulated by the last backward pass (zeros if unreached).
  Tensor<Scalar> grad() const {
    return node_->grad.empty() ? Tensor<Scalar>::zeros_like(value()) : node_->grad;
  }

  Node<Scalar>* node() const { return node_.get(); }
  const std::shared_ptr<Node<Scalar>>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node<Scalar>> node_;
};

/// Ordered record of the differentiable operations executed while it is
/// active. Constructing a tape activates it for the current thread; the
/// previous tape is restored on destruction. Nodes are appended in execution
/// order, so a reverse walk is a reverse topological order.
template <typename Scalar>
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  /// Differentiable leaf holding an arbitrary tensor.
  Var<Scalar> variable(Tensor<Scalar> value);

  void record(const std::shared_ptr<Node<Scalar>>& node) { nodes_.push_back(node); }

  /// Seeds d(loss)/d(loss) = 1 and replays the tape backward. May run once.
  void backward(const Var<Scalar>& loss);

  std::size_t size() const { return nodes_.size(); }
  const std::vector<std::shared_ptr<Node<Scalar>>>& nodes() const { return nodes_; }

 private:
  std::vector<std::shared_ptr<Node<Scalar>>> nodes_;
  Tape* previous_ = nullptr;
  bool consumed_ = false;
};

/// Leaf bound to a parameter's storage (no copy). Recorded on the active tape
/// when the parameter is trainable.
template <typename Scalar>
Var<Scalar> param_var(Parameter<Scalar>& p);

/// Gradients of `loss` for every parameter that appears on the tape.
template <typename Scalar>
std::map<std::string, Tensor<Scalar>> gradients(Tape<Scalar>& tape, const Var<Scalar>& loss);

/// As above, but every trainable parameter of `store` is present; parameters
/// the loss does not reach map to zeros.
template <typename Scalar>
std::map<std::string, Tensor<Scalar>> gradients(Tape<Scalar>& tape, const Var<Scalar>& loss,
                                                 const ParameterStore<Scalar>& store);

/// Runs backward and adds each parameter leaf's gradient into Parameter::grad.
template <typename Scalar>
void accumulate_parameter_gradients(Tape<Scalar>& tape, const Var<Scalar>& loss);

namespace detail {

template <typename Scalar>
bool needs_grad(std::initializer_list<const Var<Scalar>*> inputs) {
  if (Tape<Scalar>::active() == nullptr) return false;
  for (const Var<Scalar>* v : inputs) {
    if (v != nullptr && v->requires_grad()) return true;
  }
  return false;
}

/// Wraps an op result; records it when gradients are needed.
template <typename Scalar>
Var<Scalar> make_output(Tensor<Scalar> value, bool requires_grad) {
  auto n = std::make_shared<Node<Scalar>>();
  n->owned = std::move(value);
  n->requires_grad = requires_grad;
  if (requires_grad) Tape<Scalar>::active()->record(n);
  return Var<Scalar>(std::move(n));
}

}  // namespace detail

}  // namespace weedsense
