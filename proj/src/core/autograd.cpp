#include "weedsense/core/autograd.hpp"

namespace weedsense {

template <typename Scalar>
Parameter<Scalar>& ParameterStore<Scalar>::add(const std::string& name, Tensor<Scalar> value,
                                               bool trainable) {
  if (by_name_.count(name) != 0) throw ConfigError("duplicate parameter name '" + name + "'");
  auto p = std::make_unique<Parameter<Scalar>>();
  p->name = name;
  p->value = std::move(value);
  p->trainable = trainable;
  Parameter<Scalar>& ref = *p;
  by_name_[name] = p.get();
  params_.push_back(std::move(p));
  return ref;
}

template <typename Scalar>
Parameter<Scalar>* ParameterStore<Scalar>::find(const std::string& name) {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? nullptr : it->second;
}

template <typename Scalar>
const Parameter<Scalar>* ParameterStore<Scalar>::find(const std::string& name) const {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? nullptr : it->second;
}

template <typename Scalar>
Parameter<Scalar>& ParameterStore<Scalar>::at(const std::string& name) {
  Parameter<Scalar>* p = find(name);
  if (p == nullptr) throw ConfigError("unknown parameter '" + name + "'");
  return *p;
}

template <typename Scalar>
const Parameter<Scalar>& ParameterStore<Scalar>::at(const std::string& name) const {
  const Parameter<Scalar>* p = find(name);
  if (p == nullptr) throw ConfigError("unknown parameter '" + name + "'");
  return *p;
}

template <typename Scalar>
std::vector<Parameter<Scalar>*> ParameterStore<Scalar>::trainable() const {
  std::vector<Parameter<Scalar>*> out;
  for (const auto& p : params_) {
    if (p->trainable) out.push_back(p.get());
  }
  return out;
}

template <typename Scalar>
Index ParameterStore<Scalar>::trainable_count() const {
  Index n = 0;
  for (const auto& p : params_) {
    if (p->trainable) n += p->value.numel();
  }
  return n;
}

template <typename Scalar>
void ParameterStore<Scalar>::zero_grad() {
  for (auto& p : params_) {
    if (p->trainable) p->grad = Tensor<Scalar>::zeros_like(p->value);
  }
}

namespace {
template <typename Scalar>
Tape<Scalar>*& active_tape() {
  static thread_local Tape<Scalar>* current = nullptr;
  return current;
}
}  // namespace

template <typename Scalar>
Tape<Scalar>::Tape() : previous_(active_tape<Scalar>()) {
  active_tape<Scalar>() = this;
}

template <typename Scalar>
Tape<Scalar>::~Tape() {
  active_tape<Scalar>() = previous_;
}

template <typename Scalar>
Tape<Scalar>* Tape<Scalar>::active() {
  return active_tape<Scalar>();
}

template <typename Scalar>
Var<Scalar> Tape<Scalar>::variable(Tensor<Scalar> value) {
  auto n = std::make_shared<Node<Scalar>>();
  n->owned = std::move(value);
  n->requires_grad = true;
  record(n);
  return Var<Scalar>(std::move(n));
}

template <typename Scalar>
void Tape<Scalar>::backward(const Var<Scalar>& loss) {
  if (!loss.defined() || loss.value().numel() != 1) {
    throw UsageError("backward requires a scalar loss, got shape " +
                     (loss.defined() ? loss.shape().str() : std::string("<undefined>")));
  }
  if (consumed_) throw UsageError("tape has already been replayed");
  consumed_ = true;
  if (!loss.requires_grad()) return;
  loss.node()->grad_buffer()[0] = Scalar(1);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node<Scalar>& n = **it;
    if (n.backward && !n.grad.empty()) n.backward();
  }
}

template <typename Scalar>
Var<Scalar> param_var(Parameter<Scalar>& p) {
  auto n = std::make_shared<Node<Scalar>>();
  n->borrowed = &p.value;
  n->param = &p;
  Tape<Scalar>* tape = Tape<Scalar>::active();
  if (tape != nullptr && p.trainable) {
    n->requires_grad = true;
    tape->record(n);
  }
  return Var<Scalar>(std::move(n));
}

template <typename Scalar>
std::map<std::string, Tensor<Scalar>> gradients(Tape<Scalar>& tape, const Var<Scalar>& loss) {
  tape.backward(loss);
  std::map<std::string, Tensor<Scalar>> out;
  for (const auto& n : tape.nodes()) {
    if (n->param == nullptr) continue;
    auto it = out.find(n->param->name);
    if (it == out.end()) it = out.emplace(n->param->name, Tensor<Scalar>::zeros_like(n->value())).first;
    if (!n->grad.empty()) it->second += n->grad;
  }
  return out;
}

template <typename Scalar>
std::map<std::string, Tensor<Scalar>> gradients(Tape<Scalar>& tape, const Var<Scalar>& loss,
                                                const ParameterStore<Scalar>& store) {
  auto out = gradients(tape, loss);
  for (const auto& p : store.all()) {
    if (p->trainable && out.count(p->name) == 0) {
      out.emplace(p->name, Tensor<Scalar>::zeros_like(p->value));
    }
  }
  return out;
}

template <typename Scalar>
void accumulate_parameter_gradients(Tape<Scalar>& tape, const Var<Scalar>& loss) {
  tape.backward(loss);
  for (const auto& n : tape.nodes()) {
    if (n->param == nullptr || n->grad.empty()) continue;
    Parameter<Scalar>& p = *n->param;
    if (p.grad.empty()) p.grad = Tensor<Scalar>::zeros_like(p.value);
    p.grad += n->grad;
  }
}

#define WEEDSENSE_INSTANTIATE(S)                                                              \
  template class ParameterStore<S>;                                                           \
  template class Tape<S>;                                                                     \
  template Var<S> param_var(Parameter<S>&);                                                   \
  template std::map<std::string, Tensor<S>> gradients(Tape<S>&, const Var<S>&);               \
  template std::map<std::string, Tensor<S>> gradients(Tape<S>&, const Var<S>&,                \
                                                      const ParameterStore<S>&);              \
  template void accumulate_parameter_gradients(Tape<S>&, const Var<S>&);

WEEDSENSE_INSTANTIATE(float)
WEEDSENSE_INSTANTIATE(double)

}  // namespace weedsense
