#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "msync/errors.hpp"
#include "msync/tensor.hpp"

namespace msync {

// Named trainable tensor. `grad` is a persistent accumulator owned by the
// parameter (zeroed by the optimizer step), so batches can sum gradients
// over several tapes before updating.
template <typename S>
struct Parameter {
  std::string name;
  Tensor<S> value;
  Tensor<S> grad;

  Parameter(std::string n, Tensor<S> v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}
};

// Owns a model's parameters in registration order. Registration order is
// the checkpoint order, so component constructors must register
// deterministically.
template <typename S>
class ParamStore {
 public:
  Parameter<S>& add(const std::string& name, Tensor<S> init) {
    if (by_name_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    items_.push_back(std::make_unique<Parameter<S>>(name, std::move(init)));
    by_name_[name] = items_.back().get();
    return *items_.back();
  }

  Parameter<S>* find(const std::string& name) const {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : it->second;
  }

  const std::vector<std::unique_ptr<Parameter<S>>>& items() const { return items_; }
  size_t size() const { return items_.size(); }

  void zero_grads() {
    for (auto& p : items_) p->grad.set_zero();
  }

 private:
  std::vector<std::unique_ptr<Parameter<S>>> items_;
  std::map<std::string, Parameter<S>*> by_name_;
};

// Glorot-uniform initializer for weight matrices.
template <typename S>
Tensor<S> glorot(std::vector<Index> shape, Index fan_in, Index fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / double(fan_in + fan_out));
  return Tensor<S>::uniform(std::move(shape), rng, S(-bound), S(bound));
}

}  // namespace msync
