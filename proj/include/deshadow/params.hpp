#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "deshadow/autograd.hpp"
#include "deshadow/rng.hpp"
#include "deshadow/tensor.hpp"

namespace deshadow {

/// Named, shaped parameter tensors. std::map keeps iteration order
/// deterministic for counting, serialization and optimizer sweeps.
template <typename T>
struct ParamStore {
  std::map<std::string, Tensor<T>> entries;

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : entries) n += t.numel();
    return n;
  }

  bool all_finite() const {
    for (const auto& [name, t] : entries) {
      if (!t.all_finite()) return false;
    }
    return true;
  }

  const Tensor<T>& at(const std::string& name) const {
    auto it = entries.find(name);
    if (it == entries.end()) throw DataError("parameter not found: " + name);
    return it->second;
  }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& [name, t] : entries) out.entries.emplace(name, t.template cast<U>());
    return out;
  }
};

/// Binds a ParamStore to graph leaves for one forward/backward pass.
template <typename T>
class ParamGraph {
 public:
  ParamGraph(const ParamStore<T>& store, bool trainable)
      : store_(&store), trainable_(trainable) {}

  ag::Value<T> get(const std::string& name) {
    auto it = leaves_.find(name);
    if (it != leaves_.end()) return it->second;
    ag::Value<T> v = ag::leaf(store_->at(name), trainable_);
    leaves_.emplace(name, v);
    return v;
  }

  /// Gradient of a parameter after backward; zeros when it never
  /// participated in the graph.
  Tensor<T> grad_of(const std::string& name) const {
    auto it = leaves_.find(name);
    if (it == leaves_.end() || !it->second.has_grad()) {
      return Tensor<T>(store_->at(name).shape());
    }
    return it->second.grad();
  }

  const std::map<std::string, ag::Value<T>>& leaves() const { return leaves_; }

 private:
  const ParamStore<T>* store_;
  bool trainable_;
  std::map<std::string, ag::Value<T>> leaves_;
};

/// Fan-in-scaled uniform init, U(-1/sqrt(fan_in), +1/sqrt(fan_in)).
template <typename T>
Tensor<T> uniform_init(const std::vector<int>& shape, int fan_in, Rng& rng) {
  Tensor<T> t(shape);
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : t.vec()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

template <typename T>
void add_conv(ParamStore<T>& store, const std::string& prefix, int out_c, int in_c,
              int k, Rng& rng, bool zero = false) {
  store.entries[prefix + ".w"] =
      zero ? Tensor<T>({out_c, in_c, k, k})
           : uniform_init<T>({out_c, in_c, k, k}, in_c * k * k, rng);
  store.entries[prefix + ".b"] = Tensor<T>({out_c});
}

template <typename T>
void add_linear(ParamStore<T>& store, const std::string& prefix, int in_d, int out_d,
                Rng& rng) {
  store.entries[prefix + ".w"] = uniform_init<T>({in_d, out_d}, in_d, rng);
  store.entries[prefix + ".b"] = Tensor<T>({out_d});
}

template <typename T>
void add_norm_affine(ParamStore<T>& store, const std::string& prefix, int c) {
  store.entries[prefix + ".gamma"] = Tensor<T>::full({c}, T(1));
  store.entries[prefix + ".beta"] = Tensor<T>({c});
}

}  // namespace deshadow
