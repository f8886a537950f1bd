#pragma once

#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "reatt/autograd.hpp"
#include "reatt/errors.hpp"
#include "reatt/tensor.hpp"

namespace reatt {

template <typename T>
struct NamedParam {
  std::string name;
  Var<T> var;
};

template <typename T>
struct NamedBuffer {
  std::string name;
  std::shared_ptr<Tensor<T>> tensor;
};

// Ordered collection of trainable leaves plus non-trainable buffers (running
// statistics). A network keeps three of these: backbone, actors, critics.
template <typename T>
class ParamRegistry {
 public:
  Var<T> add(const std::string& name, Tensor<T> init) {
    claim(name);
    auto v = make_leaf(std::move(init), true);
    params_.push_back({name, v});
    return v;
  }

  std::shared_ptr<Tensor<T>> add_buffer(const std::string& name, Tensor<T> init) {
    claim(name);
    auto t = std::make_shared<Tensor<T>>(std::move(init));
    buffers_.push_back({name, t});
    return t;
  }

  const std::vector<NamedParam<T>>& params() const { return params_; }
  const std::vector<NamedBuffer<T>>& buffers() const { return buffers_; }

  Var<T> param(const std::string& name) const {
    for (const auto& p : params_)
      if (p.name == name) return p.var;
    throw LookupError("no parameter named '" + name + "'");
  }

  int64_t param_count() const {
    int64_t n = 0;
    for (const auto& p : params_) n += p.var->value.numel();
    return n;
  }

  size_t size() const { return params_.size(); }

 private:
  void claim(const std::string& name) {
    if (!names_.insert(name).second)
      throw LookupError("duplicate registration of '" + name + "'");
  }

  std::vector<NamedParam<T>> params_;
  std::vector<NamedBuffer<T>> buffers_;
  std::unordered_set<std::string> names_;
};

}  // namespace reatt
