#pragma once

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace svkit {

struct NnError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Row-major n-dimensional array with an optional gradient buffer of the
/// same length.
template <typename T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> values;
  std::vector<T> grad;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    values.assign(numel(), T(0));
  }

  size_t numel() const {
    size_t n = 1;
    for (int d : shape) n *= size_t(d);
    return n;
  }
  int dim(int i) const { return shape[size_t(i)]; }
  int ndim() const { return int(shape.size()); }

  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), T(0));
  }
  void zero_grad() {
    if (!grad.empty()) std::fill(grad.begin(), grad.end(), T(0));
  }
};

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> tensor;
  bool trainable = true;
};

/// Owns every parameter of a network; iteration follows creation order,
/// which fixes the checkpoint record order.
template <typename T>
class ParamStore {
 public:
  Parameter<T>* create(const std::string& name, std::vector<int> shape, bool trainable = true) {
    if (find(name)) throw NnError("duplicate parameter name '" + name + "'");
    auto p = std::make_unique<Parameter<T>>();
    p->name = name;
    p->tensor = Tensor<T>(std::move(shape));
    p->trainable = trainable;
    params_.push_back(std::move(p));
    return params_.back().get();
  }

  Parameter<T>* find(const std::string& name) {
    for (auto& p : params_)
      if (p->name == name) return p.get();
    return nullptr;
  }
  const Parameter<T>* find(const std::string& name) const {
    for (auto& p : params_)
      if (p->name == name) return p.get();
    return nullptr;
  }

  size_t size() const { return params_.size(); }
  Parameter<T>* at(size_t i) { return params_[i].get(); }
  const Parameter<T>* at(size_t i) const { return params_[i].get(); }

  void zero_grads() {
    for (auto& p : params_) {
      p->tensor.ensure_grad();
      p->tensor.zero_grad();
    }
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::vector<std::unique_ptr<Parameter<T>>> params_;
};

}  // namespace svkit
