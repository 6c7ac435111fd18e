#pragma once

#include <memory>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "mpstr/tensor.hpp"

namespace mpstr {

template <typename T>
struct Parameter {
  std::string name;
  Matrix<T> value;
  Matrix<T> grad;

  void zero_grad() {
    if (grad.same_shape(value)) {
      grad.fill(T{0});
    } else {
      grad = Matrix<T>(value.rows(), value.cols());
    }
  }
};

// Owns every trainable tensor of a model. Addresses are stable for the
// lifetime of the store; registration order is the checkpoint order.
template <typename T>
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;
  ParamStore(ParamStore&&) noexcept = default;
  ParamStore& operator=(ParamStore&&) noexcept = default;

  Parameter<T>& add(std::string name, int rows, int cols) {
    if (find(name) != nullptr) throw ConfigError("duplicate parameter name: " + name);
    auto p = std::make_unique<Parameter<T>>();
    p->name = std::move(name);
    p->value = Matrix<T>(rows, cols);
    p->grad = Matrix<T>(rows, cols);
    params_.push_back(std::move(p));
    return *params_.back();
  }

  Parameter<T>* find(std::string_view name) {
    for (auto& p : params_)
      if (p->name == name) return p.get();
    return nullptr;
  }
  const Parameter<T>* find(std::string_view name) const {
    for (const auto& p : params_)
      if (p->name == name) return p.get();
    return nullptr;
  }

  const std::vector<std::unique_ptr<Parameter<T>>>& all() const { return params_; }

  void zero_grad() {
    for (auto& p : params_) p->zero_grad();
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->value.size();
    return n;
  }

 private:
  std::vector<std::unique_ptr<Parameter<T>>> params_;
};

}  // namespace mpstr
