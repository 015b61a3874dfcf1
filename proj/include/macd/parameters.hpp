// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "macd/tensor.hpp"

namespace macd {

/// One learnable tensor with its gradient accumulator and Adam moments.
template <typename Scalar>
struct Parameter {
  std::string name;
  Matrix<Scalar> value;
  Matrix<Scalar> grad;
  Matrix<Scalar> first_moment;
  Matrix<Scalar> second_moment;
  // Embedding tables keep row 0 as the all-zero padding row.
  bool padding_row = false;

  Parameter(std::string n, Index rows, Index cols, bool pad)
      : name(std::move(n)),
        value(Matrix<Scalar>::Zero(rows, cols)),
        grad(Matrix<Scalar>::Zero(rows, cols)),
        first_moment(Matrix<Scalar>::Zero(rows, cols)),
        second_moment(Matrix<Scalar>::Zero(rows, cols)),
        padding_row(pad) {}
};

/// Owns every learnable tensor of a model. Enumeration order is registration
/// order, which is stable across save/load and drives gradient checking.
template <typename Scalar>
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;

  Parameter<Scalar>& add(const std::string& name, Index rows, Index cols,
                         bool padding_row = false) {
    if (by_name_.count(name)) throw std::logic_error("duplicate parameter: " + name);
    params_.push_back(std::make_unique<Parameter<Scalar>>(name, rows, cols, padding_row));
    by_name_[name] = params_.size() - 1;
    return *params_.back();
  }

  Parameter<Scalar>& at(const std::string& name) {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw std::out_of_range("unknown parameter: " + name);
    return *params_[it->second];
  }
  const Parameter<Scalar>& at(const std::string& name) const {
    return const_cast<ParameterStore*>(this)->at(name);
  }
  bool contains(const std::string& name) const { return by_name_.count(name) > 0; }

  std::size_t size() const { return params_.size(); }
  Parameter<Scalar>& operator[](std::size_t i) { return *params_[i]; }
  const Parameter<Scalar>& operator[](std::size_t i) const { return *params_[i]; }

  Index scalar_count() const {
    Index n = 0;
    for (const auto& p : params_) n += p->value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p->grad.setZero();
  }

  std::vector<Matrix<Scalar>> snapshot() const {
    std::vector<Matrix<Scalar>> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p->value);
    return out;
  }
  void restore(const std::vector<Matrix<Scalar>>& values) {
    if (values.size() != params_.size()) throw std::invalid_argument("snapshot size mismatch");
    for (std::size_t i = 0; i < params_.size(); ++i) params_[i]->value = values[i];
  }

 private:
  std::vector<std::unique_ptr<Parameter<Scalar>>> params_;
  std::unordered_map<std::string, std::size_t> by_name_;
};

/// uniform(-bound, bound); padding rows are zeroed afterwards.
template <typename Scalar, typename Rng>
void init_uniform(Parameter<Scalar>& p, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Index j = 0; j < p.value.cols(); ++j)
    for (Index i = 0; i < p.value.rows(); ++i) p.value(i, j) = static_cast<Scalar>(dist(rng));
  if (p.padding_row) p.value.row(0).setZero();
}

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adaptive-moment optimizer over a ParameterStore. Padding rows never receive
/// gradient, so their moments and values stay exactly zero.
template <typename Scalar>
class Adam {
 public:
  explicit Adam(AdamOptions opts = {}) : opts_(opts) {}

  void step(ParameterStore<Scalar>& store) {
    ++steps_;
    const double c1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(steps_));
    const auto b1 = static_cast<Scalar>(opts_.beta1);
    const auto b2 = static_cast<Scalar>(opts_.beta2);
    const auto lr = static_cast<Scalar>(opts_.learning_rate * std::sqrt(c2) / c1);
    const auto eps = static_cast<Scalar>(opts_.epsilon * std::sqrt(c2));
    for (std::size_t i = 0; i < store.size(); ++i) {
      auto& p = store[i];
      p.first_moment = b1 * p.first_moment + (Scalar(1) - b1) * p.grad;
      p.second_moment =
          b2 * p.second_moment + (Scalar(1) - b2) * p.grad.cwiseProduct(p.grad);
      p.value.array() -=
          lr * p.first_moment.array() / (p.second_moment.array().sqrt() + eps);
    }
  }

  long steps() const { return steps_; }
  void set_steps(long s) { steps_ = s; }
  const AdamOptions& options() const { return opts_; }

 private:
  AdamOptions opts_;
  long steps_ = 0;
};

}  // namespace macd
