#pragma once

#include <cmath>
#include <vector>

#include "unitrans/nn.hpp"

namespace unitrans {

// Adam with L2 weight decay folded into the gradient.
template <typename T>
class Adam {
 public:
  struct Options {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.99;
    double eps = 1e-8;
    double weight_decay = 1e-4;
  };

  Adam() = default;
  Adam(const ParamStore<T>& params, Options opt) : opt_(opt) {
    for (const auto& p : params.params()) {
      m_.emplace_back(p.shape());
      v_.emplace_back(p.shape());
    }
  }

  void step(ParamStore<T>& params, const std::vector<Var<T>>& grads) {
    if (grads.size() != m_.size()) throw ShapeError("Adam: gradient count does not match parameters");
    ++t_;
    const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < m_.size(); ++i) {
      auto& w = params.params()[i].mutable_value();
      const auto& g = grads[i].value();
      for (std::int64_t j = 0; j < w.size(); ++j) {
        const double gj = static_cast<double>(g[j]) + opt_.weight_decay * w[j];
        const double m = opt_.beta1 * m_[i][j] + (1.0 - opt_.beta1) * gj;
        const double v = opt_.beta2 * v_[i][j] + (1.0 - opt_.beta2) * gj * gj;
        m_[i][j] = static_cast<T>(m);
        v_[i][j] = static_cast<T>(v);
        w[j] = static_cast<T>(w[j] - opt_.lr * (m / c1) / (std::sqrt(v / c2) + opt_.eps));
      }
    }
  }

  std::int64_t steps() const { return t_; }
  void set_steps(std::int64_t t) { t_ = t; }
  std::vector<Tensor<T>>& first_moments() { return m_; }
  std::vector<Tensor<T>>& second_moments() { return v_; }
  const std::vector<Tensor<T>>& first_moments() const { return m_; }
  const std::vector<Tensor<T>>& second_moments() const { return v_; }

 private:
  Options opt_;
  std::vector<Tensor<T>> m_, v_;
  std::int64_t t_ = 0;
};

// RMSprop (no momentum, non-centered) with L2 weight decay.
template <typename T>
class RMSprop {
 public:
  struct Options {
    double lr = 1e-4;
    double alpha = 0.99;
    double eps = 1e-8;
    double weight_decay = 1e-4;
  };

  RMSprop() = default;
  RMSprop(const ParamStore<T>& params, Options opt) : opt_(opt) {
    for (const auto& p : params.params()) sq_.emplace_back(p.shape());
  }

  void step(ParamStore<T>& params, const std::vector<Var<T>>& grads) {
    if (grads.size() != sq_.size()) throw ShapeError("RMSprop: gradient count does not match parameters");
    ++t_;
    for (std::size_t i = 0; i < sq_.size(); ++i) {
      auto& w = params.params()[i].mutable_value();
      const auto& g = grads[i].value();
      for (std::int64_t j = 0; j < w.size(); ++j) {
        const double gj = static_cast<double>(g[j]) + opt_.weight_decay * w[j];
        const double s = opt_.alpha * sq_[i][j] + (1.0 - opt_.alpha) * gj * gj;
        sq_[i][j] = static_cast<T>(s);
        w[j] = static_cast<T>(w[j] - opt_.lr * gj / (std::sqrt(s) + opt_.eps));
      }
    }
  }

  std::int64_t steps() const { return t_; }
  void set_steps(std::int64_t t) { t_ = t; }
  std::vector<Tensor<T>>& square_averages() { return sq_; }
  const std::vector<Tensor<T>>& square_averages() const { return sq_; }

 private:
  Options opt_;
  std::vector<Tensor<T>> sq_;
  std::int64_t t_ = 0;
};

}  // namespace unitrans
