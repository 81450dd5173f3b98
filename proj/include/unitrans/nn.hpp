#pragma once

#include <cmath>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "unitrans/autodiff/functional.hpp"

namespace unitrans {

using Rng = std::mt19937_64;

enum class Mode { train, eval };

// Named trainable parameters plus non-trainable buffers (running statistics).
// Copying a store deep-copies every tensor, so copies never share parameters.
template <typename T>
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore& other) { copy_from(other); }
  ParamStore& operator=(const ParamStore& other) {
    if (this != &other) copy_from(other);
    return *this;
  }
  ParamStore(ParamStore&&) noexcept = default;
  ParamStore& operator=(ParamStore&&) noexcept = default;

  const Var<T>& add_param(const std::string& name, Tensor<T> init) {
    if (param_index_.count(name)) throw std::logic_error("duplicate parameter " + name);
    param_index_[name] = params_.size();
    param_names_.push_back(name);
    params_.push_back(Var<T>::leaf(std::move(init), true));
    return params_.back();
  }

  void add_buffer(const std::string& name, Tensor<T> init) {
    if (buffer_index_.count(name)) throw std::logic_error("duplicate buffer " + name);
    buffer_index_[name] = buffers_.size();
    buffer_names_.push_back(name);
    buffers_.push_back(std::move(init));
  }

  const Var<T>& param(const std::string& name) const {
    auto it = param_index_.find(name);
    if (it == param_index_.end()) throw std::out_of_range("unknown parameter " + name);
    return params_[it->second];
  }
  bool has_param(const std::string& name) const { return param_index_.count(name) > 0; }

  Tensor<T>& buffer(const std::string& name) { return buffers_.at(buffer_index_.at(name)); }
  const Tensor<T>& buffer(const std::string& name) const { return buffers_.at(buffer_index_.at(name)); }

  const std::vector<Var<T>>& params() const { return params_; }
  std::vector<Var<T>>& params() { return params_; }
  const std::vector<std::string>& param_names() const { return param_names_; }
  const std::vector<std::string>& buffer_names() const { return buffer_names_; }
  std::vector<Tensor<T>>& buffers() { return buffers_; }
  const std::vector<Tensor<T>>& buffers() const { return buffers_; }

  std::int64_t parameter_count() const {
    std::int64_t n = 0;
    for (const auto& p : params_) n += p.size();
    return n;
  }

  bool congruent(const ParamStore& other) const {
    if (param_names_ != other.param_names_ || buffer_names_ != other.buffer_names_) return false;
    for (std::size_t i = 0; i < params_.size(); ++i)
      if (params_[i].shape() != other.params_[i].shape()) return false;
    for (std::size_t i = 0; i < buffers_.size(); ++i)
      if (buffers_[i].shape() != other.buffers_[i].shape()) return false;
    return true;
  }

 private:
  void copy_from(const ParamStore& other) {
    param_names_ = other.param_names_;
    buffer_names_ = other.buffer_names_;
    param_index_ = other.param_index_;
    buffer_index_ = other.buffer_index_;
    buffers_ = other.buffers_;
    params_.clear();
    params_.reserve(other.params_.size());
    for (const auto& p : other.params_) params_.push_back(Var<T>::leaf(p.value(), true));
  }

  std::vector<std::string> param_names_, buffer_names_;
  std::unordered_map<std::string, std::size_t> param_index_, buffer_index_;
  std::vector<Var<T>> params_;
  std::vector<Tensor<T>> buffers_;
};

// target <- decay * target + (1 - decay) * source, over parameters and, when
// asked, buffers. Used for both momentum keys and EMA shadows.
template <typename T>
void blend_into(ParamStore<T>& target, const ParamStore<T>& source, double decay, bool include_buffers) {
  if (!target.congruent(source)) throw ShapeError("blend_into: parameter sets are not shape-congruent");
  const T a = static_cast<T>(decay), b = static_cast<T>(1.0 - decay);
  for (std::size_t i = 0; i < target.params().size(); ++i) {
    auto& dst = target.params()[i].mutable_value();
    const auto& src = source.params()[i].value();
    for (std::int64_t j = 0; j < dst.size(); ++j) dst[j] = a * dst[j] + b * src[j];
  }
  if (!include_buffers) return;
  for (std::size_t i = 0; i < target.buffers().size(); ++i) {
    auto& dst = target.buffers()[i];
    const auto& src = source.buffers()[i];
    for (std::int64_t j = 0; j < dst.size(); ++j) dst[j] = a * dst[j] + b * src[j];
  }
}

template <typename T>
Tensor<T> normal_tensor(Shape shape, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
  return t;
}

// Layer registration and application. Convolutions use He-normal weights and
// zero biases; linear layers draw weights from N(0, 0.01).

template <typename T>
void add_conv(ParamStore<T>& ps, const std::string& name, std::int64_t in, std::int64_t out, std::int64_t k, Rng& rng,
              bool bias = true) {
  const double fan_in = static_cast<double>(in * k * k);
  ps.add_param(name + ".weight", normal_tensor<T>({out, in, k, k}, std::sqrt(2.0 / fan_in), rng));
  if (bias) ps.add_param(name + ".bias", Tensor<T>({out}));
}

template <typename T>
Var<T> apply_conv(const ParamStore<T>& ps, const std::string& name, const Var<T>& x, ConvGeometry geom) {
  const std::string bias = name + ".bias";
  return conv2d_bias(x, ps.param(name + ".weight"), ps.has_param(bias) ? ps.param(bias) : Var<T>{}, geom);
}

template <typename T>
void add_linear(ParamStore<T>& ps, const std::string& name, std::int64_t in, std::int64_t out, Rng& rng) {
  ps.add_param(name + ".weight", normal_tensor<T>({in, out}, 0.01, rng));
  ps.add_param(name + ".bias", Tensor<T>({out}));
}

template <typename T>
Var<T> apply_linear(const ParamStore<T>& ps, const std::string& name, const Var<T>& x) {
  return linear(x, ps.param(name + ".weight"), ps.param(name + ".bias"));
}

template <typename T>
void add_batch_norm(ParamStore<T>& ps, const std::string& name, std::int64_t channels) {
  ps.add_param(name + ".gamma", Tensor<T>({channels}, T(1)));
  ps.add_param(name + ".beta", Tensor<T>({channels}));
  ps.add_buffer(name + ".running_mean", Tensor<T>({channels}));
  ps.add_buffer(name + ".running_var", Tensor<T>({channels}, T(1)));
}

// Batch normalization over (N, H, W). Training mode normalizes with batch
// statistics and updates the running estimates; eval mode uses the estimates.
template <typename T>
Var<T> apply_batch_norm(ParamStore<T>& ps, const std::string& name, const Var<T>& x, Mode mode,
                        T momentum = T(0.1), T eps = T(1e-5)) {
  const auto C = x.dim(1);
  const Shape chan{1, C, 1, 1};
  auto gamma = reshape(ps.param(name + ".gamma"), chan);
  auto beta = reshape(ps.param(name + ".beta"), chan);
  auto& rmean = ps.buffer(name + ".running_mean");
  auto& rvar = ps.buffer(name + ".running_var");
  if (mode == Mode::eval) {
    auto mean = Var<T>::constant(rmean.reshaped(chan));
    auto inv = Var<T>::constant(detail::map(rvar, [eps](T v) { return T(1) / std::sqrt(v + eps); }).reshaped(chan));
    return add(mul(mul(sub(x, mean), inv), gamma), beta);
  }
  if (x.size() / C < 2) throw ShapeError("batch norm in training mode needs more than one value per channel");
  auto mean = mean_to(x, chan);
  auto centered = sub(x, mean);
  auto var = mean_to(square(centered), chan);
  const T count = static_cast<T>(x.size() / C);
  for (std::int64_t c = 0; c < C; ++c) {
    rmean[c] = (T(1) - momentum) * rmean[c] + momentum * mean.value()[c];
    rvar[c] = (T(1) - momentum) * rvar[c] + momentum * var.value()[c] * count / (count - T(1));
  }
  return add(mul(mul(centered, pow_scalar(add_scalar(var, eps), T(-0.5))), gamma), beta);
}

// Read-only variant for evaluation on a const store.
template <typename T>
Var<T> apply_batch_norm_eval(const ParamStore<T>& ps, const std::string& name, const Var<T>& x, T eps = T(1e-5)) {
  const Shape chan{1, x.dim(1), 1, 1};
  auto mean = Var<T>::constant(ps.buffer(name + ".running_mean").reshaped(chan));
  auto inv = Var<T>::constant(
      detail::map(ps.buffer(name + ".running_var"), [eps](T v) { return T(1) / std::sqrt(v + eps); }).reshaped(chan));
  return add(mul(mul(sub(x, mean), inv), reshape(ps.param(name + ".gamma"), chan)),
             reshape(ps.param(name + ".beta"), chan));
}

template <typename T>
void add_frn(ParamStore<T>& ps, const std::string& name, std::int64_t channels) {
  ps.add_param(name + ".gamma", Tensor<T>({channels}, T(1)));
  ps.add_param(name + ".beta", Tensor<T>({channels}));
  ps.add_param(name + ".tau", Tensor<T>({channels}));
}

template <typename T>
Var<T> apply_frn(const ParamStore<T>& ps, const std::string& name, const Var<T>& x) {
  return frn_tlu(x, ps.param(name + ".gamma"), ps.param(name + ".beta"), ps.param(name + ".tau"));
}

// Optional record of intermediate output shapes, for architecture audits.
struct LayerTrace {
  std::string layer;
  Shape shape;  // NCHW or [B, features]
};
using TraceSink = std::vector<LayerTrace>*;

template <typename T>
void trace(TraceSink sink, const std::string& layer, const Var<T>& v) {
  if (sink) sink->push_back({layer, v.shape()});
}

}  // namespace unitrans
