#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "unitrans/image_batch.hpp"
#include "unitrans/nn.hpp"

namespace unitrans {

struct GuidingConfig {
  int num_domains = 10;  // preset cluster count
  int channels = 64;     // channel multiplier
  int style_dim = 128;
  int resolution = 128;
};

// Backbone stages: (output channel multiple of ch, max-pool after the block).
inline const std::vector<std::pair<int, bool>>& guiding_backbone_layout() {
  static const std::vector<std::pair<int, bool>> layout{{1, true}, {2, true}, {4, false}, {4, true},
                                                        {8, false}, {8, true}, {8, false}, {8, true}};
  return layout;
}

// Shared VGG11-BN-style encoder with a clustering head and a style head.
template <typename T>
class GuidingNetwork {
 public:
  struct Output {
    Var<T> logits;     // [B, K]
    Var<T> posterior;  // [B, K], rows on the simplex
    Var<T> style;      // [B, style_dim], raw (unnormalized)
  };

  GuidingNetwork() = default;
  GuidingNetwork(GuidingConfig cfg, Rng& rng) : cfg_(cfg) {
    if (cfg.num_domains < 1) throw ConfigError("number of domains must be >= 1");
    if (cfg.resolution % 32 != 0) throw ConfigError("guiding network resolution must be a multiple of 32");
    std::int64_t in = 3;
    const auto& layout = guiding_backbone_layout();
    for (std::size_t i = 0; i < layout.size(); ++i) {
      const std::int64_t out = std::int64_t{cfg.channels} * layout[i].first;
      add_conv(params_, layer_name(i), in, out, 3, rng);
      add_batch_norm(params_, layer_name(i) + ".bn", out);
      in = out;
    }
    add_linear(params_, "style_head", in, cfg.style_dim, rng);
    add_linear(params_, "class_head", in, cfg.num_domains, rng);
  }

  // Training mode uses batch statistics and updates the running estimates.
  Output forward(const Var<T>& x, Mode mode, TraceSink sink = nullptr) {
    check_input(x);
    Var<T> h = x;
    const auto& layout = guiding_backbone_layout();
    for (std::size_t i = 0; i < layout.size(); ++i) {
      h = apply_conv(params_, layer_name(i), h, {1, 1});
      h = mode == Mode::train ? apply_batch_norm(params_, layer_name(i) + ".bn", h, Mode::train)
                              : apply_batch_norm_eval(params_, layer_name(i) + ".bn", h);
      h = relu(h);
      if (layout[i].second) h = max_pool2(h);
      trace(sink, layer_name(i), h);
    }
    return heads(h, sink);
  }

  // Evaluation-mode forward; a pure function of parameters and input.
  Output encode(const Var<T>& x, TraceSink sink = nullptr) const {
    check_input(x);
    Var<T> h = x;
    const auto& layout = guiding_backbone_layout();
    for (std::size_t i = 0; i < layout.size(); ++i) {
      h = apply_conv(params_, layer_name(i), h, {1, 1});
      h = relu(apply_batch_norm_eval(params_, layer_name(i) + ".bn", h));
      if (layout[i].second) h = max_pool2(h);
      trace(sink, layer_name(i), h);
    }
    return heads(h, sink);
  }

  Output encode(const ImageBatch& images) const { return encode(Var<T>::constant(nhwc_to_nchw<T>(images))); }

  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }
  const GuidingConfig& config() const { return cfg_; }

 private:
  static std::string layer_name(std::size_t i) { return "backbone." + std::to_string(i); }

  void check_input(const Var<T>& x) const {
    const Shape expected{x.rank() == 4 ? x.dim(0) : -1, 3, cfg_.resolution, cfg_.resolution};
    if (x.shape() != expected)
      throw ConfigError("guiding network expects input " + shape_str(expected) + ", got " + shape_str(x.shape()));
  }

  Output heads(const Var<T>& h, TraceSink sink) const {
    auto pooled = mean_to(h, Shape{h.dim(0), h.dim(1), 1, 1});
    auto feat = reshape(pooled, Shape{h.dim(0), h.dim(1)});
    trace(sink, "gap", feat);
    Output out;
    out.style = apply_linear(params_, "style_head", feat);
    out.logits = apply_linear(params_, "class_head", feat);
    out.posterior = softmax_rows(out.logits);
    trace(sink, "style_head", out.style);
    trace(sink, "class_head", out.logits);
    return out;
  }

  GuidingConfig cfg_;
  ParamStore<T> params_;
};

// Index of the largest entry; ties resolve to the lowest index.
template <typename T>
int pseudo_label(std::span<const T> posterior) {
  int best = 0;
  for (std::size_t i = 1; i < posterior.size(); ++i)
    if (posterior[i] > posterior[best]) best = static_cast<int>(i);
  return best;
}

template <typename T>
std::vector<int> pseudo_labels(const Tensor<T>& posterior) {
  const auto B = posterior.dim(0), K = posterior.dim(1);
  std::vector<int> labels(B);
  for (std::int64_t b = 0; b < B; ++b)
    labels[b] = pseudo_label(std::span<const T>(posterior.data() + b * K, static_cast<std::size_t>(K)));
  return labels;
}

template <typename T>
struct MutualInformation {
  Var<T> loss;      // -I(P)
  Tensor<T> joint;  // symmetrized, normalized K x K joint assignment matrix
  T information() const { return -loss.item(); }
};

// Mutual information between the cluster assignments of two aligned views,
// estimated on the minibatch. Returns -I so it can be minimized.
template <typename T>
MutualInformation<T> mutual_information_loss(const Var<T>& p, const Var<T>& p_plus, T floor = T(1e-8)) {
  if (p.rank() != 2 || p.shape() != p_plus.shape())
    throw ShapeError("mutual_information_loss needs two [B,K] batches, got " + shape_str(p.shape()) + " and " +
                     shape_str(p_plus.shape()));
  const auto B = p.dim(0), K = p.dim(1);
  if (B == 0) throw std::invalid_argument("mutual_information_loss: empty batch");
  auto joint = mul_scalar(matmul(p, p_plus, true, false), T(1) / static_cast<T>(B));
  joint = mul_scalar(add(joint, transpose(joint)), T(0.5));
  joint = div(joint, sum_all(joint));
  auto pi = sum_to(joint, Shape{K, 1});
  auto pj = sum_to(joint, Shape{1, K});
  auto log_ratio = sub(sub(log(clamp_min(joint, floor)), log(clamp_min(pi, floor))), log(clamp_min(pj, floor)));
  auto info = sum_all(mul(joint, log_ratio));
  return {neg(info), joint.value()};
}

// (N+1)-way contrastive loss: queries against one positive key each and a
// shared bank of negatives. Keys and negatives are treated as constants.
// Queries and keys are expected unit-normalized.
template <typename T>
Var<T> contrastive_loss(const Var<T>& query, const Tensor<T>& positive, const Tensor<T>& negatives, T temperature) {
  if (query.rank() != 2 || positive.shape() != query.shape())
    throw ShapeError("contrastive loss: query " + shape_str(query.shape()) + " vs positive " +
                     shape_str(positive.shape()));
  const auto B = query.dim(0), D = query.dim(1);
  if (B == 0) throw std::invalid_argument("contrastive loss: no positive pairs");
  if (temperature <= T(0)) throw std::invalid_argument("contrastive loss: temperature must be positive");
  const auto N = negatives.size() == 0 ? 0 : negatives.dim(0);
  if (N > 0 && (negatives.rank() != 2 || negatives.dim(1) != D))
    throw ShapeError("contrastive loss: negatives " + shape_str(negatives.shape()) + " vs dim " + std::to_string(D));

  const T inv_tau = T(1) / temperature;
  auto pos = mul_scalar(sum_to(mul(query, Var<T>::constant(positive)), Shape{B, 1}), inv_tau);
  if (N == 0) return mean_all(sub(pos, pos));
  auto neg_logits = mul_scalar(matmul(query, Var<T>::constant(negatives), false, true), inv_tau);

  Tensor<T> row_max({B, 1});
  for (std::int64_t b = 0; b < B; ++b) {
    T m = pos.value()[b];
    for (std::int64_t n = 0; n < N; ++n) m = std::max(m, neg_logits.value()[b * N + n]);
    row_max[b] = m;
  }
  auto shift = Var<T>::constant(std::move(row_max));
  auto denom = add(exp(sub(pos, shift)), sum_to(exp(sub(neg_logits, shift)), Shape{B, 1}));
  auto lse = add(log(denom), shift);
  return mean_all(sub(lse, pos));
}

// Style contrastive objective for the guiding network: query s from the
// gradient-carrying encoder, positive from the momentum encoder on the
// augmented view.
template <typename T>
Var<T> style_contrastive_loss(const Var<T>& s, const Tensor<T>& s_plus, const Tensor<T>& negatives, T temperature) {
  return contrastive_loss(s, s_plus, negatives, temperature);
}

struct QueueConfig {
  std::size_t capacity = 1024;
  double momentum = 0.999;
  double temperature = 0.07;
};

// FIFO bank of unit-normalized style codes plus the momentum (key) copy of the
// guiding network that produces them.
template <typename T>
class StyleQueue {
 public:
  StyleQueue() = default;
  StyleQueue(QueueConfig cfg, const GuidingNetwork<T>& query) : cfg_(cfg), key_(query) {
    if (cfg.momentum < 0.0 || cfg.momentum > 1.0) throw ConfigError("queue momentum must lie in [0,1]");
    if (cfg.temperature <= 0.0) throw ConfigError("temperature must be positive");
  }

  // Appends codes [b, D] as the newest entries and evicts the oldest beyond capacity.
  void push(const Tensor<T>& codes) {
    if (codes.size() == 0) return;
    if (codes.rank() != 2) throw ShapeError("queue push expects [b,D], got " + shape_str(codes.shape()));
    if (dim_ == 0) dim_ = codes.dim(1);
    if (codes.dim(1) != dim_) throw ShapeError("queue code dim mismatch");
    data_.insert(data_.end(), codes.data(), codes.data() + codes.size());
    const auto rows = static_cast<std::int64_t>(data_.size()) / dim_;
    const auto excess = rows - static_cast<std::int64_t>(cfg_.capacity);
    if (excess > 0) data_.erase(data_.begin(), data_.begin() + excess * dim_);
  }

  // Negatives, oldest first: [size, D].
  Tensor<T> negatives() const {
    if (data_.empty()) return Tensor<T>(Shape{0, dim_});
    return Tensor<T>({size(), dim_}, data_);
  }

  void restore(const Tensor<T>& contents) {
    data_.clear();
    dim_ = contents.rank() == 2 ? contents.dim(1) : 0;
    push(contents);
  }

  // key <- m * key + (1 - m) * query, parameters only.
  void momentum_update(const GuidingNetwork<T>& query) {
    blend_into(key_.params(), query.params(), cfg_.momentum, false);
  }

  std::int64_t size() const { return dim_ == 0 ? 0 : static_cast<std::int64_t>(data_.size()) / dim_; }
  std::size_t capacity() const { return cfg_.capacity; }
  const QueueConfig& config() const { return cfg_; }
  T temperature() const { return static_cast<T>(cfg_.temperature); }
  GuidingNetwork<T>& key_encoder() { return key_; }
  const GuidingNetwork<T>& key_encoder() const { return key_; }

 private:
  QueueConfig cfg_;
  GuidingNetwork<T> key_;
  std::vector<T> data_;
  std::int64_t dim_ = 0;
};

}  // namespace unitrans
