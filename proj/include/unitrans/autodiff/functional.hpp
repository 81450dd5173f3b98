#pragma once

#include <limits>
#include <memory>
#include <vector>

#include "unitrans/autodiff/conv.hpp"
#include "unitrans/autodiff/ops.hpp"

// Composite operations built from the differentiable primitives.

namespace unitrans {

template <typename T>
Var<T> sum_all(const Var<T>& x) {
  return reshape(sum_to(x, Shape(x.rank(), 1)), Shape{});
}

template <typename T>
Var<T> mean_all(const Var<T>& x) {
  return mul_scalar(sum_all(x), T(1) / static_cast<T>(x.size()));
}

// Mean over the axes where `shape` has extent 1 (same rank as x).
template <typename T>
Var<T> mean_to(const Var<T>& x, const Shape& shape) {
  return mul_scalar(sum_to(x, shape), static_cast<T>(numel(shape)) / static_cast<T>(x.size()));
}

template <typename T>
Var<T> square(const Var<T>& x) {
  return mul(x, x);
}

template <typename T>
Var<T> scalar_var(T v) {
  return Var<T>::constant(Tensor<T>::scalar(v));
}

// 2x2 max pooling, stride 2 (NCHW).
template <typename T>
Var<T> max_pool2(const Var<T>& x) {
  if (x.rank() != 4 || x.dim(2) % 2 || x.dim(3) % 2)
    throw ShapeError("max_pool2 expects NCHW with even H, W; got " + shape_str(x.shape()));
  const auto planes = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3), h = H / 2, w = W / 2;
  auto index = std::make_shared<std::vector<std::int64_t>>(planes * h * w);
  const T* px = x.value().data();
  for (std::int64_t p = 0; p < planes; ++p)
    for (std::int64_t i = 0; i < h; ++i)
      for (std::int64_t j = 0; j < w; ++j) {
        std::int64_t best = p * H * W + 2 * i * W + 2 * j;
        for (std::int64_t di = 0; di < 2; ++di)
          for (std::int64_t dj = 0; dj < 2; ++dj) {
            std::int64_t k = p * H * W + (2 * i + di) * W + 2 * j + dj;
            if (px[k] > px[best]) best = k;
          }
        (*index)[(p * h + i) * w + j] = best;
      }
  return gather(x, IndexList(std::move(index)), Shape{x.dim(0), x.dim(1), h, w});
}

template <typename T>
Var<T> avg_pool2(const Var<T>& x) {
  return mul_scalar(sum_pool2(x), T(0.25));
}

// Row-wise log-softmax of a [B,K] matrix.
template <typename T>
Var<T> log_softmax_rows(const Var<T>& logits) {
  if (logits.rank() != 2) throw ShapeError("log_softmax_rows expects [B,K], got " + shape_str(logits.shape()));
  const auto B = logits.dim(0), K = logits.dim(1);
  Tensor<T> row_max({B, 1});
  for (std::int64_t b = 0; b < B; ++b) {
    T m = -std::numeric_limits<T>::infinity();
    for (std::int64_t k = 0; k < K; ++k) m = std::max(m, logits.value()[b * K + k]);
    row_max[b] = m;
  }
  auto shifted = sub(logits, Var<T>::constant(std::move(row_max)));
  auto lse = log(sum_to(exp(shifted), Shape{B, 1}));
  return sub(shifted, lse);
}

template <typename T>
Var<T> softmax_rows(const Var<T>& logits) {
  return exp(log_softmax_rows(logits));
}

// Divides each row by its L2 norm.
template <typename T>
Var<T> l2_normalize_rows(const Var<T>& x, T eps = T(1e-12)) {
  if (x.rank() != 2) throw ShapeError("l2_normalize_rows expects [B,D], got " + shape_str(x.shape()));
  auto norm2 = sum_to(square(x), Shape{x.dim(0), 1});
  return mul(x, pow_scalar(add_scalar(norm2, eps), T(-0.5)));
}

// Picks logits[b, labels[b]] for each row; gradient reaches only those entries.
template <typename T>
Var<T> take_rows(const Var<T>& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2 || static_cast<std::int64_t>(labels.size()) != logits.dim(0))
    throw ShapeError("take_rows: " + std::to_string(labels.size()) + " labels for logits " + shape_str(logits.shape()));
  const auto K = logits.dim(1);
  auto index = std::make_shared<std::vector<std::int64_t>>(labels.size());
  for (std::size_t b = 0; b < labels.size(); ++b) {
    if (labels[b] < 0 || labels[b] >= K)
      throw std::out_of_range("label " + std::to_string(labels[b]) + " outside [0," + std::to_string(K) + ")");
    (*index)[b] = static_cast<std::int64_t>(b) * K + labels[b];
  }
  return gather(logits, IndexList(std::move(index)), Shape{logits.dim(0)});
}

// Columns [start, start + count) of a [B,M] matrix.
template <typename T>
Var<T> slice_columns(const Var<T>& x, std::int64_t start, std::int64_t count) {
  const auto B = x.dim(0), M = x.dim(1);
  if (start < 0 || start + count > M) throw ShapeError("slice_columns out of range for " + shape_str(x.shape()));
  auto index = std::make_shared<std::vector<std::int64_t>>(B * count);
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t j = 0; j < count; ++j) (*index)[b * count + j] = b * M + start + j;
  return gather(x, IndexList(std::move(index)), Shape{B, count});
}

// Mean negative log-likelihood of integer targets under row-wise softmax.
template <typename T>
Var<T> cross_entropy(const Var<T>& logits, const std::vector<int>& labels) {
  return neg(mean_all(take_rows(log_softmax_rows(logits), labels)));
}

// x [B,in] * w [in,out] + b [out]
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  return add(matmul(x, w), reshape(b, Shape{1, b.size()}));
}

template <typename T>
Var<T> conv2d_bias(const Var<T>& x, const Var<T>& w, const Var<T>& b, ConvGeometry geom) {
  auto y = conv2d(x, w, geom);
  if (!b.defined()) return y;
  return add(y, reshape(b, Shape{1, b.size(), 1, 1}));
}

// Per-sample, per-channel standardization over H and W.
template <typename T>
Var<T> instance_norm(const Var<T>& x, T eps = T(1e-5)) {
  const Shape stat{x.dim(0), x.dim(1), 1, 1};
  auto centered = sub(x, mean_to(x, stat));
  auto var = mean_to(square(centered), stat);
  return mul(centered, pow_scalar(add_scalar(var, eps), T(-0.5)));
}

// Instance normalization followed by per-sample affine modulation; scale and
// shift are [B,C].
template <typename T>
Var<T> adain(const Var<T>& x, const Var<T>& scale, const Var<T>& shift, T eps = T(1e-5)) {
  const Shape stat{x.dim(0), x.dim(1), 1, 1};
  if (scale.shape() != Shape{x.dim(0), x.dim(1)} || shift.shape() != scale.shape())
    throw ShapeError("adain parameters " + shape_str(scale.shape()) + " do not match features " + shape_str(x.shape()));
  return add(mul(instance_norm(x, eps), reshape(scale, stat)), reshape(shift, stat));
}

// Filter response normalization with thresholded linear unit; gamma, beta and
// tau are per-channel.
template <typename T>
Var<T> frn_tlu(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, const Var<T>& tau, T eps = T(1e-6)) {
  const Shape stat{x.dim(0), x.dim(1), 1, 1};
  const Shape chan{1, x.dim(1), 1, 1};
  auto nu2 = mean_to(square(x), stat);
  auto xn = mul(x, pow_scalar(add_scalar(nu2, eps), T(-0.5)));
  auto y = add(mul(xn, reshape(gamma, chan)), reshape(beta, chan));
  return maximum(y, reshape(tau, chan));
}

}  // namespace unitrans
