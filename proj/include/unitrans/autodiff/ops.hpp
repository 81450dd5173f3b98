#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include <Eigen/Core>

#include "unitrans/autodiff/tensor.hpp"
#include "unitrans/autodiff/variable.hpp"

// Differentiable primitives. Every backward rule is written with these same
// primitives, so gradients can be differentiated again (needed by R1).

namespace unitrans {

namespace detail {

inline Shape pad_to_rank(const Shape& s, std::size_t rank) {
  Shape out(rank - s.size(), 1);
  out.insert(out.end(), s.begin(), s.end());
  return out;
}

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape pa = pad_to_rank(a, r), pb = pad_to_rank(b, r), out(r);
  for (std::size_t i = 0; i < r; ++i) {
    if (pa[i] == pb[i] || pb[i] == 1)
      out[i] = pa[i];
    else if (pa[i] == 1)
      out[i] = pb[i];
    else
      throw ShapeError("shapes " + shape_str(a) + " and " + shape_str(b) + " do not broadcast");
  }
  return out;
}

// Strides that read `operand` while walking `out`; broadcast axes get stride 0.
inline Shape broadcast_strides(const Shape& operand, const Shape& out) {
  Shape padded = pad_to_rank(operand, out.size());
  Shape strides = contiguous_strides(padded);
  for (std::size_t i = 0; i < out.size(); ++i)
    if (padded[i] == 1 && out[i] != 1) strides[i] = 0;
  return strides;
}

// Calls f(out_offset, a_offset, b_offset) for every element of `out` in
// row-major order.
template <typename F>
void for_each_offset(const Shape& out, const Shape& sa, const Shape& sb, F&& f) {
  if (numel(out) == 0) return;
  const std::size_t r = out.size();
  if (r == 0) {
    f(0, 0, 0);
    return;
  }
  std::vector<std::int64_t> idx(r, 0);
  std::int64_t o = 0, a = 0, b = 0;
  const std::int64_t inner = out[r - 1], ia = sa[r - 1], ib = sb[r - 1];
  while (true) {
    for (std::int64_t i = 0; i < inner; ++i) f(o++, a + i * ia, b + i * ib);
    std::int64_t d = static_cast<std::int64_t>(r) - 2;
    for (; d >= 0; --d) {
      ++idx[d];
      a += sa[d];
      b += sb[d];
      if (idx[d] < out[d]) break;
      a -= sa[d] * out[d];
      b -= sb[d] * out[d];
      idx[d] = 0;
    }
    if (d < 0) return;
  }
}

template <typename T, typename F>
Tensor<T> broadcast_apply(const Tensor<T>& a, const Tensor<T>& b, F&& f) {
  if (a.shape() == b.shape()) {
    Tensor<T> out(a.shape());
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    for (std::int64_t i = 0; i < out.size(); ++i) po[i] = f(pa[i], pb[i]);
    return out;
  }
  Shape shape = broadcast_shape(a.shape(), b.shape());
  Tensor<T> out(shape);
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  for_each_offset(shape, broadcast_strides(a.shape(), shape), broadcast_strides(b.shape(), shape),
                  [&](std::int64_t o, std::int64_t ia, std::int64_t ib) { po[o] = f(pa[ia], pb[ib]); });
  return out;
}

template <typename T, typename F>
Tensor<T> map(const Tensor<T>& x, F&& f) {
  Tensor<T> out(x.shape());
  const T* px = x.data();
  T* po = out.data();
  for (std::int64_t i = 0; i < x.size(); ++i) po[i] = f(px[i]);
  return out;
}

template <typename T>
Tensor<T> reduce_to(const Tensor<T>& x, const Shape& target) {
  Shape padded = pad_to_rank(target, x.rank());
  for (std::size_t i = 0; i < padded.size(); ++i)
    if (padded[i] != 1 && padded[i] != x.dim(i))
      throw ShapeError("cannot reduce " + shape_str(x.shape()) + " to " + shape_str(target));
  Tensor<T> out(target);
  Shape so = broadcast_strides(padded, x.shape());
  Shape sx = contiguous_strides(x.shape());
  const T* px = x.data();
  T* po = out.data();
  for_each_offset(x.shape(), sx, so, [&](std::int64_t, std::int64_t ix, std::int64_t io) { po[io] += px[ix]; });
  return out;
}

template <typename T>
Tensor<T> expand_to(const Tensor<T>& x, const Shape& target) {
  Shape sx = broadcast_strides(x.shape(), target);
  Tensor<T> out(target);
  const T* px = x.data();
  T* po = out.data();
  for_each_offset(target, sx, sx, [&](std::int64_t o, std::int64_t ix, std::int64_t) { po[o] = px[ix]; });
  return out;
}

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace detail

template <typename T>
Var<T> constant_like(const Var<T>& x, T v) {
  return Var<T>::constant(Tensor<T>(x.shape(), v));
}

template <typename T>
Var<T> sum_to(const Var<T>& x, const Shape& shape);
template <typename T>
Var<T> broadcast_to(const Var<T>& x, const Shape& shape);
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> neg(const Var<T>& x);
template <typename T>
Var<T> div(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> sum_to(const Var<T>& x, const Shape& shape) {
  if (x.shape() == shape) return x;
  Shape in_shape = x.shape();
  return make_op<T>(
      detail::reduce_to(x.value(), shape), {x},
      [in_shape](const Var<T>& g, const std::vector<bool>&) { return std::vector<Var<T>>{broadcast_to(g, in_shape)}; },
      "sum_to");
}

template <typename T>
Var<T> broadcast_to(const Var<T>& x, const Shape& shape) {
  if (x.shape() == shape) return x;
  Shape in_shape = x.shape();
  return make_op<T>(
      detail::expand_to(x.value(), shape), {x},
      [in_shape](const Var<T>& g, const std::vector<bool>&) { return std::vector<Var<T>>{sum_to(g, in_shape)}; },
      "broadcast_to");
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  Shape sa = a.shape(), sb = b.shape();
  return make_op<T>(
      detail::broadcast_apply(a.value(), b.value(), [](T x, T y) { return x + y; }), {a, b},
      [sa, sb](const Var<T>& g, const std::vector<bool>& need) {
        std::vector<Var<T>> out(2);
        if (need[0]) out[0] = sum_to(g, sa);
        if (need[1]) out[1] = sum_to(g, sb);
        return out;
      },
      "add");
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  Shape sa = a.shape(), sb = b.shape();
  return make_op<T>(
      detail::broadcast_apply(a.value(), b.value(), [](T x, T y) { return x - y; }), {a, b},
      [sa, sb](const Var<T>& g, const std::vector<bool>& need) {
        std::vector<Var<T>> out(2);
        if (need[0]) out[0] = sum_to(g, sa);
        if (need[1]) out[1] = sum_to(neg(g), sb);
        return out;
      },
      "sub");
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  return make_op<T>(
      detail::broadcast_apply(a.value(), b.value(), [](T x, T y) { return x * y; }), {a, b},
      [a, b](const Var<T>& g, const std::vector<bool>& need) {
        std::vector<Var<T>> out(2);
        if (need[0]) out[0] = sum_to(mul(g, b), a.shape());
        if (need[1]) out[1] = sum_to(mul(g, a), b.shape());
        return out;
      },
      "mul");
}

template <typename T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
  return make_op<T>(
      detail::broadcast_apply(a.value(), b.value(), [](T x, T y) { return x / y; }), {a, b},
      [a, b](const Var<T>& g, const std::vector<bool>& need) {
        std::vector<Var<T>> out(2);
        if (need[0]) out[0] = sum_to(div(g, b), a.shape());
        if (need[1]) out[1] = sum_to(neg(div(mul(g, a), mul(b, b))), b.shape());
        return out;
      },
      "div");
}

// Elementwise maximum; at ties the gradient goes to `a`.
template <typename T>
Var<T> maximum(const Var<T>& a, const Var<T>& b) {
  Tensor<T> mask = detail::broadcast_apply(a.value(), b.value(), [](T x, T y) { return x >= y ? T(1) : T(0); });
  Tensor<T> value = detail::broadcast_apply(a.value(), b.value(), [](T x, T y) { return x >= y ? x : y; });
  Shape sa = a.shape(), sb = b.shape();
  auto keep = Var<T>::constant(mask);
  auto drop = Var<T>::constant(detail::map(mask, [](T m) { return T(1) - m; }));
  return make_op<T>(
      std::move(value), {a, b},
      [sa, sb, keep, drop](const Var<T>& g, const std::vector<bool>& need) {
        std::vector<Var<T>> out(2);
        if (need[0]) out[0] = sum_to(mul(g, keep), sa);
        if (need[1]) out[1] = sum_to(mul(g, drop), sb);
        return out;
      },
      "maximum");
}

template <typename T>
Var<T> neg(const Var<T>& x) {
  return make_op<T>(
      detail::map(x.value(), [](T v) { return -v; }), {x},
      [](const Var<T>& g, const std::vector<bool>&) { return std::vector<Var<T>>{neg(g)}; }, "neg");
}

template <typename T>
Var<T> mul_scalar(const Var<T>& x, T c) {
  return make_op<T>(
      detail::map(x.value(), [c](T v) { return v * c; }), {x},
      [c](const Var<T>& g, const std::vector<bool>&) { return std::vector<Var<T>>{mul_scalar(g, c)}; },
      "mul_scalar");
}

template <typename T>
Var<T> add_scalar(const Var<T>& x, T c) {
  return make_op<T>(
      detail::map(x.value(), [c](T v) { return v + c; }), {x},
      [](const Var<T>& g, const std::vector<bool>&) { return std::vector<Var<T>>{g}; }, "add_scalar");
}

template <typename T>
Var<T> exp(const Var<T>& x) {
  return make_op<T>(
      detail::map(x.value(), [](T v) { return std::exp(v); }), {x},
      [x](const Var<T>& g, const std::vector<bool>&) { return std::vector<Var<T>>{mul(g, exp(x))}; }, "exp");
}

template <typename T>
Var<T> log(const Var<T>& x) {
  return make_op<T>(
      detail::map(x.value(), [](T v) { return std::log(v); }), {x},
      [x](const Var<T>& g, const std::vector<bool>&) { return std::vector<Var<T>>{div(g, x)}; }, "log");
}

template <typename T>
Var<T> pow_scalar(const Var<T>& x, T p) {
  return make_op<T>(
      detail::map(x.value(), [p](T v) { return std::pow(v, p); }), {x},
      [x, p](const Var<T>& g, const std::vector<bool>&) {
        return std::vector<Var<T>>{mul(g, mul_scalar(pow_scalar(x, p - T(1)), p))};
      },
      "pow");
}

template <typename T>
Var<T> tanh(const Var<T>& x) {
  return make_op<T>(
      detail::map(x.value(), [](T v) { return std::tanh(v); }), {x},
      [x](const Var<T>& g, const std::vector<bool>&) {
        auto t = tanh(x);
        return std::vector<Var<T>>{mul(g, add_scalar(neg(mul(t, t)), T(1)))};
      },
      "tanh");
}

// Piecewise-linear unary op with a constant slope mask (relu, leaky relu, abs).
template <typename T>
Var<T> apply_slope(const Var<T>& x, Tensor<T> slope, const char* name) {
  Tensor<T> value(x.shape());
  for (std::int64_t i = 0; i < value.size(); ++i) value[i] = x.value()[i] * slope[i];
  auto mask = Var<T>::constant(std::move(slope));
  return make_op<T>(
      std::move(value), {x}, [mask](const Var<T>& g, const std::vector<bool>&) { return std::vector<Var<T>>{mul(g, mask)}; },
      name);
}

template <typename T>
Var<T> leaky_relu(const Var<T>& x, T negative_slope) {
  return apply_slope(x, detail::map(x.value(), [negative_slope](T v) { return v > T(0) ? T(1) : negative_slope; }),
                     "leaky_relu");
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  return leaky_relu(x, T(0));
}

template <typename T>
Var<T> abs(const Var<T>& x) {
  return apply_slope(x, detail::map(x.value(), [](T v) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); }), "abs");
}

// max(x, c) for a constant c; the gradient passes where x >= c.
template <typename T>
Var<T> clamp_min(const Var<T>& x, T c) {
  auto mask = Var<T>::constant(detail::map(x.value(), [c](T v) { return v >= c ? T(1) : T(0); }));
  return make_op<T>(
      detail::map(x.value(), [c](T v) { return v >= c ? v : c; }), {x},
      [mask](const Var<T>& g, const std::vector<bool>&) { return std::vector<Var<T>>{mul(g, mask)}; }, "clamp_min");
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  if (x.shape() == shape) return x;
  Shape in_shape = x.shape();
  return make_op<T>(
      x.value().reshaped(std::move(shape)), {x},
      [in_shape](const Var<T>& g, const std::vector<bool>&) { return std::vector<Var<T>>{reshape(g, in_shape)}; },
      "reshape");
}

template <typename T>
Var<T> transpose(const Var<T>& x) {
  if (x.rank() != 2) throw ShapeError("transpose expects a matrix, got " + shape_str(x.shape()));
  const auto r = x.dim(0), c = x.dim(1);
  Tensor<T> out({c, r});
  for (std::int64_t i = 0; i < r; ++i)
    for (std::int64_t j = 0; j < c; ++j) out[j * r + i] = x.value()[i * c + j];
  return make_op<T>(
      std::move(out), {x}, [](const Var<T>& g, const std::vector<bool>&) { return std::vector<Var<T>>{transpose(g)}; },
      "transpose");
}

// op(a) * op(b) where op transposes when the flag is set.
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b, bool ta = false, bool tb = false) {
  if (a.rank() != 2 || b.rank() != 2)
    throw ShapeError("matmul expects matrices, got " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  using M = detail::RowMatrix<T>;
  Eigen::Map<const M> A(a.value().data(), a.dim(0), a.dim(1));
  Eigen::Map<const M> B(b.value().data(), b.dim(0), b.dim(1));
  const auto m = ta ? a.dim(1) : a.dim(0);
  const auto k = ta ? a.dim(0) : a.dim(1);
  const auto kb = tb ? b.dim(1) : b.dim(0);
  const auto n = tb ? b.dim(0) : b.dim(1);
  if (k != kb) throw ShapeError("matmul inner dims differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Tensor<T> out({m, n});
  Eigen::Map<M> C(out.data(), m, n);
  if (!ta && !tb)
    C.noalias() = A * B;
  else if (ta && !tb)
    C.noalias() = A.transpose() * B;
  else if (!ta && tb)
    C.noalias() = A * B.transpose();
  else
    C.noalias() = A.transpose() * B.transpose();
  return make_op<T>(
      std::move(out), {a, b},
      [a, b, ta, tb](const Var<T>& g, const std::vector<bool>& need) {
        std::vector<Var<T>> out(2);
        if (need[0]) out[0] = ta ? matmul(b, g, tb, true) : matmul(g, b, false, !tb);
        if (need[1]) out[1] = tb ? matmul(g, a, true, ta) : matmul(a, g, !ta, false);
        return out;
      },
      "matmul");
}

using IndexList = std::shared_ptr<const std::vector<std::int64_t>>;

template <typename T>
Var<T> scatter_add(const Var<T>& src, IndexList index, const Shape& out_shape);

// out[i] = x.flat[index[i]]
template <typename T>
Var<T> gather(const Var<T>& x, IndexList index, const Shape& out_shape) {
  if (static_cast<std::int64_t>(index->size()) != numel(out_shape))
    throw ShapeError("gather index count does not match output " + shape_str(out_shape));
  Tensor<T> out(out_shape);
  for (std::size_t i = 0; i < index->size(); ++i) {
    auto j = (*index)[i];
    if (j < 0 || j >= x.size()) throw ShapeError("gather index out of range");
    out[static_cast<std::int64_t>(i)] = x.value()[j];
  }
  Shape in_shape = x.shape();
  return make_op<T>(
      std::move(out), {x},
      [index, in_shape](const Var<T>& g, const std::vector<bool>&) {
        return std::vector<Var<T>>{scatter_add(g, index, in_shape)};
      },
      "gather");
}

// out.flat[index[i]] += src[i]; adjoint of gather.
template <typename T>
Var<T> scatter_add(const Var<T>& src, IndexList index, const Shape& out_shape) {
  Tensor<T> out(out_shape);
  for (std::size_t i = 0; i < index->size(); ++i) out[(*index)[i]] += src.value()[static_cast<std::int64_t>(i)];
  Shape src_shape = src.shape();
  return make_op<T>(
      std::move(out), {src},
      [index, src_shape](const Var<T>& g, const std::vector<bool>&) {
        return std::vector<Var<T>>{gather(g, index, src_shape)};
      },
      "scatter_add");
}

template <typename T>
Var<T> upsample2(const Var<T>& x);

// 2x2 window sum with stride 2 over the trailing two axes of an NCHW tensor.
template <typename T>
Var<T> sum_pool2(const Var<T>& x) {
  if (x.rank() != 4 || x.dim(2) % 2 || x.dim(3) % 2)
    throw ShapeError("sum_pool2 expects NCHW with even H, W; got " + shape_str(x.shape()));
  const auto planes = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3), h = H / 2, w = W / 2;
  Tensor<T> out({x.dim(0), x.dim(1), h, w});
  const T* px = x.value().data();
  T* po = out.data();
  for (std::int64_t p = 0; p < planes; ++p) {
    const T* src = px + p * H * W;
    T* dst = po + p * h * w;
    for (std::int64_t i = 0; i < h; ++i)
      for (std::int64_t j = 0; j < w; ++j) {
        const T* s = src + 2 * i * W + 2 * j;
        dst[i * w + j] = s[0] + s[1] + s[W] + s[W + 1];
      }
  }
  return make_op<T>(
      std::move(out), {x}, [](const Var<T>& g, const std::vector<bool>&) { return std::vector<Var<T>>{upsample2(g)}; },
      "sum_pool2");
}

// Nearest-neighbour 2x upsampling; adjoint of sum_pool2.
template <typename T>
Var<T> upsample2(const Var<T>& x) {
  if (x.rank() != 4) throw ShapeError("upsample2 expects NCHW, got " + shape_str(x.shape()));
  const auto planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3), H = 2 * h, W = 2 * w;
  Tensor<T> out({x.dim(0), x.dim(1), H, W});
  const T* px = x.value().data();
  T* po = out.data();
  for (std::int64_t p = 0; p < planes; ++p) {
    const T* src = px + p * h * w;
    T* dst = po + p * H * W;
    for (std::int64_t i = 0; i < H; ++i)
      for (std::int64_t j = 0; j < W; ++j) dst[i * W + j] = src[(i / 2) * w + j / 2];
  }
  return make_op<T>(
      std::move(out), {x}, [](const Var<T>& g, const std::vector<bool>&) { return std::vector<Var<T>>{sum_pool2(g)}; },
      "upsample2");
}

}  // namespace unitrans
