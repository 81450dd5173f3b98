#pragma once

#include <cstring>
#include <vector>

#include "unitrans/autodiff/ops.hpp"

namespace unitrans {

struct ConvGeometry {
  std::int64_t stride = 1;
  std::int64_t pad = 0;
};

namespace detail {

struct ConvDims {
  std::int64_t N, C, H, W, O, KH, KW, Ho, Wo, stride, pad;
  std::int64_t rows() const { return C * KH * KW; }
  std::int64_t cols() const { return Ho * Wo; }
  bool pointwise() const { return KH == 1 && KW == 1 && stride == 1 && pad == 0; }
};

inline ConvDims conv_dims(const Shape& x, const Shape& w, ConvGeometry g) {
  if (x.size() != 4 || w.size() != 4)
    throw ShapeError("conv2d expects NCHW input and OIHW weights, got " + shape_str(x) + " and " + shape_str(w));
  if (x[1] != w[1])
    throw ShapeError("conv2d channel mismatch: input " + shape_str(x) + " weights " + shape_str(w));
  ConvDims d{x[0], x[1], x[2], x[3], w[0], w[2], w[3], 0, 0, g.stride, g.pad};
  d.Ho = (d.H + 2 * d.pad - d.KH) / d.stride + 1;
  d.Wo = (d.W + 2 * d.pad - d.KW) / d.stride + 1;
  if (d.Ho <= 0 || d.Wo <= 0) throw ShapeError("conv2d kernel larger than padded input " + shape_str(x));
  return d;
}

template <typename T>
void im2col(const T* x, const ConvDims& d, T* cols) {
  const std::int64_t P = d.cols();
  for (std::int64_t c = 0; c < d.C; ++c)
    for (std::int64_t ki = 0; ki < d.KH; ++ki)
      for (std::int64_t kj = 0; kj < d.KW; ++kj) {
        T* row = cols + ((c * d.KH + ki) * d.KW + kj) * P;
        const T* plane = x + c * d.H * d.W;
        for (std::int64_t oh = 0; oh < d.Ho; ++oh) {
          const std::int64_t ih = oh * d.stride - d.pad + ki;
          T* dst = row + oh * d.Wo;
          if (ih < 0 || ih >= d.H) {
            std::fill(dst, dst + d.Wo, T(0));
            continue;
          }
          const T* src = plane + ih * d.W;
          for (std::int64_t ow = 0; ow < d.Wo; ++ow) {
            const std::int64_t iw = ow * d.stride - d.pad + kj;
            dst[ow] = (iw >= 0 && iw < d.W) ? src[iw] : T(0);
          }
        }
      }
}

template <typename T>
void col2im(const T* cols, const ConvDims& d, T* x) {
  const std::int64_t P = d.cols();
  for (std::int64_t c = 0; c < d.C; ++c)
    for (std::int64_t ki = 0; ki < d.KH; ++ki)
      for (std::int64_t kj = 0; kj < d.KW; ++kj) {
        const T* row = cols + ((c * d.KH + ki) * d.KW + kj) * P;
        T* plane = x + c * d.H * d.W;
        for (std::int64_t oh = 0; oh < d.Ho; ++oh) {
          const std::int64_t ih = oh * d.stride - d.pad + ki;
          if (ih < 0 || ih >= d.H) continue;
          const T* src = row + oh * d.Wo;
          T* dst = plane + ih * d.W;
          for (std::int64_t ow = 0; ow < d.Wo; ++ow) {
            const std::int64_t iw = ow * d.stride - d.pad + kj;
            if (iw >= 0 && iw < d.W) dst[iw] += src[ow];
          }
        }
      }
}

template <typename T>
Tensor<T> conv_forward(const Tensor<T>& x, const Tensor<T>& w, const ConvDims& d) {
  using M = RowMatrix<T>;
  Tensor<T> y({d.N, d.O, d.Ho, d.Wo});
  Eigen::Map<const M> W(w.data(), d.O, d.rows());
  std::vector<T> cols(d.pointwise() ? 0 : d.rows() * d.cols());
  for (std::int64_t n = 0; n < d.N; ++n) {
    const T* xn = x.data() + n * d.C * d.H * d.W;
    const T* cp = xn;
    if (!d.pointwise()) {
      im2col(xn, d, cols.data());
      cp = cols.data();
    }
    Eigen::Map<const M> Cm(cp, d.rows(), d.cols());
    Eigen::Map<M> Y(y.data() + n * d.O * d.cols(), d.O, d.cols());
    Y.noalias() = W * Cm;
  }
  return y;
}

template <typename T>
Tensor<T> conv_input_backward(const Tensor<T>& g, const Tensor<T>& w, const ConvDims& d) {
  using M = RowMatrix<T>;
  Tensor<T> dx({d.N, d.C, d.H, d.W});
  Eigen::Map<const M> W(w.data(), d.O, d.rows());
  M cols(d.rows(), d.cols());
  for (std::int64_t n = 0; n < d.N; ++n) {
    Eigen::Map<const M> G(g.data() + n * d.O * d.cols(), d.O, d.cols());
    T* dxn = dx.data() + n * d.C * d.H * d.W;
    if (d.pointwise()) {
      Eigen::Map<M>(dxn, d.rows(), d.cols()).noalias() = W.transpose() * G;
    } else {
      cols.noalias() = W.transpose() * G;
      col2im(cols.data(), d, dxn);
    }
  }
  return dx;
}

template <typename T>
Tensor<T> conv_weight_backward(const Tensor<T>& x, const Tensor<T>& g, const ConvDims& d) {
  using M = RowMatrix<T>;
  Tensor<T> dw({d.O, d.C, d.KH, d.KW});
  Eigen::Map<M> DW(dw.data(), d.O, d.rows());
  std::vector<T> cols(d.pointwise() ? 0 : d.rows() * d.cols());
  for (std::int64_t n = 0; n < d.N; ++n) {
    const T* xn = x.data() + n * d.C * d.H * d.W;
    const T* cp = xn;
    if (!d.pointwise()) {
      im2col(xn, d, cols.data());
      cp = cols.data();
    }
    Eigen::Map<const M> Cm(cp, d.rows(), d.cols());
    Eigen::Map<const M> G(g.data() + n * d.O * d.cols(), d.O, d.cols());
    DW.noalias() += G * Cm.transpose();
  }
  return dw;
}

}  // namespace detail

template <typename T>
Var<T> conv2d_input_grad(const Var<T>& g, const Var<T>& w, const Shape& x_shape, ConvGeometry geom);
template <typename T>
Var<T> conv2d_weight_grad(const Var<T>& x, const Var<T>& g, const Shape& w_shape, ConvGeometry geom);

// Cross-correlation of NCHW input x with OIHW weights w, zero padding.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, ConvGeometry geom = {}) {
  auto d = detail::conv_dims(x.shape(), w.shape(), geom);
  return make_op<T>(
      detail::conv_forward(x.value(), w.value(), d), {x, w},
      [x, w, geom](const Var<T>& g, const std::vector<bool>& need) {
        std::vector<Var<T>> out(2);
        if (need[0]) out[0] = conv2d_input_grad(g, w, x.shape(), geom);
        if (need[1]) out[1] = conv2d_weight_grad(x, g, w.shape(), geom);
        return out;
      },
      "conv2d");
}

// Gradient of <g, conv2d(x, w)> with respect to x; linear in g and w.
template <typename T>
Var<T> conv2d_input_grad(const Var<T>& g, const Var<T>& w, const Shape& x_shape, ConvGeometry geom) {
  auto d = detail::conv_dims(x_shape, w.shape(), geom);
  return make_op<T>(
      detail::conv_input_backward(g.value(), w.value(), d), {g, w},
      [g, w, geom](const Var<T>& gg, const std::vector<bool>& need) {
        std::vector<Var<T>> out(2);
        if (need[0]) out[0] = conv2d(gg, w, geom);
        if (need[1]) out[1] = conv2d_weight_grad(gg, g, w.shape(), geom);
        return out;
      },
      "conv2d_input_grad");
}

// Gradient of <g, conv2d(x, w)> with respect to w; linear in x and g.
template <typename T>
Var<T> conv2d_weight_grad(const Var<T>& x, const Var<T>& g, const Shape& w_shape, ConvGeometry geom) {
  auto d = detail::conv_dims(x.shape(), w_shape, geom);
  return make_op<T>(
      detail::conv_weight_backward(x.value(), g.value(), d), {x, g},
      [x, g, geom](const Var<T>& gw, const std::vector<bool>& need) {
        std::vector<Var<T>> out(2);
        if (need[0]) out[0] = conv2d_input_grad(g, gw, x.shape(), geom);
        if (need[1]) out[1] = conv2d(x, gw, geom);
        return out;
      },
      "conv2d_weight_grad");
}

}  // namespace unitrans
