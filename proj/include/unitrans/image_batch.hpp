#pragma once

#include <vector>

#include "unitrans/autodiff/variable.hpp"

namespace unitrans {

// Channel-last RGB images in [-1, 1]: [B, H, W, 3]. Networks work on NCHW;
// these helpers convert at the boundary.
using ImageBatch = Tensor<float>;

inline void check_image_batch(const ImageBatch& batch) {
  if (batch.rank() != 4 || batch.dim(3) != 3)
    throw ShapeError("image batch must be [B,H,W,3], got " + shape_str(batch.shape()));
}

template <typename T>
Tensor<T> nhwc_to_nchw(const ImageBatch& batch) {
  check_image_batch(batch);
  const auto B = batch.dim(0), H = batch.dim(1), W = batch.dim(2);
  Tensor<T> out({B, 3, H, W});
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t y = 0; y < H; ++y)
      for (std::int64_t x = 0; x < W; ++x)
        for (std::int64_t c = 0; c < 3; ++c)
          out[((b * 3 + c) * H + y) * W + x] = static_cast<T>(batch[((b * H + y) * W + x) * 3 + c]);
  return out;
}

template <typename T>
ImageBatch nchw_to_nhwc(const Tensor<T>& t) {
  if (t.rank() != 4 || t.dim(1) != 3) throw ShapeError("expected [B,3,H,W], got " + shape_str(t.shape()));
  const auto B = t.dim(0), H = t.dim(2), W = t.dim(3);
  ImageBatch out({B, H, W, 3});
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t c = 0; c < 3; ++c)
      for (std::int64_t y = 0; y < H; ++y)
        for (std::int64_t x = 0; x < W; ++x)
          out[((b * H + y) * W + x) * 3 + c] = static_cast<float>(t[((b * 3 + c) * H + y) * W + x]);
  return out;
}

// Stacks single [H,W,3] images into a batch.
inline ImageBatch stack_images(const std::vector<const Tensor<float>*>& images) {
  if (images.empty()) throw ShapeError("cannot stack an empty image list");
  const Shape s = images.front()->shape();
  Shape shape{static_cast<std::int64_t>(images.size())};
  shape.insert(shape.end(), s.begin(), s.end());
  ImageBatch out(shape);
  const auto n = images.front()->size();
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i]->shape() != s) throw ShapeError("cannot stack images of different shapes");
    std::copy(images[i]->data(), images[i]->data() + n, out.data() + static_cast<std::int64_t>(i) * n);
  }
  return out;
}

inline Tensor<float> image_at(const ImageBatch& batch, std::int64_t i) {
  const auto n = batch.size() / batch.dim(0);
  Shape s(batch.shape().begin() + 1, batch.shape().end());
  return Tensor<float>(s, std::vector<float>(batch.data() + i * n, batch.data() + (i + 1) * n));
}

}  // namespace unitrans
