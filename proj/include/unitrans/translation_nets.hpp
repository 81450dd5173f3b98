#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "unitrans/image_batch.hpp"
#include "unitrans/nn.hpp"

namespace unitrans {

struct GeneratorConfig {
  int channels = 64;
  int style_dim = 128;
  int resolution = 128;
};

// Content encoder (IN), bottleneck of two IN and two AdaIN residual blocks, and
// an AdaIN decoder. A single affine map turns the style code into the
// (scale, shift) pairs of every AdaIN site; scale is 1 + the mapped residual.
template <typename T>
class Generator {
 public:
  struct AdainSite {
    std::string name;
    std::int64_t channels;
    std::int64_t offset;  // into the mapper output; scale then shift
  };

  Generator() = default;
  Generator(GeneratorConfig cfg, Rng& rng) : cfg_(cfg) {
    if (cfg.resolution % 8 != 0) throw ConfigError("generator resolution must be a multiple of 8");
    const std::int64_t ch = cfg.channels;
    add_conv(params_, "enc.conv0", 3, ch, 7, rng);
    add_conv(params_, "enc.down1", ch, 2 * ch, 4, rng);
    add_conv(params_, "enc.down2", 2 * ch, 4 * ch, 4, rng);
    add_conv(params_, "enc.down3", 4 * ch, 8 * ch, 4, rng);
    for (const char* blk : {"res0", "res1", "ares0", "ares1"}) {
      add_conv(params_, std::string(blk) + ".conv1", 8 * ch, 8 * ch, 3, rng);
      add_conv(params_, std::string(blk) + ".conv2", 8 * ch, 8 * ch, 3, rng);
    }
    add_conv(params_, "dec.up1", 8 * ch, 4 * ch, 5, rng);
    add_conv(params_, "dec.up2", 4 * ch, 2 * ch, 5, rng);
    add_conv(params_, "dec.up3", 2 * ch, ch, 5, rng);
    add_conv(params_, "dec.out", ch, 3, 7, rng);

    std::int64_t offset = 0;
    auto site = [&](const std::string& name, std::int64_t c) {
      sites_.push_back({name, c, offset});
      offset += 2 * c;
    };
    site("ares0.conv1", 8 * ch);
    site("ares0.conv2", 8 * ch);
    site("ares1.conv1", 8 * ch);
    site("ares1.conv2", 8 * ch);
    site("dec.up1", 4 * ch);
    site("dec.up2", 2 * ch);
    site("dec.up3", ch);
    add_linear(params_, "style_mapper", cfg.style_dim, offset, rng);
  }

  // x: [B,3,R,R] NCHW; returns content features [B,8ch,R/8,R/8].
  Var<T> encode_content(const Var<T>& x, TraceSink sink = nullptr) const {
    const Shape expected{x.rank() == 4 ? x.dim(0) : -1, 3, cfg_.resolution, cfg_.resolution};
    if (x.shape() != expected)
      throw ShapeError("generator expects input " + shape_str(expected) + ", got " + shape_str(x.shape()));
    auto h = relu(instance_norm(apply_conv(params_, "enc.conv0", x, {1, 3})));
    trace(sink, "enc.conv0", h);
    for (const char* name : {"enc.down1", "enc.down2", "enc.down3"}) {
      h = relu(instance_norm(apply_conv(params_, name, h, {2, 1})));
      trace(sink, name, h);
    }
    for (const char* blk : {"res0", "res1"}) {
      auto r = relu(instance_norm(apply_conv(params_, std::string(blk) + ".conv1", h, {1, 1})));
      r = instance_norm(apply_conv(params_, std::string(blk) + ".conv2", r, {1, 1}));
      h = add(h, r);
      trace(sink, blk, h);
    }
    return h;
  }

  // Decodes content features under the style code s [B, style_dim].
  Var<T> decode(const Var<T>& content, const Var<T>& style, TraceSink sink = nullptr) const {
    if (style.rank() != 2 || style.dim(0) != content.dim(0) || style.dim(1) != cfg_.style_dim)
      throw ShapeError("style batch " + shape_str(style.shape()) + " does not match content " +
                       shape_str(content.shape()));
    auto mapped = apply_linear(params_, "style_mapper", style);
    auto modulate = [&](const Var<T>& h, std::size_t site_index) {
      const auto& s = sites_[site_index];
      auto scale = add_scalar(slice_columns(mapped, s.offset, s.channels), T(1));
      auto shift = slice_columns(mapped, s.offset + s.channels, s.channels);
      return adain(h, scale, shift);
    };
    Var<T> h = content;
    std::size_t site = 0;
    for (const char* blk : {"ares0", "ares1"}) {
      auto r = relu(modulate(apply_conv(params_, std::string(blk) + ".conv1", h, {1, 1}), site++));
      r = modulate(apply_conv(params_, std::string(blk) + ".conv2", r, {1, 1}), site++);
      h = add(h, r);
      trace(sink, blk, h);
    }
    for (const char* name : {"dec.up1", "dec.up2", "dec.up3"}) {
      h = relu(modulate(apply_conv(params_, name, upsample2(h), {1, 2}), site++));
      trace(sink, name, h);
    }
    h = tanh(apply_conv(params_, "dec.out", h, {1, 3}));
    trace(sink, "dec.out", h);
    return h;
  }

  Var<T> forward(const Var<T>& x, const Var<T>& style, TraceSink sink = nullptr) const {
    if (style.rank() != 2 || x.rank() != 4 || style.dim(0) != x.dim(0))
      throw ShapeError("translate: batch of images " + shape_str(x.shape()) + " and styles " +
                       shape_str(style.shape()) + " disagree");
    return decode(encode_content(x, sink), style, sink);
  }

  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }
  const GeneratorConfig& config() const { return cfg_; }
  const std::vector<AdainSite>& adain_sites() const { return sites_; }

 private:
  GeneratorConfig cfg_;
  ParamStore<T> params_;
  std::vector<AdainSite> sites_;
};

// Reference-guided translation of an image batch.
template <typename T>
ImageBatch translate(const Generator<T>& g, const ImageBatch& x, const Tensor<T>& style) {
  check_image_batch(x);
  if (style.rank() != 2 || style.dim(0) != x.dim(0))
    throw ShapeError("translate: " + std::to_string(x.dim(0)) + " images but style batch " + shape_str(style.shape()));
  NoGrad guard;
  auto out = g.forward(Var<T>::constant(nhwc_to_nchw<T>(x)), Var<T>::constant(style));
  return nchw_to_nhwc(out.value());
}

struct DiscriminatorConfig {
  int channels = 64;
  int num_domains = 10;
  int resolution = 128;
  int max_multiplier = 16;
};

// Residual discriminator with filter response normalization, average-pool
// downsampling and one output per domain.
template <typename T>
class Discriminator {
 public:
  struct Block {
    std::string name;
    std::int64_t in, out;
    bool downsample;
  };

  Discriminator() = default;
  Discriminator(DiscriminatorConfig cfg, Rng& rng) : cfg_(cfg) {
    if (cfg.num_domains < 1) throw ConfigError("number of domains must be >= 1");
    int res = cfg.resolution, levels = 0;
    while (res > 4 && res % 2 == 0) {
      res /= 2;
      ++levels;
    }
    if (res != 4 || levels < 1) throw ConfigError("discriminator resolution must be 4 * 2^n with n >= 1");
    const std::int64_t ch = cfg.channels, cap = ch * cfg.max_multiplier;
    add_conv(params_, "stem", 3, ch, 3, rng);
    blocks_.push_back({"block0", ch, ch, false});
    std::int64_t c = ch;
    for (int i = 1; i <= levels; ++i) {
      const std::int64_t next = std::min(c * 2, cap);
      blocks_.push_back({"block" + std::to_string(blocks_.size()), c, next, true});
      c = next;
      if (i < levels) blocks_.push_back({"block" + std::to_string(blocks_.size()), c, c, false});
    }
    for (const auto& b : blocks_) {
      add_frn(params_, b.name + ".norm1", b.in);
      add_conv(params_, b.name + ".conv1", b.in, b.in, 3, rng);
      add_frn(params_, b.name + ".norm2", b.in);
      add_conv(params_, b.name + ".conv2", b.in, b.out, 3, rng);
      if (b.in != b.out) add_conv(params_, b.name + ".shortcut", b.in, b.out, 1, rng, false);
    }
    add_conv(params_, "head.conv", c, c, 4, rng);
    add_conv(params_, "head.out", c, cfg.num_domains, 1, rng);
  }

  // Returns [B, K] logits.
  Var<T> forward(const Var<T>& x, TraceSink sink = nullptr) const {
    const Shape expected{x.rank() == 4 ? x.dim(0) : -1, 3, cfg_.resolution, cfg_.resolution};
    if (x.shape() != expected)
      throw ShapeError("discriminator expects input " + shape_str(expected) + ", got " + shape_str(x.shape()));
    auto h = apply_conv(params_, "stem", x, {1, 1});
    trace(sink, "stem", h);
    const T inv_sqrt2 = T(1) / std::sqrt(T(2));
    for (const auto& b : blocks_) {
      auto r = apply_conv(params_, b.name + ".conv1", apply_frn(params_, b.name + ".norm1", h), {1, 1});
      if (b.downsample) r = avg_pool2(r);
      r = apply_conv(params_, b.name + ".conv2", apply_frn(params_, b.name + ".norm2", r), {1, 1});
      auto s = h;
      if (b.in != b.out) s = apply_conv(params_, b.name + ".shortcut", s, {1, 0});
      if (b.downsample) s = avg_pool2(s);
      h = mul_scalar(add(s, r), inv_sqrt2);
      trace(sink, b.name, h);
    }
    h = leaky_relu(h, T(0.2));
    h = leaky_relu(apply_conv(params_, "head.conv", h, {1, 0}), T(0.2));
    trace(sink, "head.conv", h);
    h = apply_conv(params_, "head.out", h, {1, 0});
    trace(sink, "head.out", h);
    return reshape(h, Shape{h.dim(0), h.dim(1)});
  }

  Tensor<T> discriminate(const ImageBatch& x) const {
    NoGrad guard;
    return forward(Var<T>::constant(nhwc_to_nchw<T>(x))).value();
  }

  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }
  const DiscriminatorConfig& config() const { return cfg_; }
  const std::vector<Block>& blocks() const { return blocks_; }

 private:
  DiscriminatorConfig cfg_;
  ParamStore<T> params_;
  std::vector<Block> blocks_;
};

// Per-row logit of the selected domain head.
template <typename T>
Var<T> select_head(const Var<T>& logits, const std::vector<int>& domains) {
  return take_rows(logits, domains);
}

}  // namespace unitrans
