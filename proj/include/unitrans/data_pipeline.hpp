#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "unitrans/errors.hpp"
#include "unitrans/image_batch.hpp"
#include "unitrans/nn.hpp"

namespace unitrans {

// One image [H,W,3] in [-1,1] with an optional ground-truth domain (-1 = none).
struct ImageRecord {
  Tensor<float> image;
  int label = -1;
  std::string name;
};

struct ImageDataset {
  std::vector<ImageRecord> records;
  std::vector<std::string> class_names;  // empty for unlabeled data
  int resolution = 0;

  std::size_t size() const { return records.size(); }
  bool labeled() const {
    return !records.empty() && std::all_of(records.begin(), records.end(), [](const auto& r) { return r.label >= 0; });
  }
  int num_classes() const { return static_cast<int>(class_names.size()); }

  ImageBatch batch(const std::vector<std::size_t>& idx) const {
    std::vector<const Tensor<float>*> images;
    images.reserve(idx.size());
    for (auto i : idx) images.push_back(&records.at(i).image);
    return stack_images(images);
  }
  std::vector<int> labels(const std::vector<std::size_t>& idx) const {
    std::vector<int> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(records.at(i).label);
    return out;
  }
  std::vector<int> labels() const {
    std::vector<int> out;
    for (const auto& r : records) out.push_back(r.label);
    return out;
  }
  ImageDataset subset(const std::vector<std::size_t>& idx) const {
    ImageDataset out;
    out.class_names = class_names;
    out.resolution = resolution;
    for (auto i : idx) out.records.push_back(records.at(i));
    return out;
  }
};

// ---------------------------------------------------------------------------
// Paired-view augmentation: random resized crop, horizontal flip, small
// rotation with reflect padding. Implemented as one inverse-mapped bilinear
// warp so every output pixel is sampled once.

struct AugmentOptions {
  double area_min = 0.2, area_max = 1.0;
  double aspect_min = 3.0 / 4.0, aspect_max = 4.0 / 3.0;
  double flip_probability = 0.5;
  double max_rotation_deg = 10.0;
};

struct AugmentDraw {
  double x0 = 0, y0 = 0;  // crop origin in source pixels
  double crop_w = 0, crop_h = 0;
  bool flip = false;
  double angle_deg = 0;

  static AugmentDraw identity(std::int64_t h, std::int64_t w) {
    return {0, 0, static_cast<double>(w), static_cast<double>(h), false, 0};
  }
};

inline AugmentDraw draw_augment(std::int64_t h, std::int64_t w, Rng& rng, const AugmentOptions& opt = {}) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double a, double b) { return a + (b - a) * unit(rng); };
  AugmentDraw d = AugmentDraw::identity(h, w);
  const double area = static_cast<double>(h * w);
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target = area * uniform(opt.area_min, opt.area_max);
    const double aspect = uniform(opt.aspect_min, opt.aspect_max);
    const double cw = std::sqrt(target * aspect), ch = std::sqrt(target / aspect);
    if (cw <= w && ch <= h) {
      d.crop_w = cw;
      d.crop_h = ch;
      d.x0 = uniform(0.0, w - cw);
      d.y0 = uniform(0.0, h - ch);
      break;
    }
  }
  d.flip = unit(rng) < opt.flip_probability;
  d.angle_deg = uniform(-opt.max_rotation_deg, opt.max_rotation_deg);
  return d;
}

namespace detail {

// Reflection without repeating the edge sample (gfedcb|abcdefgh|gfedcba).
inline double reflect101(double v, double hi) {
  if (hi <= 0) return 0;
  const double period = 2 * hi;
  v = std::fmod(std::abs(v), period);
  return v > hi ? period - v : v;
}

}  // namespace detail

inline Tensor<float> apply_augment(const Tensor<float>& image, const AugmentDraw& d) {
  if (image.rank() != 3 || image.dim(2) != 3) throw ShapeError("augment expects [H,W,3], got " + shape_str(image.shape()));
  const auto H = image.dim(0), W = image.dim(1);
  Tensor<float> out(image.shape());
  const double cx = (W - 1) / 2.0, cy = (H - 1) / 2.0;
  const double a = d.angle_deg * std::numbers::pi / 180.0, ca = std::cos(a), sa = std::sin(a);
  const double sx = d.crop_w / W, sy = d.crop_h / H;
  for (std::int64_t v = 0; v < H; ++v) {
    for (std::int64_t u = 0; u < W; ++u) {
      const double uf = d.flip ? static_cast<double>(W - 1 - u) : static_cast<double>(u);
      // Rotation in the crop frame, reflected back inside it.
      double ur = cx + ca * (uf - cx) - sa * (v - cy);
      double vr = cy + sa * (uf - cx) + ca * (v - cy);
      if (d.angle_deg != 0.0) {
        ur = detail::reflect101(ur, static_cast<double>(W - 1));
        vr = detail::reflect101(vr, static_cast<double>(H - 1));
      }
      const double xs = std::clamp(d.x0 + (ur + 0.5) * sx - 0.5, 0.0, static_cast<double>(W - 1));
      const double ys = std::clamp(d.y0 + (vr + 0.5) * sy - 0.5, 0.0, static_cast<double>(H - 1));
      const auto x0 = static_cast<std::int64_t>(std::floor(xs)), y0 = static_cast<std::int64_t>(std::floor(ys));
      const auto x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
      const double fx = xs - x0, fy = ys - y0;
      for (int c = 0; c < 3; ++c) {
        auto px = [&](std::int64_t yy, std::int64_t xx) { return static_cast<double>(image[(yy * W + xx) * 3 + c]); };
        const double val = (1 - fy) * ((1 - fx) * px(y0, x0) + fx * px(y0, x1)) + fy * ((1 - fx) * px(y1, x0) + fx * px(y1, x1));
        out[(v * W + u) * 3 + c] = static_cast<float>(std::clamp(val, -1.0, 1.0));
      }
    }
  }
  return out;
}

inline Tensor<float> augment(const Tensor<float>& image, Rng& rng, const AugmentOptions& opt = {}) {
  return apply_augment(image, draw_augment(image.dim(0), image.dim(1), rng, opt));
}

inline ImageBatch augment_batch(const ImageBatch& batch, Rng& rng, const AugmentOptions& opt = {}) {
  check_image_batch(batch);
  ImageBatch out(batch.shape());
  const auto n = batch.size() / std::max<std::int64_t>(batch.dim(0), 1);
  for (std::int64_t b = 0; b < batch.dim(0); ++b) {
    auto view = augment(image_at(batch, b), rng, opt);
    std::copy(view.data(), view.data() + n, out.data() + b * n);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Semi-supervised split, stratified per class. Every class with members gets
// at least one labeled sample when the ratio is positive.

struct SemiSupervisedSplit {
  std::vector<std::size_t> labeled, unlabeled;
};

inline SemiSupervisedSplit split_semi_supervised(const ImageDataset& ds, double ratio, std::uint64_t seed) {
  if (ratio < 0.0 || ratio > 1.0) throw ConfigError("labeled ratio must lie in [0,1], got " + std::to_string(ratio));
  SemiSupervisedSplit split;
  if (ratio == 0.0) {
    for (std::size_t i = 0; i < ds.size(); ++i) split.unlabeled.push_back(i);
    return split;
  }
  if (!ds.labeled()) throw ConfigError("a positive labeled ratio needs a dataset with ground-truth labels");
  const auto all = ds.labels();
  const int K = std::max(ds.num_classes(), 1 + *std::max_element(all.begin(), all.end()));
  std::vector<std::vector<std::size_t>> members(K);
  for (std::size_t i = 0; i < ds.size(); ++i) members[ds.records[i].label].push_back(i);
  Rng rng(seed);
  std::vector<bool> is_labeled(ds.size(), false);
  for (auto& m : members) {
    if (m.empty()) continue;
    std::shuffle(m.begin(), m.end(), rng);
    auto take = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(m.size())));
    take = std::clamp<std::size_t>(take, 1, m.size());
    for (std::size_t j = 0; j < take; ++j) is_labeled[m[j]] = true;
  }
  for (std::size_t i = 0; i < ds.size(); ++i) (is_labeled[i] ? split.labeled : split.unlabeled).push_back(i);
  return split;
}

// ---------------------------------------------------------------------------
// Synthetic multi-domain data. A domain fixes a hue band and a stripe
// frequency; each sample draws a shape (type, position, scale) and stripe
// orientation independently of its domain.

struct SyntheticSpec {
  int num_domains = 3;
  int samples = 300;
  int resolution = 64;
  std::uint64_t seed = 0;
  double hue_jitter = 0.15;  // fraction of the per-domain hue spacing
};

namespace detail {

inline std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
  h = h - std::floor(h);
  const double c = v * s, hp = h * 6.0, x = c * (1 - std::abs(std::fmod(hp, 2.0) - 1)), m = v - c;
  double r = 0, g = 0, b = 0;
  if (hp < 1) r = c, g = x;
  else if (hp < 2) r = x, g = c;
  else if (hp < 3) g = c, b = x;
  else if (hp < 4) g = x, b = c;
  else if (hp < 5) r = x, b = c;
  else r = c, b = x;
  return {r + m, g + m, b + m};
}

// Hue in [0,1) and saturation of an RGB triple in [0,1].
inline std::pair<double, double> rgb_hue_saturation(double r, double g, double b) {
  const double mx = std::max({r, g, b}), mn = std::min({r, g, b}), d = mx - mn;
  if (d <= 1e-9 || mx <= 0) return {0.0, 0.0};
  double h;
  if (mx == r) h = std::fmod((g - b) / d, 6.0);
  else if (mx == g) h = (b - r) / d + 2.0;
  else h = (r - g) / d + 4.0;
  h /= 6.0;
  if (h < 0) h += 1.0;
  return {h, d / mx};
}

}  // namespace detail

inline double synthetic_hue_center(int domain, int num_domains) { return static_cast<double>(domain) / num_domains; }
inline double synthetic_stripe_frequency(int domain) { return 3.0 + 2.5 * domain; }

inline const std::vector<std::string>& synthetic_shape_names() {
  static const std::vector<std::string> names{"disc", "square", "triangle", "ring"};
  return names;
}

inline Tensor<float> render_synthetic(int domain, int num_domains, int res, Rng& rng, double hue_jitter = 0.15) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double hue = synthetic_hue_center(domain, num_domains) + (unit(rng) - 0.5) * 2 * hue_jitter / num_domains;
  const double freq = synthetic_stripe_frequency(domain);
  const double theta = unit(rng) * std::numbers::pi, phase = unit(rng) * 2 * std::numbers::pi;
  const int shape = static_cast<int>(unit(rng) * synthetic_shape_names().size()) % 4;
  const double cx = (0.3 + 0.4 * unit(rng)) * res, cy = (0.3 + 0.4 * unit(rng)) * res;
  const double radius = (0.15 + 0.15 * unit(rng)) * res;
  const auto bg_lo = detail::hsv_to_rgb(hue, 0.75, 0.35), bg_hi = detail::hsv_to_rgb(hue, 0.75, 0.85);
  const auto fg = detail::hsv_to_rgb(hue, 0.9, 0.15);
  Tensor<float> img({res, res, 3});
  for (int y = 0; y < res; ++y) {
    for (int x = 0; x < res; ++x) {
      const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
      bool inside = false;
      switch (shape) {
        case 0: inside = dx * dx + dy * dy <= radius * radius; break;
        case 1: inside = std::abs(dx) <= radius * 0.85 && std::abs(dy) <= radius * 0.85; break;
        case 2: inside = dy <= radius * 0.8 && dy >= -radius + 2 * std::abs(dx); break;
        default: {
          const double r2 = dx * dx + dy * dy;
          inside = r2 <= radius * radius && r2 >= 0.36 * radius * radius;
        }
      }
      const double t = (x * std::cos(theta) + y * std::sin(theta)) / res;
      const double stripe = 0.5 + 0.5 * std::sin(2 * std::numbers::pi * freq * t + phase);
      for (int c = 0; c < 3; ++c) {
        const double v = inside ? fg[c] : bg_lo[c] + stripe * (bg_hi[c] - bg_lo[c]);
        img[(y * res + x) * 3 + c] = static_cast<float>(2.0 * v - 1.0);
      }
    }
  }
  return img;
}

// Sample i belongs to domain i mod K; each sample has its own seeded stream.
inline ImageDataset make_synthetic(const SyntheticSpec& spec) {
  if (spec.num_domains < 1) throw ConfigError("synthetic data needs at least one domain");
  if (spec.samples < 0) throw ConfigError("synthetic sample count must be nonnegative");
  if (spec.resolution < 8) throw ConfigError("synthetic resolution too small");
  ImageDataset ds;
  ds.resolution = spec.resolution;
  for (int k = 0; k < spec.num_domains; ++k) ds.class_names.push_back("domain" + std::to_string(k));
  for (int i = 0; i < spec.samples; ++i) {
    std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                      static_cast<std::uint32_t>(i)};
    Rng rng(seq);
    const int domain = i % spec.num_domains;
    char name[32];
    std::snprintf(name, sizeof name, "%06d", i);
    ds.records.push_back({render_synthetic(domain, spec.num_domains, spec.resolution, rng, spec.hue_jitter), domain, name});
  }
  return ds;
}

// Oracle classifier: circular mean hue of saturated pixels, assigned to the
// nearest domain hue center.
inline int hue_histogram_classify(const Tensor<float>& image, int num_domains) {
  double sx = 0, sy = 0;
  for (std::int64_t i = 0; i < image.size() / 3; ++i) {
    const auto [h, s] = detail::rgb_hue_saturation((image[3 * i] + 1) / 2, (image[3 * i + 1] + 1) / 2,
                                                   (image[3 * i + 2] + 1) / 2);
    if (s < 0.3) continue;
    sx += s * std::cos(2 * std::numbers::pi * h);
    sy += s * std::sin(2 * std::numbers::pi * h);
  }
  double mean = std::atan2(sy, sx) / (2 * std::numbers::pi);
  if (mean < 0) mean += 1;
  int best = 0;
  double best_d = 2;
  for (int k = 0; k < num_domains; ++k) {
    double d = std::abs(mean - synthetic_hue_center(k, num_domains));
    d = std::min(d, 1 - d);
    if (d < best_d) best_d = d, best = k;
  }
  return best;
}

}  // namespace unitrans
