#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "unitrans/image_batch.hpp"
#include "unitrans/nn.hpp"

namespace unitrans {

using FeatureMatrix = Eigen::MatrixXd;  // one row per sample

struct FeatureEmbedder {
  std::string name;
  int dim = 0;
  std::function<FeatureMatrix(const ImageBatch&)> embed;

  FeatureMatrix operator()(const ImageBatch& images) const { return embed(images); }
};

// Fixed random-projection conv net: three stride-2 3x3 convs with ReLU and
// global average pooling. Deterministic for a given seed.
inline FeatureEmbedder make_stub_embedder(std::uint64_t seed = 1234, int dim = 64) {
  Rng rng(seed);
  auto ps = std::make_shared<ParamStore<float>>();
  const int widths[] = {3, 16, 32, dim};
  for (int i = 0; i < 3; ++i) add_conv(*ps, "conv" + std::to_string(i), widths[i], widths[i + 1], 3, rng);
  // Nonzero biases keep the ReLUs from being purely homogeneous.
  for (std::size_t i = 0; i < ps->params().size(); ++i)
    if (ps->param_names()[i].ends_with(".bias"))
      for (auto& b : ps->params()[i].mutable_value().values())
        b = static_cast<float>(std::normal_distribution<double>(0.0, 0.1)(rng));
  FeatureEmbedder e;
  e.name = "stub-random-conv";
  e.dim = dim;
  e.embed = [ps, dim](const ImageBatch& images) {
    NoGrad guard;
    const auto B = images.dim(0);
    FeatureMatrix out(B, dim);
    const std::int64_t chunk = 32;
    for (std::int64_t start = 0; start < B; start += chunk) {
      const auto n = std::min(chunk, B - start);
      const auto per = images.size() / B;
      Shape s = images.shape();
      s[0] = n;
      ImageBatch part(s, std::vector<float>(images.data() + start * per, images.data() + (start + n) * per));
      auto h = Var<float>::constant(nhwc_to_nchw<float>(part));
      for (int i = 0; i < 3; ++i) h = relu(apply_conv(*ps, "conv" + std::to_string(i), h, {2, 1}));
      auto pooled = mean_to(h, Shape{n, dim, 1, 1}).value();
      for (std::int64_t b = 0; b < n; ++b)
        for (int d = 0; d < dim; ++d) out(start + b, d) = pooled[b * dim + d];
    }
    return out;
  };
  return e;
}

struct GaussianSummary {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  std::int64_t count = 0;
};

// Sample mean and unbiased covariance.
inline GaussianSummary summarize(const FeatureMatrix& feats) {
  if (feats.rows() < 2) throw std::invalid_argument("a Gaussian summary needs at least two samples");
  GaussianSummary g;
  g.count = feats.rows();
  g.mean = feats.colwise().mean().transpose();
  const FeatureMatrix centered = feats.rowwise() - g.mean.transpose();
  g.cov = (centered.transpose() * centered) / static_cast<double>(feats.rows() - 1);
  g.cov = 0.5 * (g.cov + g.cov.transpose());
  return g;
}

namespace detail {

inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace detail

// ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}). The trace of the
// square root is taken from the eigenvalues of the symmetric product
// S_a^{1/2} S_b S_a^{1/2}, which has the same spectrum as S_a S_b.
inline double frechet_distance(const GaussianSummary& a, const GaussianSummary& b) {
  if (a.mean.size() != b.mean.size() || a.cov.rows() != b.cov.rows())
    throw std::invalid_argument("frechet_distance: dimension mismatch " + std::to_string(a.mean.size()) + " vs " +
                                std::to_string(b.mean.size()));
  if (!a.cov.allFinite() || !b.cov.allFinite() || !a.mean.allFinite() || !b.mean.allFinite())
    throw std::invalid_argument("frechet_distance: non-finite statistics");
  const Eigen::MatrixXd sa = detail::psd_sqrt(a.cov);
  const Eigen::MatrixXd m = sa * b.cov * sa;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
  const double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double d = (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() - 2.0 * tr_sqrt;
  return std::max(d, 0.0);
}

struct MfidResult {
  double mfid = 0;
  std::vector<double> per_class;  // NaN for skipped classes
  std::vector<int> skipped;
};

// Class-wise FID averaged over classes with at least two real and two fake samples.
inline MfidResult mfid_from_features(const std::vector<FeatureMatrix>& real, const std::vector<FeatureMatrix>& fake) {
  if (real.size() != fake.size()) throw std::invalid_argument("mfid: real and fake class counts differ");
  MfidResult r;
  double sum = 0;
  int used = 0;
  for (std::size_t c = 0; c < real.size(); ++c) {
    if (real[c].rows() < 2 || fake[c].rows() < 2) {
      r.per_class.push_back(std::numeric_limits<double>::quiet_NaN());
      r.skipped.push_back(static_cast<int>(c));
      continue;
    }
    r.per_class.push_back(frechet_distance(summarize(real[c]), summarize(fake[c])));
    sum += r.per_class.back();
    ++used;
  }
  if (used == 0) throw std::invalid_argument("mfid: no class has enough real and fake samples");
  r.mfid = sum / used;
  return r;
}

inline MfidResult mfid(const std::vector<ImageBatch>& real, const std::vector<ImageBatch>& fake, const FeatureEmbedder& emb) {
  std::vector<FeatureMatrix> fr, ff;
  for (const auto& b : real) fr.push_back(b.size() ? emb(b) : FeatureMatrix(0, emb.dim));
  for (const auto& b : fake) ff.push_back(b.size() ? emb(b) : FeatureMatrix(0, emb.dim));
  return mfid_from_features(fr, ff);
}

struct DensityCoverage {
  double density = 0, coverage = 0;
};

// Radii are distances to the k-th nearest other real sample.
inline DensityCoverage density_coverage(const FeatureMatrix& real, const FeatureMatrix& fake, int k = 5) {
  if (k <= 0) throw std::invalid_argument("density_coverage: k must be positive");
  const auto N = real.rows(), M = fake.rows();
  if (N < k + 1) throw std::invalid_argument("density_coverage: need at least k+1 real samples");
  if (fake.cols() != real.cols()) throw std::invalid_argument("density_coverage: feature dimensions differ");
  std::vector<double> radius(N);
  std::vector<double> d(N - 1);
  for (Eigen::Index i = 0; i < N; ++i) {
    std::size_t n = 0;
    for (Eigen::Index j = 0; j < N; ++j)
      if (j != i) d[n++] = (real.row(i) - real.row(j)).norm();
    std::nth_element(d.begin(), d.begin() + (k - 1), d.end());
    radius[i] = d[k - 1];
  }
  DensityCoverage out;
  if (M == 0) return out;
  std::vector<bool> covered(N, false);
  double inside = 0;
  for (Eigen::Index j = 0; j < M; ++j) {
    for (Eigen::Index i = 0; i < N; ++i) {
      if ((fake.row(j) - real.row(i)).norm() <= radius[i]) {
        inside += 1;
        covered[i] = true;
      }
    }
  }
  out.density = inside / (static_cast<double>(k) * M);
  out.coverage = static_cast<double>(std::count(covered.begin(), covered.end(), true)) / N;
  return out;
}

struct ProtocolPair {
  std::size_t source, reference;
};

struct ProtocolSample {
  std::vector<ProtocolPair> pairs;
  std::vector<int> resampled_classes;  // classes with too few sources, drawn with replacement
};

// Fake-generation plan for one target class: `per_class` sources from every
// other class, each paired with `n_refs` references from the target class.
inline ProtocolSample protocol_sample(const std::vector<int>& labels, int target, int num_classes, int n_refs,
                                      std::uint64_t seed, int per_class = 18) {
  if (target < 0 || target >= num_classes) throw std::out_of_range("protocol_sample: invalid target class");
  if (n_refs < 1 || per_class < 1) throw std::invalid_argument("protocol_sample: counts must be positive");
  std::vector<std::vector<std::size_t>> members(num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] >= 0 && labels[i] < num_classes) members[labels[i]].push_back(i);
  if (members[target].empty()) throw std::invalid_argument("protocol_sample: target class has no samples");
  Rng rng(seed);
  ProtocolSample out;
  std::uniform_int_distribution<std::size_t> pick_ref(0, members[target].size() - 1);
  for (int c = 0; c < num_classes; ++c) {
    if (c == target) continue;
    auto pool = members[c];
    if (pool.empty()) throw std::invalid_argument("protocol_sample: class " + std::to_string(c) + " has no samples");
    std::vector<std::size_t> sources;
    if (static_cast<int>(pool.size()) >= per_class) {
      std::shuffle(pool.begin(), pool.end(), rng);
      sources.assign(pool.begin(), pool.begin() + per_class);
    } else {
      out.resampled_classes.push_back(c);
      std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
      for (int i = 0; i < per_class; ++i) sources.push_back(pool[pick(rng)]);
    }
    for (auto s : sources)
      for (int r = 0; r < n_refs; ++r) out.pairs.push_back({s, members[target][pick_ref(rng)]});
  }
  return out;
}

// Mean of the n smallest values (e.g. best five mFIDs across checkpoints).
inline double mean_of_best(std::vector<double> values, std::size_t n = 5) {
  if (values.empty()) throw std::invalid_argument("mean_of_best: no values");
  std::sort(values.begin(), values.end());
  n = std::min(n, values.size());
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) s += values[i];
  return s / static_cast<double>(n);
}

}  // namespace unitrans
