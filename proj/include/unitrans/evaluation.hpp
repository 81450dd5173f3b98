#pragma once

#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "unitrans/clustering_eval.hpp"
#include "unitrans/generative_eval.hpp"
#include "unitrans/training_engine.hpp"

namespace unitrans {

struct EvalOptions {
  int n_refs = 1;        // references per source image
  int per_class = 18;    // sources drawn from every non-target class
  int dc_k = 5;          // neighbourhood size for density & coverage
  int batch_size = 32;
  std::uint64_t seed = 0;
};

struct EvalReport {
  bool labeled = false;
  double accuracy = std::numeric_limits<double>::quiet_NaN();
  IoiResult ioi;
  MfidResult mfid;  // empty when the data carries no labels
  DensityCoverage dc;
  std::size_t fakes = 0;
  std::vector<std::string> notices;
};

// Translates images[source] with the raw style of images[reference], in chunks.
inline ImageBatch translate_pairs(const GuidingNetwork<float>& E, const Generator<float>& G, const ImageDataset& ds,
                                  const std::vector<ProtocolPair>& pairs, int batch_size = 32) {
  if (pairs.empty()) return ImageBatch(Shape{0, ds.resolution, ds.resolution, 3});
  std::vector<float> out;
  Shape shape;
  for (std::size_t start = 0; start < pairs.size(); start += batch_size) {
    std::vector<std::size_t> src, ref;
    for (auto i = start; i < std::min(pairs.size(), start + batch_size); ++i) {
      src.push_back(pairs[i].source);
      ref.push_back(pairs[i].reference);
    }
    NoGrad guard;
    const auto style = E.encode(ds.batch(ref)).style.value();
    const auto fake = translate(G, ds.batch(src), style);
    shape = fake.shape();
    out.insert(out.end(), fake.data(), fake.data() + fake.size());
  }
  shape[0] = static_cast<std::int64_t>(pairs.size());
  return ImageBatch(shape, std::move(out));
}

// Clustering and generation metrics for a guiding network / generator pair.
// Labeled data gets class-wise FID from the protocol sample for each target
// class; unlabeled data gets density & coverage and IOI only.
inline EvalReport evaluate_model(const GuidingNetwork<float>& E, const Generator<float>& G, const ImageDataset& ds,
                                 const FeatureEmbedder& embedder, const EvalOptions& opt = {}) {
  if (ds.size() < 2) throw DataError("evaluation needs at least two images");
  EvalReport r;
  r.labeled = ds.labeled();
  const auto enc = encode_dataset(E, ds, opt.batch_size);
  r.ioi = ioi(enc.style, enc.predicted);

  std::vector<std::size_t> all(ds.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  const FeatureMatrix real_all = embedder(ds.batch(all));

  FeatureMatrix fake_all(0, embedder.dim);
  if (r.labeled) {
    r.accuracy = cluster_accuracy(enc.predicted, ds.labels());
    const int K = ds.num_classes();
    std::vector<FeatureMatrix> real(K), fake(K);
    std::set<int> resampled;
    for (int t = 0; t < K; ++t) {
      std::vector<std::size_t> members;
      for (std::size_t i = 0; i < ds.size(); ++i)
        if (ds.records[i].label == t) members.push_back(i);
      real[t] = FeatureMatrix(static_cast<Eigen::Index>(members.size()), embedder.dim);
      for (std::size_t i = 0; i < members.size(); ++i) real[t].row(i) = real_all.row(members[i]);
      if (K < 2 || members.empty()) {
        fake[t] = FeatureMatrix(0, embedder.dim);
        continue;
      }
      auto sample = protocol_sample(ds.labels(), t, K, opt.n_refs, opt.seed + t, opt.per_class);
      resampled.insert(sample.resampled_classes.begin(), sample.resampled_classes.end());
      const auto images = translate_pairs(E, G, ds, sample.pairs, opt.batch_size);
      fake[t] = embedder(images);
    }
    for (int c : resampled)
      r.notices.push_back("class " + std::to_string(c) + " has fewer than " + std::to_string(opt.per_class) +
                          " images; sources drawn with replacement");
    r.mfid = mfid_from_features(real, fake);
    for (const auto& f : fake) {
      FeatureMatrix grown(fake_all.rows() + f.rows(), embedder.dim);
      grown.topRows(fake_all.rows()) = fake_all;
      grown.bottomRows(f.rows()) = f;
      fake_all = std::move(grown);
    }
  } else {
    r.notices.push_back("dataset has no labels: cluster accuracy and mFID skipped");
    Rng rng(opt.seed);
    const auto n = static_cast<int>(std::min<std::size_t>(ds.size(), 200));
    const auto perm = random_derangement(n, rng);
    std::vector<ProtocolPair> pairs;
    for (int i = 0; i < n; ++i) pairs.push_back({static_cast<std::size_t>(i), static_cast<std::size_t>(perm[i])});
    fake_all = embedder(translate_pairs(E, G, ds, pairs, opt.batch_size));
  }

  r.fakes = static_cast<std::size_t>(fake_all.rows());
  if (static_cast<Eigen::Index>(ds.size()) > opt.dc_k) {
    r.dc = density_coverage(real_all, fake_all, opt.dc_k);
  } else {
    r.notices.push_back("too few images for density & coverage");
  }
  return r;
}

}  // namespace unitrans
