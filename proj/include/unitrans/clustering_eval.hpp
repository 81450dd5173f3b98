#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "unitrans/autodiff/tensor.hpp"
#include "unitrans/errors.hpp"

namespace unitrans {

// Minimum-cost perfect assignment on a square cost matrix (row-major n x n),
// O(n^3) shortest augmenting paths. Returns the column assigned to each row.
inline std::vector<int> hungarian_min_cost(const std::vector<double>& cost, int n) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0), v(n + 1, 0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) minv[j] = cur, way[j] = j0;
        if (minv[j] < delta) delta = minv[j], j1 = j;
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) u[p[j]] += delta, v[j] -= delta;
        else minv[j] -= delta;
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> assignment(n, -1);
  for (int j = 1; j <= n; ++j)
    if (p[j] > 0) assignment[p[j] - 1] = j - 1;
  return assignment;
}

struct ClusterMatch {
  double accuracy = 0;
  std::vector<int> cluster_to_class;  // -1 for clusters matched to padding
};

// Best one-to-one matching of predicted clusters to ground-truth classes,
// over the contingency table padded to a square.
inline ClusterMatch match_clusters(const std::vector<int>& pred, const std::vector<int>& gt) {
  if (pred.empty()) throw std::invalid_argument("cluster_accuracy: empty input");
  if (pred.size() != gt.size()) throw std::invalid_argument("cluster_accuracy: prediction and truth lengths differ");
  int kp = 0, kg = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] < 0 || gt[i] < 0) throw std::invalid_argument("cluster_accuracy: negative index");
    kp = std::max(kp, pred[i] + 1);
    kg = std::max(kg, gt[i] + 1);
  }
  const int n = std::max(kp, kg);
  std::vector<double> count(static_cast<std::size_t>(n) * n, 0.0);
  for (std::size_t i = 0; i < pred.size(); ++i) count[pred[i] * n + gt[i]] += 1;
  std::vector<double> cost(count.size());
  for (std::size_t i = 0; i < count.size(); ++i) cost[i] = -count[i];
  const auto assign = hungarian_min_cost(cost, n);
  ClusterMatch m;
  double matched = 0;
  for (int r = 0; r < kp; ++r) {
    matched += count[r * n + assign[r]];
    m.cluster_to_class.push_back(assign[r] < kg ? assign[r] : -1);
  }
  m.accuracy = matched / static_cast<double>(pred.size());
  return m;
}

inline double cluster_accuracy(const std::vector<int>& pred, const std::vector<int>& gt) {
  return match_clusters(pred, gt).accuracy;
}

struct IoiResult {
  double value = 0;  // +infinity when the intra term vanishes
  double inter = 0, intra = 0;
  bool degenerate = false;
  std::vector<int> singleton_clusters;  // excluded from the intra term
};

namespace detail {

inline std::vector<double> unit_row(const Tensor<float>& x, std::int64_t i) {
  const auto D = x.dim(1);
  std::vector<double> r(x.data() + i * D, x.data() + (i + 1) * D);
  double n = 0;
  for (double v : r) n += v * v;
  n = std::sqrt(n);
  if (n > 0)
    for (double& v : r) v /= n;
  return r;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace detail

// Inter/intra ratio in cosine geometry. Centroid = normalized mean of the
// unit-normalized members; intra = mean cosine distance of members to their
// centroid; inter = mean pairwise cosine distance between centroids.
inline IoiResult ioi(const Tensor<float>& styles, const std::vector<int>& labels) {
  if (styles.rank() != 2 || static_cast<std::size_t>(styles.dim(0)) != labels.size())
    throw ShapeError("ioi: styles " + shape_str(styles.shape()) + " vs " + std::to_string(labels.size()) + " labels");
  int K = 0;
  for (int y : labels) {
    if (y < 0) throw std::invalid_argument("ioi: negative label");
    K = std::max(K, y + 1);
  }
  const auto D = styles.dim(1);
  std::vector<std::vector<double>> centroid(K, std::vector<double>(D, 0.0));
  std::vector<int> members(K, 0);
  std::vector<std::vector<double>> units;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    units.push_back(detail::unit_row(styles, static_cast<std::int64_t>(i)));
    for (std::int64_t d = 0; d < D; ++d) centroid[labels[i]][d] += units.back()[d];
    ++members[labels[i]];
  }
  std::vector<int> present;
  for (int k = 0; k < K; ++k) {
    if (members[k] == 0) continue;
    present.push_back(k);
    double n = std::sqrt(detail::dot(centroid[k], centroid[k]));
    if (n > 0)
      for (double& v : centroid[k]) v /= n;
  }
  if (present.size() < 2) throw std::invalid_argument("ioi needs at least two clusters");
  IoiResult r;
  double intra = 0;
  std::size_t counted = 0;
  for (int k : present)
    if (members[k] == 1) r.singleton_clusters.push_back(k);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (members[labels[i]] < 2) continue;
    intra += 1.0 - detail::dot(units[i], centroid[labels[i]]);
    ++counted;
  }
  if (counted == 0) throw std::invalid_argument("ioi needs clusters with at least two members");
  r.intra = intra / static_cast<double>(counted);
  double inter = 0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < present.size(); ++a)
    for (std::size_t b = a + 1; b < present.size(); ++b, ++pairs)
      inter += 1.0 - detail::dot(centroid[present[a]], centroid[present[b]]);
  r.inter = inter / static_cast<double>(pairs);
  if (r.intra <= 1e-12) {
    r.degenerate = true;
    r.value = std::numeric_limits<double>::infinity();
  } else {
    r.value = r.inter / r.intra;
  }
  return r;
}

// Arithmetic mean of the raw style codes of each cluster: [K, D].
inline Tensor<float> average_style(const Tensor<float>& styles, const std::vector<int>& labels, int num_clusters) {
  if (styles.rank() != 2 || static_cast<std::size_t>(styles.dim(0)) != labels.size())
    throw ShapeError("average_style: styles and labels disagree");
  const auto D = styles.dim(1);
  std::vector<double> sum(static_cast<std::size_t>(num_clusters) * D, 0.0);
  std::vector<int> count(num_clusters, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int k = labels[i];
    if (k < 0 || k >= num_clusters) throw std::out_of_range("average_style: label " + std::to_string(k) + " out of range");
    ++count[k];
    for (std::int64_t d = 0; d < D; ++d) sum[k * D + d] += styles[static_cast<std::int64_t>(i) * D + d];
  }
  std::string empty;
  for (int k = 0; k < num_clusters; ++k)
    if (count[k] == 0) empty += (empty.empty() ? "" : ", ") + std::to_string(k);
  if (!empty.empty()) throw std::invalid_argument("average_style: empty cluster(s) " + empty);
  Tensor<float> out({num_clusters, D});
  for (int k = 0; k < num_clusters; ++k)
    for (std::int64_t d = 0; d < D; ++d) out[k * D + d] = static_cast<float>(sum[k * D + d] / count[k]);
  return out;
}

// Tab-separated: style columns, predicted label, and the true label when given.
inline void export_embeddings(const Tensor<float>& styles, const std::vector<int>& predicted,
                              const std::vector<int>* truth, const std::string& path) {
  const auto N = styles.dim(0), D = styles.dim(1);
  if (static_cast<std::size_t>(N) != predicted.size() || (truth && truth->size() != predicted.size()))
    throw ShapeError("export_embeddings: row counts disagree");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (std::int64_t d = 0; d < D; ++d) out << "s" << d << '\t';
  out << "predicted";
  if (truth) out << "\ttruth";
  out << '\n' << std::setprecision(9);
  for (std::int64_t i = 0; i < N; ++i) {
    for (std::int64_t d = 0; d < D; ++d) out << styles[i * D + d] << '\t';
    out << predicted[i];
    if (truth) out << '\t' << (*truth)[i];
    out << '\n';
  }
  if (!out) throw std::runtime_error("failed writing " + path);
}

}  // namespace unitrans
