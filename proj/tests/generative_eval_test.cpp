#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "unitrans/generative_eval.hpp"

using namespace unitrans;

namespace {

GaussianSummary gaussian(Eigen::VectorXd mean, Eigen::MatrixXd cov) {
  GaussianSummary g;
  g.mean = std::move(mean);
  g.cov = std::move(cov);
  g.count = 100;
  return g;
}

Eigen::MatrixXd random_rotation(int d, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0, 1);
  Eigen::MatrixXd a(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) a(i, j) = n(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  return qr.householderQ();
}

// Independent double loop, no partial sorting.
DensityCoverage brute_density_coverage(const FeatureMatrix& real, const FeatureMatrix& fake, int k) {
  const auto N = real.rows(), M = fake.rows();
  std::vector<double> radius(N);
  for (Eigen::Index i = 0; i < N; ++i) {
    std::vector<double> d;
    for (Eigen::Index j = 0; j < N; ++j)
      if (j != i) d.push_back(std::sqrt((real.row(i) - real.row(j)).squaredNorm()));
    std::sort(d.begin(), d.end());
    radius[i] = d[k - 1];
  }
  double inside = 0;
  int covered = 0;
  for (Eigen::Index i = 0; i < N; ++i) {
    bool any = false;
    for (Eigen::Index j = 0; j < M; ++j) {
      const bool in = std::sqrt((fake.row(j) - real.row(i)).squaredNorm()) <= radius[i];
      inside += in;
      any |= in;
    }
    covered += any;
  }
  return {M ? inside / (k * static_cast<double>(M)) : 0.0, M ? static_cast<double>(covered) / N : 0.0};
}

}  // namespace

TEST(Frechet, AnalyticExamples) {
  const auto a = gaussian(Eigen::VectorXd::Zero(3), Eigen::MatrixXd::Identity(3, 3) * 2.0);
  EXPECT_NEAR(frechet_distance(a, a), 0.0, 1e-8);
  EXPECT_NEAR(frechet_distance(gaussian(Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Identity(1, 1)),
                               gaussian(Eigen::VectorXd::Ones(1), Eigen::MatrixXd::Identity(1, 1))),
              1.0, 1e-8);
  EXPECT_NEAR(frechet_distance(gaussian(Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Identity(2, 2)),
                               gaussian(Eigen::VectorXd::Zero(2), 4.0 * Eigen::MatrixXd::Identity(2, 2))),
              2.0, 1e-8);
}

TEST(Frechet, CommutingCovariancesMatchClosedFormAndAreSymmetric) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.1, 3.0);
  for (int t = 0; t < 50; ++t) {
    const int d = 1 + t % 6;
    const auto R = random_rotation(d, rng);
    Eigen::VectorXd la(d), lb(d), ma(d), mb(d);
    for (int i = 0; i < d; ++i) la(i) = u(rng), lb(i) = u(rng), ma(i) = u(rng), mb(i) = u(rng);
    const auto a = gaussian(ma, R * la.asDiagonal() * R.transpose());
    const auto b = gaussian(mb, R * lb.asDiagonal() * R.transpose());
    const double want = (ma - mb).squaredNorm() + (la.cwiseSqrt() - lb.cwiseSqrt()).squaredNorm();
    EXPECT_NEAR(frechet_distance(a, b), want, 1e-8);
    EXPECT_NEAR(frechet_distance(a, b), frechet_distance(b, a), 1e-8);
  }
}

TEST(Frechet, GeneralCovariancesAreSymmetric) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0, 1);
  for (int t = 0; t < 20; ++t) {
    const int d = 2 + t % 5;
    Eigen::MatrixXd A(d, d), B(d, d);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) A(i, j) = n(rng), B(i, j) = n(rng);
    const auto a = gaussian(Eigen::VectorXd::Random(d), A * A.transpose());
    const auto b = gaussian(Eigen::VectorXd::Random(d), B * B.transpose());
    EXPECT_NEAR(frechet_distance(a, b), frechet_distance(b, a), 1e-8);
    EXPECT_GE(frechet_distance(a, b), 0.0);
  }
}

TEST(Frechet, Errors) {
  const auto a = gaussian(Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Identity(2, 2));
  const auto b = gaussian(Eigen::VectorXd::Zero(3), Eigen::MatrixXd::Identity(3, 3));
  EXPECT_THROW(frechet_distance(a, b), std::invalid_argument);
  auto c = a;
  c.cov(0, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(frechet_distance(a, c), std::invalid_argument);
  EXPECT_THROW(summarize(FeatureMatrix(1, 2)), std::invalid_argument);
}

TEST(Frechet, MonteCarloWithinFivePercent) {
  std::mt19937_64 rng(3);
  const int d = 4, n = 50000;
  const auto R = random_rotation(d, rng);
  Eigen::VectorXd la(d), lb(d), ma(d), mb(d);
  la << 1.0, 2.0, 0.5, 1.5;
  lb << 0.3, 2.5, 1.0, 4.0;
  ma << 0.0, 0.5, -0.5, 1.0;
  mb << 0.5, 0.0, 0.0, 0.0;
  const double analytic = (ma - mb).squaredNorm() + (la.cwiseSqrt() - lb.cwiseSqrt()).squaredNorm();
  std::normal_distribution<double> z(0, 1);
  auto draw = [&](const Eigen::VectorXd& m, const Eigen::VectorXd& l) {
    FeatureMatrix f(n, d);
    for (int i = 0; i < n; ++i) {
      Eigen::VectorXd e(d);
      for (int j = 0; j < d; ++j) e(j) = z(rng) * std::sqrt(l(j));
      f.row(i) = (m + R * e).transpose();
    }
    return f;
  };
  const double fid = frechet_distance(summarize(draw(ma, la)), summarize(draw(mb, lb)));
  EXPECT_NEAR(fid, analytic, 0.05 * analytic);
}

TEST(Mfid, IdenticalSetsAndKnownClasses) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> z(0, 1);
  FeatureMatrix r(30, 3);
  for (int i = 0; i < r.size(); ++i) r.data()[i] = z(rng);
  EXPECT_NEAR(mfid_from_features({r, r}, {r, r}).mfid, 0.0, 1e-8);

  // Per-class 1-D features with FID 1 (mean shift 1) and 3 (mean shift sqrt3).
  FeatureMatrix base(2, 1);
  base << -1, 1;
  FeatureMatrix shift1 = base.array() + 1.0, shift3 = base.array() + std::sqrt(3.0);
  const auto res = mfid_from_features({base, base}, {shift1, shift3});
  EXPECT_NEAR(res.per_class[0], 1.0, 1e-12);
  EXPECT_NEAR(res.per_class[1], 3.0, 1e-12);
  EXPECT_NEAR(res.mfid, 2.0, 1e-12);
}

TEST(Mfid, SkipsThinClassesAndFailsWithoutUsableOnes) {
  FeatureMatrix two(2, 1), one(1, 1);
  two << 0, 1;
  one << 0;
  const auto res = mfid_from_features({two, two}, {two, one});
  EXPECT_EQ(res.skipped, (std::vector<int>{1}));
  EXPECT_TRUE(std::isnan(res.per_class[1]));
  EXPECT_NEAR(res.mfid, 0.0, 1e-12);
  EXPECT_THROW(mfid_from_features({one}, {two}), std::invalid_argument);
}

TEST(Mfid, StubEmbedderIsDeterministicAndFinite) {
  const auto emb = make_stub_embedder();
  ImageBatch x({3, 32, 32, 3});
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<float> u(-1, 1);
  for (auto& v : x.values()) v = u(rng);
  const auto a = emb(x), b = make_stub_embedder()(x);
  ASSERT_EQ(a.rows(), 3);
  ASSERT_EQ(a.cols(), 64);
  EXPECT_TRUE(a.allFinite());
  EXPECT_EQ((a - b).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_GT((a.row(0) - a.row(1)).norm(), 0.0);
  const auto same = mfid({x, x}, {x, x}, emb);
  EXPECT_NEAR(same.mfid, 0.0, 1e-6);
}

TEST(DensityCoverage, WorkedExamples) {
  FeatureMatrix line(3, 1);
  line << 0, 1, 3;
  const auto self = density_coverage(line, line, 1);
  EXPECT_DOUBLE_EQ(self.coverage, 1.0);

  FeatureMatrix far(2, 1);
  far << 1e9, -1e9;
  const auto none = density_coverage(line, far, 1);
  EXPECT_DOUBLE_EQ(none.density, 0.0);
  EXPECT_DOUBLE_EQ(none.coverage, 0.0);

  // Reals 0, 1, 3, 7 with k=1 have radii 1, 1, 2, 4. Fakes 0.5 and 6:
  // 0.5 lies in the balls of 0 and 1; 6 lies in the ball of 7.
  FeatureMatrix reals(4, 1), fakes(2, 1);
  reals << 0, 1, 3, 7;
  fakes << 0.5, 6;
  const auto dc = density_coverage(reals, fakes, 1);
  EXPECT_DOUBLE_EQ(dc.density, 3.0 / 2.0);
  EXPECT_DOUBLE_EQ(dc.coverage, 3.0 / 4.0);
}

TEST(DensityCoverage, MatchesBruteForceOnRandomInstances) {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> z(0, 1);
  for (int t = 0; t < 200; ++t) {
    const int k = 1 + t % 5;
    const int N = k + 1 + static_cast<int>(rng() % 90), M = static_cast<int>(rng() % 100);
    const int d = 1 + t % 4;
    FeatureMatrix r(N, d), f(M, d);
    for (int i = 0; i < r.size(); ++i) r.data()[i] = z(rng);
    for (int i = 0; i < f.size(); ++i) f.data()[i] = z(rng) * 1.3 + 0.2;
    const auto got = density_coverage(r, f, k), want = brute_density_coverage(r, f, k);
    ASSERT_DOUBLE_EQ(got.density, want.density) << t;
    ASSERT_DOUBLE_EQ(got.coverage, want.coverage) << t;
  }
}

TEST(DensityCoverage, Errors) {
  FeatureMatrix r(3, 2), f(2, 2), g(2, 3);
  r.setRandom();
  f.setRandom();
  g.setRandom();
  EXPECT_THROW(density_coverage(r, f, 0), std::invalid_argument);
  EXPECT_THROW(density_coverage(r, f, 3), std::invalid_argument);
  EXPECT_THROW(density_coverage(r, g, 1), std::invalid_argument);
}

TEST(Protocol, PairCountsFollowTheRecipe) {
  std::vector<int> labels;
  for (int k = 0; k < 10; ++k)
    for (int i = 0; i < 30; ++i) labels.push_back(k);
  const auto s = protocol_sample(labels, 3, 10, 5, 7);
  EXPECT_EQ(s.pairs.size(), 810u);
  EXPECT_TRUE(s.resampled_classes.empty());
  std::vector<int> per_class(10, 0);
  std::set<std::size_t> distinct_sources;
  for (const auto& p : s.pairs) {
    ASSERT_NE(labels[p.source], 3);
    ASSERT_EQ(labels[p.reference], 3);
    distinct_sources.insert(p.source);
    ++per_class[labels[p.source]];
  }
  EXPECT_EQ(distinct_sources.size(), 18u * 9u);
  for (int k = 0; k < 10; ++k) EXPECT_EQ(per_class[k], k == 3 ? 0 : 18 * 5);

  std::vector<int> two{0, 0, 1, 1, 1};
  EXPECT_EQ(protocol_sample(two, 0, 2, 1, 1).pairs.size(), 18u);
  EXPECT_EQ(protocol_sample(two, 0, 2, 1, 1).resampled_classes, (std::vector<int>{1}));
}

TEST(Protocol, SeededCallsAreIdentical) {
  std::vector<int> labels;
  for (int i = 0; i < 200; ++i) labels.push_back(i % 4);
  const auto a = protocol_sample(labels, 1, 4, 5, 99), b = protocol_sample(labels, 1, 4, 5, 99);
  ASSERT_EQ(a.pairs.size(), b.pairs.size());
  for (std::size_t i = 0; i < a.pairs.size(); ++i) {
    EXPECT_EQ(a.pairs[i].source, b.pairs[i].source);
    EXPECT_EQ(a.pairs[i].reference, b.pairs[i].reference);
  }
  EXPECT_THROW(protocol_sample(labels, 4, 4, 5, 1), std::out_of_range);
}

TEST(Report, MeanOfBestFive) {
  EXPECT_DOUBLE_EQ(mean_of_best({9, 1, 8, 2, 7, 3, 6, 4, 5}), 3.0);
  EXPECT_DOUBLE_EQ(mean_of_best({4, 2}), 3.0);
  EXPECT_THROW(mean_of_best({}), std::invalid_argument);
}
