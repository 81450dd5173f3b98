#include <gtest/gtest.h>

#include <cmath>
#include <deque>
#include <random>

#include "gradcheck.hpp"
#include "unitrans/guiding_network.hpp"

using namespace unitrans;
using unitrans::testing::gradcheck;
using unitrans::testing::random_tensor;

namespace {

Tensor<double> rows(std::int64_t b, std::int64_t k, std::vector<double> v) { return Tensor<double>({b, k}, std::move(v)); }

Tensor<double> random_simplex(std::int64_t b, std::int64_t k, std::mt19937_64& rng) {
  std::gamma_distribution<double> g(0.5, 1.0);
  Tensor<double> p({b, k});
  for (std::int64_t i = 0; i < b; ++i) {
    double s = 0;
    for (std::int64_t j = 0; j < k; ++j) s += p[i * k + j] = g(rng) + 1e-12;
    for (std::int64_t j = 0; j < k; ++j) p[i * k + j] /= s;
  }
  return p;
}

// Direct double sum over the joint matrix, written independently of the library.
double mi_oracle(const Tensor<double>& p, const Tensor<double>& q) {
  const auto B = p.dim(0), K = p.dim(1);
  std::vector<double> P(K * K, 0.0);
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t i = 0; i < K; ++i)
      for (std::int64_t j = 0; j < K; ++j) P[i * K + j] += p[b * K + i] * q[b * K + j] / B;
  std::vector<double> S(K * K);
  double total = 0;
  for (std::int64_t i = 0; i < K; ++i)
    for (std::int64_t j = 0; j < K; ++j) total += S[i * K + j] = 0.5 * (P[i * K + j] + P[j * K + i]);
  for (auto& v : S) v /= total;
  double I = 0;
  for (std::int64_t i = 0; i < K; ++i)
    for (std::int64_t j = 0; j < K; ++j) {
      double pi = 0, pj = 0;
      for (std::int64_t t = 0; t < K; ++t) pi += S[i * K + t], pj += S[t * K + j];
      const double v = std::max(S[i * K + j], 1e-8);
      I += S[i * K + j] * std::log(v / (std::max(pi, 1e-8) * std::max(pj, 1e-8)));
    }
  return I;
}

ImageBatch random_images(std::int64_t b, std::int64_t res, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1.f, 1.f);
  ImageBatch x({b, res, res, 3});
  for (auto& v : x.values()) v = u(rng);
  return x;
}

}  // namespace

TEST(GuidingNetwork, EncodeShapesAndSimplex) {
  Rng rng(1);
  GuidingNetwork<float> E({10, 64, 128, 128}, rng);
  auto out = E.encode(random_images(2, 128, 3));
  EXPECT_EQ(out.posterior.shape(), (Shape{2, 10}));
  EXPECT_EQ(out.style.shape(), (Shape{2, 128}));
  for (int b = 0; b < 2; ++b) {
    double s = 0;
    for (int k = 0; k < 10; ++k) {
      EXPECT_GE(out.posterior.value()[b * 10 + k], 0.f);
      s += out.posterior.value()[b * 10 + k];
    }
    EXPECT_NEAR(s, 1.0, 1e-5);
  }
}

TEST(GuidingNetwork, ZeroImageIsFinite) {
  Rng rng(2);
  GuidingNetwork<float> E({4, 8, 128, 64}, rng);
  auto out = E.encode(ImageBatch({1, 64, 64, 3}, 0.f));
  for (float v : out.posterior.value().values()) EXPECT_TRUE(std::isfinite(v));
  for (float v : out.style.value().values()) EXPECT_TRUE(std::isfinite(v));
}

TEST(GuidingNetwork, EvalModeIsDeterministicPerRow) {
  Rng rng(3);
  GuidingNetwork<float> E({3, 8, 128, 64}, rng);
  auto one = random_images(1, 64, 5);
  ImageBatch two({2, 64, 64, 3});
  std::copy(one.data(), one.data() + one.size(), two.data());
  std::copy(one.data(), one.data() + one.size(), two.data() + one.size());
  auto a = E.encode(two);
  for (int j = 0; j < 128; ++j) EXPECT_EQ(a.style.value()[j], a.style.value()[128 + j]);
  auto b = E.encode(two);
  EXPECT_TRUE(a.style.value() == b.style.value());
  EXPECT_TRUE(a.posterior.value() == b.posterior.value());
}

TEST(GuidingNetwork, WrongResolutionNamesDims) {
  Rng rng(4);
  GuidingNetwork<float> E({3, 8, 128, 64}, rng);
  try {
    E.encode(random_images(1, 32, 1));
    FAIL() << "expected a configuration error";
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[1,3,64,64]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[1,3,32,32]"), std::string::npos) << msg;
  }
}

TEST(GuidingNetwork, TrainModeUpdatesRunningStatistics) {
  Rng rng(5);
  GuidingNetwork<float> E({3, 4, 16, 32}, rng);
  const auto before = E.params().buffer("backbone.0.bn.running_mean");
  E.forward(Var<float>::constant(nhwc_to_nchw<float>(random_images(4, 32, 2))), Mode::train);
  EXPECT_FALSE(before == E.params().buffer("backbone.0.bn.running_mean"));
}

// Hand-computed parameter counts for the table layout at ch = 64.
TEST(GuidingNetwork, ParameterAndShapeManifest) {
  Rng rng(6);
  const int K = 10;
  GuidingNetwork<float> E({K, 64, 128, 128}, rng);
  const std::int64_t conv = (3 * 64 * 9 + 64) + (64 * 128 * 9 + 128) + (128 * 256 * 9 + 256) + (256 * 256 * 9 + 256) +
                            (256 * 512 * 9 + 512) + 3 * (512 * 512 * 9 + 512);
  const std::int64_t bn = 2 * (64 + 128 + 256 + 256 + 512 + 512 + 512 + 512);
  const std::int64_t heads = (512 * 128 + 128) + (512 * K + K);
  EXPECT_EQ(E.params().parameter_count(), conv + bn + heads);

  std::vector<LayerTrace> trace;
  E.encode(Var<float>::constant(Tensor<float>({1, 3, 128, 128})), &trace);
  const std::vector<Shape> expected{{1, 64, 64, 64},  {1, 128, 32, 32}, {1, 256, 32, 32}, {1, 256, 16, 16},
                                    {1, 512, 16, 16}, {1, 512, 8, 8},   {1, 512, 8, 8},   {1, 512, 4, 4},
                                    {1, 512},         {1, 128},         {1, K}};
  ASSERT_EQ(trace.size(), expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_EQ(trace[i].shape, expected[i]) << trace[i].layer;
}

TEST(PseudoLabel, ArgmaxAndTies) {
  std::vector<float> p{0.1f, 0.7f, 0.2f};
  EXPECT_EQ(pseudo_label<float>(p), 1);
  std::vector<float> u(4, 0.25f);
  EXPECT_EQ(pseudo_label<float>(u), 0);
}

TEST(PseudoLabel, InvariantUnderMonotoneLogitMaps) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    auto logits = Var<double>::constant(random_tensor({1, 6}, rng, 2.0));
    auto cubed = Var<double>::constant(detail::map(logits.value(), [](double v) { return v * v * v + 3 * v; }));
    auto a = pseudo_labels(softmax_rows(logits).value());
    auto b = pseudo_labels(softmax_rows(cubed).value());
    EXPECT_EQ(a, b);
  }
}

TEST(MutualInformation, PerfectlyCorrelatedOneHot) {
  auto p = Var<double>::constant(rows(2, 2, {1, 0, 0, 1}));
  auto mi = mutual_information_loss(p, p);
  EXPECT_NEAR(mi.information(), std::log(2.0), 1e-9);
  EXPECT_NEAR(mi.joint[0], 0.5, 1e-12);
  EXPECT_NEAR(mi.joint[3], 0.5, 1e-12);
  EXPECT_NEAR(mi.joint[1], 0.0, 1e-12);
}

TEST(MutualInformation, UniformPosteriorsGiveZero) {
  const int K = 5;
  auto p = Var<double>::constant(Tensor<double>({3, K}, 1.0 / K));
  auto mi = mutual_information_loss(p, p);
  EXPECT_NEAR(mi.information(), 0.0, 1e-12);
  for (double v : mi.joint.values()) EXPECT_NEAR(v, 1.0 / (K * K), 1e-12);
}

TEST(MutualInformation, MatchesDirectDoubleSum) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    auto p = random_simplex(5, 3, rng), q = random_simplex(5, 3, rng);
    auto mi = mutual_information_loss(Var<double>::constant(p), Var<double>::constant(q));
    EXPECT_NEAR(mi.information(), mi_oracle(p, q), 1e-12);
    double total = 0;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        EXPECT_GE(mi.joint[i * 3 + j], 0.0);
        EXPECT_NEAR(mi.joint[i * 3 + j], mi.joint[j * 3 + i], 1e-15);
        total += mi.joint[i * 3 + j];
      }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(MutualInformation, BoundedByLogK) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 300; ++trial) {
    const int K = 2 + trial % 9;
    auto p = random_simplex(1 + trial % 16, K, rng), q = random_simplex(p.dim(0), K, rng);
    const double I = mutual_information_loss(Var<double>::constant(p), Var<double>::constant(q)).information();
    EXPECT_GE(I, -1e-6);
    EXPECT_LE(I, std::log(static_cast<double>(K)) + 1e-6);
  }
}

TEST(MutualInformation, EmptyBatchThrows) {
  auto p = Var<double>::constant(Tensor<double>({0, 3}));
  EXPECT_THROW(mutual_information_loss(p, p), std::invalid_argument);
}

TEST(MutualInformation, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(10);
  auto a = Var<double>::leaf(random_tensor({6, 4}, rng));
  auto b = Var<double>::leaf(random_tensor({6, 4}, rng));
  auto f = [&] { return mutual_information_loss(softmax_rows(a), softmax_rows(b)).loss; };
  auto r = gradcheck(f, {a, b});
  EXPECT_LT(r.max_relative_error, 1e-4);
  EXPECT_GT(r.analytic_norm, 0.0);
}

TEST(Contrastive, UniformLogitsGiveLogNPlusOne) {
  // s.s+ = s.s_n for all n.
  auto s = Var<double>::constant(rows(1, 2, {1, 0}));
  auto pos = rows(1, 2, {0.6, 0.8});
  auto neg = rows(2, 2, {0.6, -0.8, 0.6, 0.8});
  EXPECT_NEAR(contrastive_loss(s, pos, neg, 1.0).item(), std::log(3.0), 1e-12);
}

TEST(Contrastive, OrthogonalNegatives) {
  auto s = Var<double>::constant(rows(1, 3, {1, 0, 0}));
  auto neg = rows(2, 3, {0, 1, 0, 0, 0, 1});
  const double expected = -std::log(std::exp(1.0) / (std::exp(1.0) + 2.0));
  EXPECT_NEAR(style_contrastive_loss(s, s.value(), neg, 1.0).item(), expected, 1e-12);
  EXPECT_NEAR(expected, 0.5514, 1e-4);
}

TEST(Contrastive, DecreasesAsPositiveSimilarityGrows) {
  auto s = Var<double>::constant(rows(1, 2, {1, 0}));
  auto neg = rows(3, 2, {0, 1, -1, 0, 0.6, 0.8});
  double prev = std::numeric_limits<double>::infinity();
  for (double angle = 3.0; angle >= 0.0; angle -= 0.25) {
    const double loss = contrastive_loss(s, rows(1, 2, {std::cos(angle), std::sin(angle)}), neg, 0.07).item();
    EXPECT_GT(loss, 0.0);
    EXPECT_LT(loss, prev);
    prev = loss;
  }
}

TEST(Contrastive, WarmupAndErrors) {
  auto s = Var<double>::constant(rows(1, 2, {1, 0}));
  EXPECT_NEAR(contrastive_loss(s, s.value(), Tensor<double>(Shape{0, 2}), 0.07).item(), 0.0, 1e-15);
  auto neg = rows(1, 2, {0, 1});
  const double one = contrastive_loss(s, s.value(), neg, 1.0).item();
  EXPECT_NEAR(one, std::log(1 + std::exp(-1.0)), 1e-12);
  EXPECT_THROW(contrastive_loss(Var<double>::constant(Tensor<double>({0, 2})), Tensor<double>({0, 2}), neg, 1.0),
               std::invalid_argument);
  EXPECT_THROW(contrastive_loss(s, s.value(), neg, 0.0), std::invalid_argument);
}

TEST(Contrastive, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  auto raw = Var<double>::leaf(random_tensor({3, 5}, rng));
  auto pos = l2_normalize_rows(Var<double>::constant(random_tensor({3, 5}, rng))).value();
  auto neg = l2_normalize_rows(Var<double>::constant(random_tensor({7, 5}, rng))).value();
  auto f = [&] { return style_contrastive_loss(l2_normalize_rows(raw), pos, neg, 0.07); };
  auto r = gradcheck(f, {raw});
  EXPECT_LT(r.max_relative_error, 1e-4);
  EXPECT_GT(r.analytic_norm, 0.0);
}

TEST(StyleCode, NormalizedCopyHasUnitNorm) {
  std::mt19937_64 rng(12);
  auto s = l2_normalize_rows(Var<double>::constant(random_tensor({4, 128}, rng, 3.0))).value();
  for (int b = 0; b < 4; ++b) {
    double n = 0;
    for (int j = 0; j < 128; ++j) n += s[b * 128 + j] * s[b * 128 + j];
    EXPECT_NEAR(std::sqrt(n), 1.0, 1e-6);
  }
}

namespace {

GuidingNetwork<float> tiny_net(unsigned seed) {
  Rng rng(seed);
  return GuidingNetwork<float>({2, 2, 4, 32}, rng);
}

void fill(ParamStore<float>& ps, float v) {
  for (auto& p : ps.params()) p.mutable_value().fill(v);
}

}  // namespace

TEST(Momentum, ClosedFormValues) {
  auto query = tiny_net(1);
  StyleQueue<float> q0({16, 0.0, 0.07}, tiny_net(2));
  q0.momentum_update(query);
  for (std::size_t i = 0; i < query.params().params().size(); ++i)
    EXPECT_TRUE(q0.key_encoder().params().params()[i].value() == query.params().params()[i].value());

  auto key_net = tiny_net(3);
  StyleQueue<float> q1({16, 1.0, 0.07}, key_net);
  q1.momentum_update(query);
  for (std::size_t i = 0; i < query.params().params().size(); ++i)
    EXPECT_TRUE(q1.key_encoder().params().params()[i].value() == key_net.params().params()[i].value());

  StyleQueue<float> q2({16, 0.999, 0.07}, tiny_net(4));
  fill(q2.key_encoder().params(), 0.f);
  auto ones = tiny_net(5);
  fill(ones.params(), 1.f);
  q2.momentum_update(ones);
  q2.momentum_update(ones);
  for (const auto& p : q2.key_encoder().params().params())
    for (float v : p.value().values()) EXPECT_NEAR(v, 0.001999, 1e-6);
}

TEST(Momentum, ShapeMismatchThrows) {
  StyleQueue<float> q({16, 0.9, 0.07}, tiny_net(1));
  Rng rng(2);
  GuidingNetwork<float> other({3, 2, 4, 32}, rng);
  EXPECT_THROW(q.momentum_update(other), ShapeError);
}

namespace {

Tensor<float> codes(std::initializer_list<float> ids) {
  Tensor<float> t({static_cast<std::int64_t>(ids.size()), 2});
  std::int64_t i = 0;
  for (float v : ids) t[2 * i] = v, t[2 * i + 1] = -v, ++i;
  return t;
}

std::vector<float> ids(const Tensor<float>& t) {
  std::vector<float> out;
  for (std::int64_t i = 0; i < t.dim(0); ++i) out.push_back(t[2 * i]);
  return out;
}

}  // namespace

TEST(Queue, FifoExamples) {
  StyleQueue<float> q({4, 0.999, 0.07}, tiny_net(1));
  q.push(codes({1, 2, 3, 4}));
  q.push(codes({5, 6}));
  EXPECT_EQ(ids(q.negatives()), (std::vector<float>{3, 4, 5, 6}));
  q.push(codes({7, 8, 9, 10, 11, 12}));
  EXPECT_EQ(ids(q.negatives()), (std::vector<float>{9, 10, 11, 12}));
  q.push(Tensor<float>(Shape{0, 2}));
  EXPECT_EQ(ids(q.negatives()), (std::vector<float>{9, 10, 11, 12}));
  EXPECT_EQ(q.size(), 4);
}

TEST(Queue, ExhaustiveSequencesMatchReferenceDeque) {
  // Every sequence of three pushes with sizes 0..5 into capacity 1..4.
  for (std::size_t cap = 1; cap <= 4; ++cap) {
    for (int a = 0; a <= 5; ++a)
      for (int b = 0; b <= 5; ++b)
        for (int c = 0; c <= 5; ++c) {
          StyleQueue<float> q({cap, 0.999, 0.07}, tiny_net(1));
          std::deque<float> ref;
          float next = 1;
          for (int n : {a, b, c}) {
            Tensor<float> batch({n, 2});
            for (int i = 0; i < n; ++i) {
              batch[2 * i] = next, batch[2 * i + 1] = -next;
              ref.push_back(next++);
              if (ref.size() > cap) ref.pop_front();
            }
            q.push(batch);
            ASSERT_EQ(ids(q.negatives()), std::vector<float>(ref.begin(), ref.end()));
            ASSERT_EQ(static_cast<std::size_t>(q.size()), ref.size());
          }
        }
  }
}
