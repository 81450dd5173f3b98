#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gradcheck.hpp"
#include "unitrans/translation_nets.hpp"

using namespace unitrans;
using unitrans::testing::gradcheck;
using unitrans::testing::random_tensor;

namespace {

ImageBatch random_images(std::int64_t B, std::int64_t R, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1.f, 1.f);
  ImageBatch x({B, R, R, 3});
  for (auto& v : x.values()) v = u(rng);
  return x;
}

std::int64_t conv_params(std::int64_t in, std::int64_t out, std::int64_t k, bool bias = true) {
  return in * out * k * k + (bias ? out : 0);
}

}  // namespace

TEST(Generator, TranslateShapeAndRange) {
  Rng rng(1);
  Generator<float> g({64, 128, 128}, rng);
  auto x = random_images(2, 128, 2);
  auto s = normal_tensor<float>({2, 128}, 1.0, rng);
  auto y = translate(g, x, s);
  EXPECT_EQ(y.shape(), (Shape{2, 128, 128, 3}));
  for (auto v : y.values()) {
    ASSERT_TRUE(std::isfinite(v));
    ASSERT_GE(v, -1.f);
    ASSERT_LE(v, 1.f);
  }
}

TEST(Generator, BatchMismatchThrows) {
  Rng rng(1);
  Generator<float> g({4, 8, 32}, rng);
  auto x = random_images(2, 32, 2);
  EXPECT_THROW(translate(g, x, Tensor<float>({3, 8})), ShapeError);
  EXPECT_THROW(translate(g, random_images(2, 64, 2), Tensor<float>({2, 8})), ShapeError);
  EXPECT_THROW(Generator<float>({4, 8, 36}, rng), ConfigError);
}

TEST(Generator, ParameterAndShapeManifest) {
  Rng rng(1);
  Generator<float> g({64, 128, 128}, rng);
  const std::int64_t adain_channels = 4 * 512 + 256 + 128 + 64;
  const std::int64_t expected = conv_params(3, 64, 7) + conv_params(64, 128, 4) + conv_params(128, 256, 4) +
                                conv_params(256, 512, 4) + 8 * conv_params(512, 512, 3) +
                                conv_params(512, 256, 5) + conv_params(256, 128, 5) + conv_params(128, 64, 5) +
                                conv_params(64, 3, 7) + (128 + 1) * 2 * adain_channels;
  EXPECT_EQ(g.params().parameter_count(), expected);
  ASSERT_EQ(g.adain_sites().size(), 7u);
  EXPECT_EQ(g.params().param("style_mapper.weight").shape(), (Shape{128, 2 * adain_channels}));

  std::vector<LayerTrace> tr;
  NoGrad guard;
  g.forward(Var<float>::constant(Tensor<float>({1, 3, 128, 128})), Var<float>::constant(Tensor<float>({1, 128})), &tr);
  const std::vector<std::pair<std::string, Shape>> want{
      {"enc.conv0", {1, 64, 128, 128}}, {"enc.down1", {1, 128, 64, 64}}, {"enc.down2", {1, 256, 32, 32}},
      {"enc.down3", {1, 512, 16, 16}},  {"res0", {1, 512, 16, 16}},      {"res1", {1, 512, 16, 16}},
      {"ares0", {1, 512, 16, 16}},      {"ares1", {1, 512, 16, 16}},     {"dec.up1", {1, 256, 32, 32}},
      {"dec.up2", {1, 128, 64, 64}},    {"dec.up3", {1, 64, 128, 128}},  {"dec.out", {1, 3, 128, 128}}};
  ASSERT_EQ(tr.size(), want.size());
  for (std::size_t i = 0; i < want.size(); ++i) {
    EXPECT_EQ(tr[i].layer, want[i].first);
    EXPECT_EQ(tr[i].shape, want[i].second) << want[i].first;
  }
}

TEST(Generator, ZeroMapperMakesAdainAnInstanceNorm) {
  std::mt19937_64 r(3);
  auto x = Var<double>::constant(random_tensor({2, 4, 5, 5}, r));
  auto ones = Var<double>::constant(Tensor<double>({2, 4}, 1.0));
  auto zeros = Var<double>::constant(Tensor<double>({2, 4}));
  auto a = adain(x, ones, zeros).value();
  auto b = instance_norm(x).value();
  for (std::int64_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);

  // With a zero style mapper every style code produces the same image.
  Rng rng(4);
  Generator<double> g({2, 8, 32}, rng);
  for (auto* name : {"style_mapper.weight", "style_mapper.bias"}) {
    Var<double> p = g.params().param(name);
    for (auto& v : p.mutable_value().values()) v = 0;
  }
  auto img = Var<double>::constant(random_tensor({1, 3, 32, 32}, r));
  auto y1 = g.forward(img, Var<double>::constant(random_tensor({1, 8}, r))).value();
  auto y2 = g.forward(img, Var<double>::constant(random_tensor({1, 8}, r))).value();
  for (std::int64_t i = 0; i < y1.size(); ++i) EXPECT_DOUBLE_EQ(y1[i], y2[i]);
}

TEST(Generator, GradientReachesImageAndStyle) {
  Rng rng(5);
  Generator<double> g({2, 8, 32}, rng);
  std::mt19937_64 r(6);
  auto x = Var<double>::leaf(random_tensor({2, 3, 32, 32}, r, 0.5), true);
  auto s = Var<double>::leaf(random_tensor({2, 8}, r), true);
  auto gs = grad(sum_all(square(g.forward(x, s))), {x, s});
  double nx = 0, ns = 0;
  for (auto v : gs[0].value().values()) nx += v * v;
  for (auto v : gs[1].value().values()) ns += v * v;
  EXPECT_GT(nx, 0);
  EXPECT_GT(ns, 0);
}

TEST(Generator, GradientMatchesFiniteDifferences) {
  Rng rng(7);
  Generator<double> g({2, 8, 32}, rng);
  std::mt19937_64 r(8);
  auto x = Var<double>::leaf(random_tensor({2, 3, 32, 32}, r, 0.5), true);
  auto s = Var<double>::leaf(random_tensor({2, 8}, r), true);
  auto target = random_tensor({2, 3, 32, 32}, r, 0.5);
  auto f = [&] { return mean_all(square(sub(g.forward(x, s), Var<double>::constant(target)))); };
  auto inputs = g.params().params();
  inputs.push_back(x);
  inputs.push_back(s);
  auto res = gradcheck(f, inputs);
  EXPECT_LT(res.max_relative_error, 1e-5);
  EXPECT_GT(res.analytic_norm, 0);
}

TEST(Discriminator, OutputShapesForOneAndTenDomains) {
  Rng rng(1);
  for (int K : {1, 10}) {
    Discriminator<float> d({8, K, 64}, rng);
    auto out = d.discriminate(random_images(3, 64, 4));
    EXPECT_EQ(out.shape(), (Shape{3, K}));
    for (auto v : out.values()) EXPECT_TRUE(std::isfinite(v));
    auto flat = d.discriminate(ImageBatch({2, 64, 64, 3}, 0.25f));
    for (auto v : flat.values()) EXPECT_TRUE(std::isfinite(v));
  }
  EXPECT_THROW(Discriminator<float>({8, 0, 64}, rng), ConfigError);
  EXPECT_THROW(Discriminator<float>({8, 3, 48}, rng), ConfigError);
}

TEST(Discriminator, ParameterAndShapeManifest) {
  Rng rng(1);
  const int K = 10;
  Discriminator<float> d({64, K, 128}, rng);
  struct B {
    std::int64_t in, out;
  };
  const std::vector<B> blocks{{64, 64},    {64, 128},   {128, 128},  {128, 256},   {256, 256},
                              {256, 512},  {512, 512},  {512, 1024}, {1024, 1024}, {1024, 1024}};
  std::int64_t expected = conv_params(3, 64, 3);
  for (auto b : blocks) {
    expected += 3 * b.in + conv_params(b.in, b.in, 3) + 3 * b.in + conv_params(b.in, b.out, 3);
    if (b.in != b.out) expected += conv_params(b.in, b.out, 1, false);
  }
  expected += conv_params(1024, 1024, 4) + conv_params(1024, K, 1);
  EXPECT_EQ(d.params().parameter_count(), expected);

  std::vector<LayerTrace> tr;
  NoGrad guard;
  d.forward(Var<float>::constant(Tensor<float>({1, 3, 128, 128})), &tr);
  const std::vector<Shape> want{{1, 64, 128, 128}, {1, 64, 128, 128}, {1, 128, 64, 64}, {1, 128, 64, 64},
                                {1, 256, 32, 32},  {1, 256, 32, 32},  {1, 512, 16, 16}, {1, 512, 16, 16},
                                {1, 1024, 8, 8},   {1, 1024, 8, 8},   {1, 1024, 4, 4},  {1, 1024, 1, 1},
                                {1, K, 1, 1}};
  ASSERT_EQ(tr.size(), want.size());
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_EQ(tr[i].shape, want[i]) << tr[i].layer;
  EXPECT_EQ(tr.front().layer, "stem");
  EXPECT_EQ(tr.back().layer, "head.out");
}

TEST(Discriminator, GradientMatchesFiniteDifferences) {
  Rng rng(9);
  Discriminator<double> d({2, 3, 16, 4}, rng);
  unitrans::testing::generic_point(d.params(), 11);
  std::mt19937_64 r(10);
  auto x = Var<double>::leaf(random_tensor({2, 3, 16, 16}, r, 0.5), true);
  auto f = [&] { return sum_all(select_head(d.forward(x), {2, 0})); };
  auto inputs = d.params().params();
  inputs.push_back(x);
  auto res = gradcheck(f, inputs);
  EXPECT_LT(res.max_relative_error, 1e-5);
}

TEST(SelectHead, PicksOneLogitPerRow) {
  Tensor<double> logits({3, 4}, {0, 1, 2, 3, 10, 11, 12, 13, 20, 21, 22, 23});
  auto l = Var<double>::leaf(logits, true);
  auto picked = select_head(l, {3, 0, 2});
  EXPECT_EQ(picked.shape(), (Shape{3}));
  EXPECT_DOUBLE_EQ(picked.value()[0], 3);
  EXPECT_DOUBLE_EQ(picked.value()[1], 10);
  EXPECT_DOUBLE_EQ(picked.value()[2], 22);

  // Unselected heads receive exactly zero gradient.
  auto g = grad(sum_all(picked), {l})[0].value();
  const std::vector<double> want{0, 0, 0, 1, 1, 0, 0, 0, 0, 0, 1, 0};
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_EQ(g[i], want[i]);

  EXPECT_THROW(select_head(l, {0, 4, 1}), std::out_of_range);
  EXPECT_THROW(select_head(l, {0, 1}), ShapeError);
}
