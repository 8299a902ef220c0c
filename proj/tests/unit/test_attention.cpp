#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "scca/attention.hpp"

namespace nk = scca::nk;
namespace nn = scca::nn;
namespace net = scca::net;
namespace oracle = scca::oracle;
using scca::Rng;

namespace {

nk::Tensor upsample2x(const nk::Tensor& x) {
  const std::size_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  nk::Tensor out({b, c, 2 * h, 2 * w});
  for (std::size_t n = 0; n < b * c; ++n)
    for (std::size_t i = 0; i < 2 * h; ++i)
      for (std::size_t j = 0; j < 2 * w; ++j) out[(n * 2 * h + i) * 2 * w + j] = x[(n * h + i / 2) * w + j / 2];
  return out;
}

nk::Tensor concat(const nk::Tensor& a, const nk::Tensor& b) {
  const std::size_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1), hw = a.dim(2) * a.dim(3);
  nk::Tensor out({n, ca + cb, a.dim(2), a.dim(3)});
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t i = 0; i < ca * hw; ++i) out[s * (ca + cb) * hw + i] = a[s * ca * hw + i];
    for (std::size_t i = 0; i < cb * hw; ++i) out[s * (ca + cb) * hw + ca * hw + i] = b[s * cb * hw + i];
  }
  return out;
}

double sigmoid(long double v) { return static_cast<double>(1.0L / (1.0L + std::exp(-v))); }

nk::Tensor relu(nk::Tensor t) {
  for (double& v : t.data()) v = std::max(v, 0.0);
  return t;
}

}  // namespace

TEST(SemanticMerge, PassThroughConstruction) {
  nk::ParameterStore store;
  nk::Tensor w({3, 5, 1, 1}, 0.0);
  for (std::size_t c = 0; c < 3; ++c) w[c * 5 + c] = 1.0;
  store.add("m/w", w);
  Rng rng(41);
  const nk::Tensor shallow = oracle::random_tensor({2, 3, 4, 4}, rng);
  nk::Tape tape;
  nn::Context ctx{tape, store};
  const nk::Var out = net::semantic_merge(ctx, "m", tape.constant(nk::Tensor({2, 2, 2, 2}, 0.0)), tape.constant(shallow));
  EXPECT_EQ(out.value(), shallow);
}

TEST(SemanticMerge, ShapeAndCompositionOracle) {
  nk::ParameterStore store;
  Rng rng(42);
  const nk::Tensor w = oracle::random_tensor({32, 96, 1, 1}, rng);
  store.add("m/w", w);
  const nk::Tensor deep = oracle::random_tensor({2, 64, 4, 4}, rng), shallow = oracle::random_tensor({2, 32, 8, 8}, rng);
  nk::Tape tape;
  nn::Context ctx{tape, store};
  const nk::Tensor out = net::semantic_merge(ctx, "m", tape.constant(deep), tape.constant(shallow)).value();
  EXPECT_EQ(out.shape(), (nk::Shape{2, 32, 8, 8}));
  EXPECT_LT(oracle::max_abs_diff(out, oracle::conv2d(concat(shallow, upsample2x(deep)), w, 1, 0)), 1e-12);
  EXPECT_THROW(net::semantic_merge(ctx, "m", tape.constant(deep), tape.constant(nk::Tensor({2, 32, 4, 4}))),
               std::invalid_argument);
}

TEST(ChannelAttention, ZeroOutputWeightsGiveOneHalf) {
  nk::ParameterStore store;
  Rng rng(43);
  store.add("ca/w0", oracle::random_tensor({6, 3}, rng));
  store.add("ca/w1", nk::Tensor({3, 6}, 0.0));
  nk::Tape tape;
  nn::Context ctx{tape, store};
  const nk::Tensor a = net::channel_attention(ctx, "ca", tape.constant(oracle::random_tensor({2, 6, 3, 3}, rng))).value();
  EXPECT_EQ(a.shape(), (nk::Shape{2, 6}));
  for (double v : a.data()) EXPECT_EQ(v, 0.5);
}

TEST(ChannelAttention, ConstantInputDoublesOneBranch) {
  nk::ParameterStore store;
  Rng rng(44);
  const nk::Tensor w0 = oracle::random_tensor({4, 2}, rng), w1 = oracle::random_tensor({2, 4}, rng);
  store.add("ca/w0", w0);
  store.add("ca/w1", w1);
  const double c = 0.7;
  nk::Tape tape;
  nn::Context ctx{tape, store};
  const nk::Tensor a = net::channel_attention(ctx, "ca", tape.constant(nk::Tensor({1, 4, 3, 3}, c))).value();
  const nk::Tensor branch = oracle::matmul(relu(oracle::matmul(nk::Tensor({1, 4}, c), w0)), w1);
  for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(a[j], sigmoid(2.0L * branch[j]), 1e-15);
}

TEST(ChannelAttention, MatchesStepByStepOracle) {
  nk::ParameterStore store;
  Rng rng(45);
  const nk::Tensor w0 = oracle::random_tensor({8, 4}, rng), w1 = oracle::random_tensor({4, 8}, rng);
  store.add("ca/w0", w0);
  store.add("ca/w1", w1);
  const nk::Tensor f = oracle::random_tensor({3, 8, 5, 5}, rng);
  nk::Tensor avg({3, 8}), mx({3, 8});
  for (std::size_t n = 0; n < 24; ++n) {
    long double s = 0;
    double m = -1e300;
    for (std::size_t i = 0; i < 25; ++i) {
      s += f[n * 25 + i];
      m = std::max(m, f[n * 25 + i]);
    }
    avg[n] = static_cast<double>(s / 25);
    mx[n] = m;
  }
  const nk::Tensor za = oracle::matmul(relu(oracle::matmul(avg, w0)), w1);
  const nk::Tensor zm = oracle::matmul(relu(oracle::matmul(mx, w0)), w1);
  nk::Tape tape;
  nn::Context ctx{tape, store};
  const nk::Tensor a = net::channel_attention(ctx, "ca", tape.constant(f)).value();
  for (std::size_t i = 0; i < 24; ++i) EXPECT_NEAR(a[i], sigmoid(static_cast<long double>(za[i]) + zm[i]), 1e-12);
  EXPECT_THROW(net::channel_attention(ctx, "ca", tape.constant(nk::Tensor({1, 3, 2, 2}))), std::invalid_argument);
}

TEST(SpatialAttention, ZeroConvolutionGivesOneHalf) {
  nk::ParameterStore store;
  nn::init_conv(store, "sa", 1, 2, 7, 0, true);
  std::fill(store.param("sa/w").value.data().begin(), store.param("sa/w").value.data().end(), 0.0);
  Rng rng(46);
  nk::Tape tape;
  nn::Context ctx{tape, store};
  const nk::Tensor a = net::spatial_attention(ctx, "sa", tape.constant(oracle::random_tensor({2, 4, 6, 6}, rng))).value();
  EXPECT_EQ(a.shape(), (nk::Shape{2, 1, 6, 6}));
  for (double v : a.data()) EXPECT_EQ(v, 0.5);
}

TEST(SpatialAttention, MatchesCompositionOracle) {
  nk::ParameterStore store;
  Rng rng(47);
  const nk::Tensor w = oracle::random_tensor({1, 2, 7, 7}, rng);
  store.add("sa/w", w);
  store.add("sa/b", nk::Tensor::from({1}, {0.3}), false);
  for (std::size_t channels : {1, 5}) {
    const nk::Tensor f = oracle::random_tensor({2, channels, 6, 6}, rng);
    nk::Tensor pooled({2, 2, 6, 6});
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t i = 0; i < 36; ++i) {
        long double s = 0;
        double m = -1e300;
        for (std::size_t c = 0; c < channels; ++c) {
          s += f[(b * channels + c) * 36 + i];
          m = std::max(m, f[(b * channels + c) * 36 + i]);
        }
        pooled[(b * 2) * 36 + i] = static_cast<double>(s / channels);
        pooled[(b * 2 + 1) * 36 + i] = m;
        if (channels == 1) EXPECT_EQ(pooled[(b * 2) * 36 + i], pooled[(b * 2 + 1) * 36 + i]);
      }
    const nk::Tensor z = oracle::conv2d(pooled, w, 1, 3);
    nk::Tape tape;
    nn::Context ctx{tape, store};
    const nk::Tensor a = net::spatial_attention(ctx, "sa", tape.constant(f)).value();
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], sigmoid(z[i] + 0.3L), 1e-12);
  }
}

TEST(Modulate, ZeroMapsLeaveFeaturesUnchanged) {
  Rng rng(48);
  const nk::Tensor f = oracle::random_tensor({2, 3, 4, 4}, rng);
  nk::Tape tape;
  const nk::Tensor out =
      net::modulate(tape.constant(f), tape.constant(nk::Tensor({2, 3}, 0.0)), tape.constant(nk::Tensor({2, 1, 4, 4}, 0.0)))
          .value();
  EXPECT_EQ(out, f);
  const nk::Tensor cm = oracle::random_tensor({2, 3}, rng, 0, 1), sm = oracle::random_tensor({2, 1, 4, 4}, rng, 0, 1);
  const nk::Tensor g = net::modulate(tape.constant(f), tape.constant(cm), tape.constant(sm)).value();
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < 16; ++i) {
        const std::size_t k = (b * 3 + c) * 16 + i;
        EXPECT_NEAR(g[k], f[k] * cm[b * 3 + c] * sm[b * 16 + i] + f[k], 1e-15);
      }
}

class FuseTest : public ::testing::TestWithParam<net::AttentionMode> {};

TEST_P(FuseTest, ChannelCountAndDeterminism) {
  const std::array<net::LevelShape, 3> shapes{{{4, 8}, {6, 4}, {8, 2}}};
  EXPECT_EQ(net::fused_channels(shapes), 18u);
  nk::ParameterStore store;
  net::init_attention(store, shapes, GetParam(), 9);
  Rng rng(49);
  net::Pyramid pyr;
  std::array<nk::Tensor, 3> levels;
  for (std::size_t i = 0; i < 3; ++i) levels[i] = oracle::random_tensor({2, shapes[i].channels, shapes[i].size, shapes[i].size}, rng);
  auto run = [&] {
    nk::Tape tape;
    nn::Context ctx{tape, store};
    for (std::size_t i = 0; i < 3; ++i) pyr.levels[i] = tape.constant(levels[i]);
    return net::fuse(ctx, shapes, GetParam(), pyr).value();
  };
  const nk::Tensor a = run(), b = run();
  EXPECT_EQ(a.shape(), (nk::Shape{2, 18, 2, 2}));
  EXPECT_EQ(a, b);
  for (std::size_t s = 0; s < 2; ++s)
    for (std::size_t i = 0; i < 32; ++i) EXPECT_EQ(a[s * 72 + 40 + i], levels[2][s * 32 + i]);
}

INSTANTIATE_TEST_SUITE_P(Modes, FuseTest,
                         ::testing::Values(net::AttentionMode::Semantic, net::AttentionMode::Self, net::AttentionMode::Off),
                         [](const auto& info) { return net::to_string(info.param); });

TEST(Fuse, OffModeIsPlainMultiScaleConcat) {
  const std::array<net::LevelShape, 3> shapes{{{4, 8}, {4, 4}, {4, 2}}};
  nk::ParameterStore off, sem;
  net::init_attention(off, shapes, net::AttentionMode::Off, 3);
  net::init_attention(sem, shapes, net::AttentionMode::Semantic, 3);
  for (const auto& [path, p] : off.params()) EXPECT_EQ(p.value, sem.param(path).value) << path;
  EXPECT_FALSE(off.has_param("attention/level1/ca/w0"));
  EXPECT_TRUE(sem.has_param("attention/merge1/w"));

  Rng rng(50);
  net::Pyramid pyr;
  nk::Tape tape;
  nn::Context ctx{tape, off};
  for (std::size_t i = 0; i < 3; ++i)
    pyr.levels[i] = tape.constant(oracle::random_tensor({2, 4, shapes[i].size, shapes[i].size}, rng));
  const nk::Tensor out = net::fuse(ctx, shapes, net::AttentionMode::Off, pyr).value();
  nk::Var l2 = nn::conv_bn_relu(ctx, "attention/level2/branch", pyr.levels[0], 1, 1);
  l2 = nn::conv_bn_relu(ctx, "attention/level2/down0", l2, 2, 1);
  l2 = nn::conv_bn_relu(ctx, "attention/level2/down1", l2, 2, 1);
  nk::Var l1 = nn::conv_bn_relu(ctx, "attention/level1/branch", pyr.levels[1], 1, 1);
  l1 = nn::conv_bn_relu(ctx, "attention/level1/down0", l1, 2, 1);
  EXPECT_EQ(out, concat(concat(l2.value(), l1.value()), pyr.levels[2].value()));
}

TEST(Fuse, ParsesModeNames) {
  EXPECT_EQ(net::parse_attention_mode("self"), net::AttentionMode::Self);
  EXPECT_EQ(net::to_string(net::parse_attention_mode("semantic")), "semantic");
  EXPECT_THROW(net::parse_attention_mode("cbam"), std::invalid_argument);
}
