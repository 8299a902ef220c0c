#include <gtest/gtest.h>

#include <algorithm>

#include "oracles.hpp"
#include "scca/backbone.hpp"

namespace nk = scca::nk;
namespace nn = scca::nn;
namespace net = scca::net;
using scca::Rng;

TEST(Backbone, PyramidShapesFollowStageStrides) {
  net::BackboneConfig cfg;
  cfg.image_size = 64;
  cfg.channels = {8, 16, 32, 64, 128};
  const auto shapes = net::pyramid_shapes(cfg);
  EXPECT_EQ(shapes[0].size, 16u);
  EXPECT_EQ(shapes[1].size, 8u);
  EXPECT_EQ(shapes[2].size, 4u);
  EXPECT_EQ(shapes[0].channels, 32u);
  EXPECT_EQ(shapes[2].channels, 128u);

  nk::ParameterStore store;
  cfg.image_size = 32;
  net::init_backbone(store, cfg, 1);
  nk::Tape tape;
  nn::Context ctx{tape, store, nk::BnMode::Train};
  Rng rng(31);
  const auto pyr = net::backbone_forward(ctx, cfg, tape.constant(scca::oracle::random_tensor({2, 3, 32, 32}, rng)));
  const auto s = net::pyramid_shapes(cfg);
  for (std::size_t i = 0; i < 3; ++i)
    EXPECT_EQ(pyr.levels[i].shape(), (nk::Shape{2, s[i].channels, s[i].size, s[i].size}));
}

TEST(Backbone, InvalidConfigurations) {
  net::BackboneConfig cfg;
  cfg.channels = {8, 16};
  EXPECT_THROW(net::validate(cfg), std::invalid_argument);
  cfg.channels = {8, 16, 32, 64, 128};
  cfg.image_size = 48;
  EXPECT_THROW(net::validate(cfg), std::invalid_argument);
  cfg.image_size = 64;
  cfg.channels[2] = 0;
  EXPECT_THROW(net::validate(cfg), std::invalid_argument);

  cfg.channels = {4, 4, 4};
  cfg.image_size = 8;
  nk::ParameterStore store;
  net::init_backbone(store, cfg, 0);
  nk::Tape tape;
  nn::Context ctx{tape, store};
  EXPECT_THROW(net::backbone_forward(ctx, cfg, tape.constant(nk::Tensor({1, 3, 16, 16}))), std::invalid_argument);
}

TEST(Backbone, ZeroFinalStageScalesGiveConstantOutput) {
  net::BackboneConfig cfg;
  cfg.channels = {4, 6, 8};
  cfg.image_size = 16;
  nk::ParameterStore store;
  net::init_backbone(store, cfg, 2);
  std::vector<double> shift(8, 0.0);
  for (auto& [path, p] : store.params()) {
    if (path.rfind("backbone/stage3/", 0) != 0) continue;
    if (path.ends_with("/gamma")) std::fill(p.value.data().begin(), p.value.data().end(), 0.0);
    if (path.ends_with("/beta")) {
      for (std::size_t c = 0; c < 8; ++c) {
        p.value[c] = 0.1 * static_cast<double>(c) - 0.3;
        if (path.find("/a/") == std::string::npos) shift[c] += p.value[c];
      }
    }
  }
  nk::Tape tape;
  nn::Context ctx{tape, store};
  Rng rng(32);
  const nk::Tensor out =
      net::backbone_forward(ctx, cfg, tape.constant(scca::oracle::random_tensor({3, 3, 16, 16}, rng))).levels[2].value();
  const std::size_t hw = 16;
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t c = 0; c < 8; ++c)
      for (std::size_t i = 0; i < hw; ++i) EXPECT_DOUBLE_EQ(out[(b * 8 + c) * hw + i], std::max(0.0, shift[c]));
}

TEST(Backbone, InitialisationDependsOnlyOnSeedAndPath) {
  net::BackboneConfig a, b;
  a.channels = {4, 8, 16};
  a.image_size = 16;
  b = a;
  b.channels.push_back(32);
  nk::ParameterStore sa, sb, sc;
  net::init_backbone(sa, a, 5);
  net::init_backbone(sb, b, 5);
  net::init_backbone(sc, a, 6);
  for (const auto& [path, p] : sa.params()) {
    EXPECT_EQ(p.value, sb.param(path).value) << path;
    if (path.ends_with("/w")) EXPECT_NE(p.value, sc.param(path).value) << path;
  }
}

TEST(Backbone, EvalModeUsesRunningStatistics) {
  net::BackboneConfig cfg;
  cfg.channels = {4, 4, 4};
  cfg.image_size = 8;
  nk::ParameterStore store;
  net::init_backbone(store, cfg, 3);
  Rng rng(33);
  const nk::Tensor x = scca::oracle::random_tensor({2, 3, 8, 8}, rng);
  const auto buffers = store.buffers();
  nk::Tape t1;
  nn::Context eval{t1, store, nk::BnMode::Eval};
  const nk::Tensor one = net::backbone_forward(eval, cfg, t1.constant(x)).levels[2].value();
  for (const auto& [path, b] : store.buffers()) EXPECT_EQ(b, buffers.at(path)) << path;
  nk::Tape t2;
  nn::Context eval2{t2, store, nk::BnMode::Eval};
  const nk::Tensor first_sample = net::backbone_forward(eval2, cfg, t2.constant(nk::Tensor(
      {1, 3, 8, 8}, std::vector<double>(x.data().begin(), x.data().begin() + 192)))).levels[2].value();
  for (std::size_t i = 0; i < first_sample.size(); ++i) EXPECT_NEAR(first_sample[i], one[i], 1e-12);
}
