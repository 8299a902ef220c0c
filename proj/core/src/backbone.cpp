#include "scca/backbone.hpp"

#include <stdexcept>
#include <string>

namespace scca::net {
namespace {

std::string block_path(std::size_t stage, std::size_t block) {
  return "backbone/stage" + std::to_string(stage + 1) + "/block" + std::to_string(block);
}

std::size_t block_stride(std::size_t stage, std::size_t block) { return stage > 0 && block == 0 ? 2 : 1; }

}  // namespace

void validate(const BackboneConfig& cfg) {
  if (cfg.stages() < 3) throw std::invalid_argument("backbone: at least 3 stages are required");
  if (cfg.blocks_per_stage == 0) throw std::invalid_argument("backbone: blocks per stage must be positive");
  if (cfg.in_channels == 0) throw std::invalid_argument("backbone: input channels must be positive");
  for (std::size_t c : cfg.channels)
    if (c == 0) throw std::invalid_argument("backbone: stage channel counts must be positive");
  const std::size_t div = std::size_t{1} << cfg.stages();
  if (cfg.image_size == 0 || cfg.image_size % div != 0) {
    throw std::invalid_argument("backbone: image size " + std::to_string(cfg.image_size) + " is not divisible by " +
                                std::to_string(div));
  }
}

std::array<LevelShape, 3> pyramid_shapes(const BackboneConfig& cfg) {
  validate(cfg);
  const std::size_t L = cfg.stages();
  std::array<LevelShape, 3> out;
  for (std::size_t i = 0; i < 3; ++i) {
    const std::size_t stage = L - 3 + i;
    out[i] = {cfg.channels[stage], cfg.image_size >> stage};
  }
  return out;
}

void init_backbone(nk::ParameterStore& store, const BackboneConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  std::size_t in = cfg.in_channels;
  for (std::size_t s = 0; s < cfg.stages(); ++s) {
    const std::size_t out = cfg.channels[s];
    for (std::size_t b = 0; b < cfg.blocks_per_stage; ++b) {
      const std::string p = block_path(s, b);
      nn::init_conv_bn(store, p + "/a", out, in, 3, seed);
      nn::init_conv_bn(store, p + "/b", out, out, 3, seed);
      if (in != out || block_stride(s, b) != 1) nn::init_conv_bn(store, p + "/skip", out, in, 1, seed);
      in = out;
    }
  }
}

Pyramid backbone_forward(nn::Context& ctx, const BackboneConfig& cfg, const nk::Var& images) {
  validate(cfg);
  const auto& shape = images.shape();
  if (shape.size() != 4 || shape[1] != cfg.in_channels || shape[2] != cfg.image_size || shape[3] != cfg.image_size) {
    throw std::invalid_argument("backbone: expected input [B, " + std::to_string(cfg.in_channels) + ", " +
                                std::to_string(cfg.image_size) + ", " + std::to_string(cfg.image_size) + "], got " +
                                nk::shape_string(shape));
  }
  Pyramid pyr;
  nk::Var x = images;
  const std::size_t L = cfg.stages();
  for (std::size_t s = 0; s < L; ++s) {
    for (std::size_t b = 0; b < cfg.blocks_per_stage; ++b) {
      const std::string p = block_path(s, b);
      const std::size_t stride = block_stride(s, b);
      nk::Var h = nn::conv_bn_relu(ctx, p + "/a", x, stride, 1);
      h = nn::conv_bn(ctx, p + "/b", h, 1, 1);
      nk::Var skip = ctx.store.has_param(p + "/skip/conv/w") ? nn::conv_bn(ctx, p + "/skip", x, stride, 0) : x;
      x = nk::relu(nk::add(h, skip));
    }
    if (s + 3 >= L) pyr.levels[s + 3 - L] = x;
  }
  return pyr;
}

}  // namespace scca::net
