#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "scca/layers.hpp"

namespace scca::net {

struct BackboneConfig {
  std::vector<std::size_t> channels{8, 16, 32, 64, 128};
  std::size_t blocks_per_stage = 1;
  std::size_t image_size = 64;
  std::size_t in_channels = 3;

  std::size_t stages() const { return channels.size(); }
};

// Throws for fewer than 3 stages, zero channels or blocks, or an image size not
// divisible by 2^stages.
void validate(const BackboneConfig& cfg);

// Channel count and spatial side of one pyramid level.
struct LevelShape {
  std::size_t channels = 0;
  std::size_t size = 0;
};

// Shapes of the last three stage outputs, shallow to deep. Stage 1 keeps the
// input resolution and each later stage halves it.
std::array<LevelShape, 3> pyramid_shapes(const BackboneConfig& cfg);

// Last three stage outputs {F_{L-2}, F_{L-1}, F_L}.
struct Pyramid {
  std::array<nk::Var, 3> levels;
};

// Parameters live under `backbone/stage<s>/block<b>/...`.
void init_backbone(nk::ParameterStore& store, const BackboneConfig& cfg, std::uint64_t seed);

// images: [B, in_channels, S, S]
Pyramid backbone_forward(nn::Context& ctx, const BackboneConfig& cfg, const nk::Var& images);

}  // namespace scca::net
