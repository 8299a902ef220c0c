#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "scca/backbone.hpp"
#include "scca/layers.hpp"

// Attention-guided multi-scale fusion. The two shallow pyramid levels are
// modulated by channel and spatial attention maps, brought down to the deepest
// level's resolution and concatenated with it.
namespace scca::net {

enum class AttentionMode {
  Semantic,  // maps computed from features merged with deeper context
  Self,      // maps computed from the level's own features
  Off,       // no modulation: plain multi-scale concatenation
};

AttentionMode parse_attention_mode(const std::string& s);
std::string to_string(AttentionMode mode);

// Channel count of the fused output: the sum over the three levels.
std::size_t fused_channels(const std::array<LevelShape, 3>& shapes);

// Parameters live under `attention/...`; Off mode only creates the branch and
// downsampling convolutions, Self mode additionally skips the merge weights.
void init_attention(nk::ParameterStore& store, const std::array<LevelShape, 3>& shapes, AttentionMode mode,
                    std::uint64_t seed);

// 1x1 conv over [shallow ; upsample2x(deep)], reducing to shallow's channels.
// `<path>/w`: [C_shallow, C_shallow + C_deep, 1, 1].
nk::Var semantic_merge(nn::Context& ctx, const std::string& path, const nk::Var& deep, const nk::Var& shallow);

// sigmoid(W1 relu(W0 avg) + W1 relu(W0 max)) -> [B, C]. `<path>/w0` is
// [C, C/2] and `<path>/w1` [C/2, C], applied to row vectors.
nk::Var channel_attention(nn::Context& ctx, const std::string& path, const nk::Var& f);

// sigmoid(conv7x7([channel avg ; channel max])) -> [B, 1, H, W].
nk::Var spatial_attention(nn::Context& ctx, const std::string& path, const nk::Var& f);

// F * A^c * A^s + F
nk::Var modulate(const nk::Var& f, const nk::Var& channel_map, const nk::Var& spatial_map);

nk::Var fuse(nn::Context& ctx, const std::array<LevelShape, 3>& shapes, AttentionMode mode, const Pyramid& pyramid);

}  // namespace scca::net
