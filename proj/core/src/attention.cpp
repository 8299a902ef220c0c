#include "scca/attention.hpp"

#include <stdexcept>

namespace scca::net {
namespace {

// Level tags for F_{L-2} and F_{L-1}.
const char* const kLevel[2] = {"attention/level2", "attention/level1"};
const char* const kMerge[2] = {"attention/merge2", "attention/merge1"};

}  // namespace

AttentionMode parse_attention_mode(const std::string& s) {
  if (s == "semantic") return AttentionMode::Semantic;
  if (s == "self") return AttentionMode::Self;
  if (s == "off") return AttentionMode::Off;
  throw std::invalid_argument("unknown attention mode '" + s + "' (expected semantic, self or off)");
}

std::string to_string(AttentionMode mode) {
  switch (mode) {
    case AttentionMode::Semantic: return "semantic";
    case AttentionMode::Self: return "self";
    case AttentionMode::Off: return "off";
  }
  return "?";
}

std::size_t fused_channels(const std::array<LevelShape, 3>& shapes) {
  return shapes[0].channels + shapes[1].channels + shapes[2].channels;
}

void init_attention(nk::ParameterStore& store, const std::array<LevelShape, 3>& shapes, AttentionMode mode,
                    std::uint64_t seed) {
  for (std::size_t i = 0; i < 2; ++i) {
    const std::size_t c = shapes[i].channels;
    const std::string p = kLevel[i];
    if (mode != AttentionMode::Off && (c < 2 || c % 2 != 0)) {
      throw std::invalid_argument(p + ": channel attention needs an even channel count >= 2, got " + std::to_string(c));
    }
    nn::init_conv_bn(store, p + "/branch", c, c, 3, seed);
    for (std::size_t d = 0; d < 2 - i; ++d) nn::init_conv_bn(store, p + "/down" + std::to_string(d), c, c, 3, seed);
    if (mode == AttentionMode::Off) continue;
    store.add(p + "/ca/w0", nk::kaiming_normal({c, c / 2}, c, seed, p + "/ca/w0"));
    store.add(p + "/ca/w1", nk::kaiming_normal({c / 2, c}, c / 2, seed, p + "/ca/w1"));
    nn::init_conv(store, p + "/sa", 1, 2, 7, seed, true);
    if (mode == AttentionMode::Semantic) {
      const std::size_t deep = shapes[i + 1].channels;
      nn::init_conv(store, kMerge[i], c, c + deep, 1, seed);
    }
  }
}

nk::Var semantic_merge(nn::Context& ctx, const std::string& path, const nk::Var& deep, const nk::Var& shallow) {
  nk::Var up = nk::upsample_nearest2x(deep);
  if (up.dim(0) != shallow.dim(0) || up.dim(2) != shallow.dim(2) || up.dim(3) != shallow.dim(3)) {
    throw std::invalid_argument(path + ": upsampled deep features " + nk::shape_string(up.shape()) +
                                " do not match shallow features " + nk::shape_string(shallow.shape()));
  }
  return nn::conv(ctx, path, nk::concat_channels({shallow, up}), 1, 0);
}

nk::Var channel_attention(nn::Context& ctx, const std::string& path, const nk::Var& f) {
  const std::size_t c = f.dim(1);
  if (c < 2 || c % 2 != 0) throw std::invalid_argument(path + ": channel attention needs an even channel count");
  nk::Var w0 = nn::param(ctx, path + "/w0");
  nk::Var w1 = nn::param(ctx, path + "/w1");
  auto mlp = [&](const nk::Var& v) { return nk::matmul(nk::relu(nk::matmul(v, w0)), w1); };
  return nk::sigmoid(nk::add(mlp(nk::global_pool(f, nk::PoolMode::Avg)), mlp(nk::global_pool(f, nk::PoolMode::Max))));
}

nk::Var spatial_attention(nn::Context& ctx, const std::string& path, const nk::Var& f) {
  nk::Var pooled =
      nk::concat_channels({nk::channel_pool(f, nk::PoolMode::Avg), nk::channel_pool(f, nk::PoolMode::Max)});
  return nk::sigmoid(nn::conv(ctx, path, pooled, 1, 3));
}

nk::Var modulate(const nk::Var& f, const nk::Var& channel_map, const nk::Var& spatial_map) {
  return nk::add(nk::mul_spatial(nk::mul_channel(f, channel_map), spatial_map), f);
}

nk::Var fuse(nn::Context& ctx, const std::array<LevelShape, 3>& shapes, AttentionMode mode, const Pyramid& pyramid) {
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& s = pyramid.levels[i].shape();
    if (s.size() != 4 || s[1] != shapes[i].channels || s[2] != shapes[i].size || s[3] != shapes[i].size) {
      throw std::invalid_argument("fuse: pyramid level " + std::to_string(i) + " has shape " + nk::shape_string(s));
    }
  }
  // Guidance cascades from deep to shallow: level1 merges F_L, level2 merges
  // the merged level1 features.
  std::array<nk::Var, 2> guide;
  if (mode == AttentionMode::Semantic) {
    guide[1] = semantic_merge(ctx, kMerge[1], pyramid.levels[2], pyramid.levels[1]);
    guide[0] = semantic_merge(ctx, kMerge[0], guide[1], pyramid.levels[0]);
  } else {
    guide = {pyramid.levels[0], pyramid.levels[1]};
  }

  std::vector<nk::Var> parts;
  for (std::size_t i = 0; i < 2; ++i) {
    const std::string p = kLevel[i];
    nk::Var g = nn::conv_bn_relu(ctx, p + "/branch", pyramid.levels[i], 1, 1);
    if (mode != AttentionMode::Off) {
      g = modulate(g, channel_attention(ctx, p + "/ca", guide[i]), spatial_attention(ctx, p + "/sa", guide[i]));
    }
    for (std::size_t d = 0; d < 2 - i; ++d) g = nn::conv_bn_relu(ctx, p + "/down" + std::to_string(d), g, 2, 1);
    parts.push_back(g);
  }
  parts.push_back(pyramid.levels[2]);
  return nk::concat_channels(parts);
}

}  // namespace scca::net
