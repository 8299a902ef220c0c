#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "scca/adjacency.hpp"
#include "scca/layers.hpp"

// Structure coherence head: fused feature maps are regrouped into one feature
// vector per landmark and refined by a graph network over the sparse landmark
// graph, whose edge weights are predicted per input.
namespace scca::net {

struct SccConfig {
  std::size_t landmarks = 68;
  std::size_t expansion = 4;     // channels per node in the node feature map
  std::size_t hidden = 32;       // graph feature width
  std::size_t blocks = 4;        // graph residual blocks
  std::size_t node_kernel = 1;   // kernel of the map-to-node convolutions (odd)
  bool dynamic = true;           // false: fixed D^-1/2 M D^-1/2 propagation
};

void validate(const SccConfig& cfg);

// Parameters live under `scc/...`. `fused` is the channel count and `size`
// the spatial side of the fused features; the adjacency fixes the pattern size.
void init_scc(nk::ParameterStore& store, const SccConfig& cfg, std::size_t fused, std::size_t size,
              const adj::SparseAdjacency& adjacency, std::uint64_t seed);

struct NodeFeatures {
  nk::Var z;       // [B, N*n, H, W]
  nk::Var z_node;  // [B, N, n*H*W]; row i is channels [i*n, (i+1)*n) flattened
};

NodeFeatures map_to_node(nn::Context& ctx, const SccConfig& cfg, const nk::Var& fused);

// Raw edge scores [B, P] for the P pattern entries: GAP -> affine -> ReLU ->
// affine.
nk::Var dynamic_weights(nn::Context& ctx, const nk::Var& z);

// Normalised propagation matrix restricted to a pattern. `weights` is
// [B, N, N] (one per sample) or [1, N, N] (shared); off-pattern entries are
// never read.
struct GraphOperator {
  nk::Var weights;
  const nk::Pattern* pattern = nullptr;
};

// Row softmax of the scores placed on the pattern.
GraphOperator dynamic_operator(const nk::Var& scores, const adj::SparseAdjacency& adjacency);
// Constant D^-1/2 M D^-1/2.
GraphOperator static_operator(nk::Tape& tape, const adj::SparseAdjacency& adjacency);

// op(H W), followed by batch norm and ReLU when `activate` is set. H is
// [B, N, d_in]; `<path>/w` is [d_in, d_out], batch norm under `<path>/bn`.
nk::Var gcn_layer(nn::Context& ctx, const std::string& path, const nk::Var& h, const GraphOperator& op,
                  bool activate);

// f(f(H)) + H with both inner layers activated (`<path>/f1`, `<path>/f2`).
nk::Var graph_residual_block(nn::Context& ctx, const std::string& path, const nk::Var& h, const GraphOperator& op);

inline constexpr double kHeadFrame = 256.0;

// [B, C, H, W] fused features -> [B, N, 2] coordinates in a frame of side
// kHeadFrame.
nk::Var scc_forward(nn::Context& ctx, const SccConfig& cfg, const nk::Var& fused,
                    const adj::SparseAdjacency& adjacency);

// Baseline head: GAP -> affine -> ReLU -> affine to 2N. Parameters under
// `fc/...`.
void init_fc_head(nk::ParameterStore& store, std::size_t fused, std::size_t hidden, std::size_t landmarks,
                  std::uint64_t seed);
nk::Var fc_head_forward(nn::Context& ctx, const nk::Var& fused, std::size_t landmarks);

// Hidden width giving the FC head the parameter count closest to `budget`.
std::size_t matched_fc_hidden(std::size_t budget, std::size_t fused, std::size_t landmarks);

}  // namespace scca::net
