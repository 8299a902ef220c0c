#include "scca/scc.hpp"

#include <stdexcept>

namespace scca::net {

void validate(const SccConfig& cfg) {
  if (cfg.landmarks < 2) throw std::invalid_argument("scc: at least 2 landmarks are required");
  if (cfg.expansion == 0 || cfg.hidden == 0) throw std::invalid_argument("scc: expansion and hidden width must be positive");
  if (cfg.node_kernel % 2 == 0) throw std::invalid_argument("scc: map-to-node kernel must be odd");
  if (cfg.landmarks * cfg.expansion < 2) throw std::invalid_argument("scc: node feature map too small");
}

void init_scc(nk::ParameterStore& store, const SccConfig& cfg, std::size_t fused, std::size_t size,
              const adj::SparseAdjacency& adjacency, std::uint64_t seed) {
  validate(cfg);
  if (adjacency.nodes() != cfg.landmarks) {
    throw std::invalid_argument("scc: adjacency has " + std::to_string(adjacency.nodes()) + " nodes, expected " +
                                std::to_string(cfg.landmarks));
  }
  const std::size_t nn_ch = cfg.landmarks * cfg.expansion;
  nn::init_conv_bn(store, "scc/node/conv1", nn_ch, fused, cfg.node_kernel, seed);
  nn::init_conv_bn(store, "scc/node/conv2", nn_ch, nn_ch, cfg.node_kernel, seed);
  if (cfg.dynamic) {
    nn::init_linear(store, "scc/dyn/fc1", nn_ch, nn_ch / 2, seed);
    nn::init_linear(store, "scc/dyn/fc2", nn_ch / 2, adjacency.nonzeros(), seed);
  }
  auto graph_layer = [&](const std::string& p, std::size_t in, std::size_t out, bool bn) {
    store.add(p + "/w", nk::kaiming_normal({in, out}, in, seed, p + "/w"));
    if (bn) nn::init_batchnorm(store, p + "/bn", out);
  };
  graph_layer("scc/graph/in", cfg.expansion * size * size, cfg.hidden, true);
  for (std::size_t b = 0; b < cfg.blocks; ++b) {
    const std::string p = "scc/graph/block" + std::to_string(b);
    graph_layer(p + "/f1", cfg.hidden, cfg.hidden, true);
    graph_layer(p + "/f2", cfg.hidden, cfg.hidden, true);
  }
  graph_layer("scc/graph/out", cfg.hidden, 2, false);
  store.add("scc/graph/out/b", nk::Tensor({2}, 0.5 * kHeadFrame), false);
}

NodeFeatures map_to_node(nn::Context& ctx, const SccConfig& cfg, const nk::Var& fused) {
  const std::size_t pad = cfg.node_kernel / 2;
  const auto& w = ctx.store.param("scc/node/conv1/conv/w").value;
  if (fused.value().rank() != 4 || fused.dim(1) != w.dim(1)) {
    throw std::invalid_argument("map_to_node: expected " + std::to_string(w.dim(1)) + " input channels, got " +
                                nk::shape_string(fused.shape()));
  }
  NodeFeatures nf;
  nf.z = nn::conv_bn_relu(ctx, "scc/node/conv2", nn::conv_bn_relu(ctx, "scc/node/conv1", fused, 1, pad), 1, pad);
  const std::size_t b = fused.dim(0), h = fused.dim(2), wd = fused.dim(3);
  nf.z_node = nk::reshape(nf.z, {b, cfg.landmarks, cfg.expansion * h * wd});
  return nf;
}

nk::Var dynamic_weights(nn::Context& ctx, const nk::Var& z) {
  nk::Var pooled = nk::global_pool(z, nk::PoolMode::Avg);
  return nn::linear(ctx, "scc/dyn/fc2", nk::relu(nn::linear(ctx, "scc/dyn/fc1", pooled)));
}

GraphOperator dynamic_operator(const nk::Var& scores, const adj::SparseAdjacency& adjacency) {
  if (scores.value().rank() != 2 || scores.dim(1) != adjacency.nonzeros()) {
    throw std::invalid_argument("dynamic_operator: expected [B, " + std::to_string(adjacency.nonzeros()) +
                                "] scores, got " + nk::shape_string(scores.shape()));
  }
  nk::Var dense = nk::scatter_pattern(scores, adjacency.pattern, adjacency.nodes(), 0.0);
  return {nk::rowsoftmax(dense, adjacency.mask), &adjacency.pattern};
}

GraphOperator static_operator(nk::Tape& tape, const adj::SparseAdjacency& adjacency) {
  const std::size_t n = adjacency.nodes();
  return {tape.constant(adj::symmetric_normalize(adjacency.mask).reshaped({1, n, n})), &adjacency.pattern};
}

nk::Var gcn_layer(nn::Context& ctx, const std::string& path, const nk::Var& h, const GraphOperator& op,
                  bool activate) {
  if (!op.pattern) throw std::invalid_argument(path + ": graph operator without a pattern");
  nk::Var w = nn::param(ctx, path + "/w");
  if (h.value().rank() != 3 || h.dim(2) != w.dim(0)) {
    throw std::invalid_argument(path + ": node features " + nk::shape_string(h.shape()) + " do not match weights " +
                                nk::shape_string(w.shape()));
  }
  const std::size_t b = h.dim(0), n = h.dim(1), out = w.dim(1);
  nk::Var hw = nk::reshape(nk::matmul(nk::reshape(h, {b * n, h.dim(2)}), w), {b, n, out});
  nk::Var y = nk::pattern_aggregate(op.weights, *op.pattern, hw);
  if (!activate) return y;
  y = nk::relu(nn::batchnorm(ctx, path + "/bn", nk::reshape(y, {b * n, out})));
  return nk::reshape(y, {b, n, out});
}

nk::Var graph_residual_block(nn::Context& ctx, const std::string& path, const nk::Var& h, const GraphOperator& op) {
  nk::Var inner = gcn_layer(ctx, path + "/f2", gcn_layer(ctx, path + "/f1", h, op, true), op, true);
  if (inner.shape() != h.shape()) throw std::invalid_argument(path + ": residual branch changes the feature width");
  return nk::add(inner, h);
}

nk::Var scc_forward(nn::Context& ctx, const SccConfig& cfg, const nk::Var& fused,
                    const adj::SparseAdjacency& adjacency) {
  NodeFeatures nf = map_to_node(ctx, cfg, fused);
  const GraphOperator op = cfg.dynamic ? dynamic_operator(dynamic_weights(ctx, nf.z), adjacency)
                                       : static_operator(ctx.tape, adjacency);
  nk::Var h = gcn_layer(ctx, "scc/graph/in", nf.z_node, op, true);
  for (std::size_t b = 0; b < cfg.blocks; ++b) h = graph_residual_block(ctx, "scc/graph/block" + std::to_string(b), h, op);
  nk::Var out = gcn_layer(ctx, "scc/graph/out", h, op, false);
  const std::size_t bsz = out.dim(0), n = out.dim(1);
  out = nk::add_channel_bias(nk::reshape(out, {bsz * n, 2}), nn::param(ctx, "scc/graph/out/b"));
  return nk::reshape(out, {bsz, n, 2});
}

}  // namespace scca::net
