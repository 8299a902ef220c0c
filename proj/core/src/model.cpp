#include "scca/model.hpp"

#include <stdexcept>

namespace scca::net {

HeadKind parse_head_kind(const std::string& s) {
  if (s == "scc") return HeadKind::Scc;
  if (s == "fc") return HeadKind::Fc;
  throw std::invalid_argument("unknown head '" + s + "' (expected scc or fc)");
}

std::string to_string(HeadKind kind) { return kind == HeadKind::Scc ? "scc" : "fc"; }

std::size_t scc_head_parameter_count(const ModelConfig& cfg, const adj::SparseAdjacency& adjacency) {
  const auto shapes = pyramid_shapes(cfg.backbone);
  nk::ParameterStore tmp;
  init_scc(tmp, cfg.scc, fused_channels(shapes), shapes[2].size, adjacency, 0);
  return tmp.count("scc/");
}

Model::Model(ModelConfig cfg, adj::SparseAdjacency adjacency, std::uint64_t seed)
    : cfg_(std::move(cfg)), adjacency_(std::move(adjacency)) {
  const auto shapes = pyramid_shapes(cfg_.backbone);
  if (adjacency_.nodes() != cfg_.scc.landmarks) {
    throw std::invalid_argument("model: adjacency has " + std::to_string(adjacency_.nodes()) + " nodes but " +
                                std::to_string(cfg_.scc.landmarks) + " landmarks are configured");
  }
  init_backbone(store_, cfg_.backbone, seed);
  init_attention(store_, shapes, cfg_.attention, seed);
  const std::size_t fused = fused_channels(shapes);
  if (cfg_.head == HeadKind::Scc) {
    init_scc(store_, cfg_.scc, fused, shapes[2].size, adjacency_, seed);
  } else {
    if (cfg_.fc_hidden == 0) {
      cfg_.fc_hidden = matched_fc_hidden(scc_head_parameter_count(cfg_, adjacency_), fused, cfg_.scc.landmarks);
    }
    init_fc_head(store_, fused, cfg_.fc_hidden, cfg_.scc.landmarks, seed);
  }
}

nk::Var Model::forward(nk::Tape& tape, const nk::Var& images, nk::BnMode mode) {
  nn::Context ctx{tape, store_, mode};
  const auto shapes = pyramid_shapes(cfg_.backbone);
  Pyramid pyr = backbone_forward(ctx, cfg_.backbone, images);
  nk::Var fused = fuse(ctx, shapes, cfg_.attention, pyr);
  nk::Var out = cfg_.head == HeadKind::Scc ? scc_forward(ctx, cfg_.scc, fused, adjacency_)
                                           : fc_head_forward(ctx, fused, cfg_.scc.landmarks);
  return nk::scale(out, 1.0 / kHeadFrame);
}

nk::Var Model::forward(nk::Tape& tape, const nk::Tensor& images, nk::BnMode mode) {
  return forward(tape, tape.constant(images), mode);
}

std::size_t Model::head_parameter_count() const {
  return store_.count(cfg_.head == HeadKind::Scc ? "scc/" : "fc/");
}

}  // namespace scca::net
