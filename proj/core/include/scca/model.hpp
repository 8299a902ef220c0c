#pragma once

#include <cstdint>
#include <string>

#include "scca/adjacency.hpp"
#include "scca/attention.hpp"
#include "scca/backbone.hpp"
#include "scca/scc.hpp"

namespace scca::net {

enum class HeadKind { Scc, Fc };

HeadKind parse_head_kind(const std::string& s);
std::string to_string(HeadKind kind);

struct ModelConfig {
  BackboneConfig backbone;
  AttentionMode attention = AttentionMode::Semantic;
  HeadKind head = HeadKind::Scc;
  SccConfig scc;
  std::size_t fc_hidden = 0;  // 0: match the SCC head's parameter count
};

// Full landmark regressor: backbone, attention fusion and a coordinate head.
// Parameters are initialised from (seed, path), so the backbone starts from
// the same values whatever head or attention mode is selected.
class Model {
 public:
  Model(ModelConfig cfg, adj::SparseAdjacency adjacency, std::uint64_t seed);

  // images [B, 3, S, S] -> [B, N, 2] coordinates normalised by S.
  nk::Var forward(nk::Tape& tape, const nk::Var& images, nk::BnMode mode);
  nk::Var forward(nk::Tape& tape, const nk::Tensor& images, nk::BnMode mode);

  const ModelConfig& config() const { return cfg_; }
  const adj::SparseAdjacency& adjacency() const { return adjacency_; }
  nk::ParameterStore& store() { return store_; }
  const nk::ParameterStore& store() const { return store_; }
  std::size_t landmarks() const { return cfg_.scc.landmarks; }

  std::size_t head_parameter_count() const;

 private:
  ModelConfig cfg_;
  adj::SparseAdjacency adjacency_;
  nk::ParameterStore store_;
};

// Parameter count of the SCC head for this configuration, whichever head the
// config selects.
std::size_t scc_head_parameter_count(const ModelConfig& cfg, const adj::SparseAdjacency& adjacency);

}  // namespace scca::net
