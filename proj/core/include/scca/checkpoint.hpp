#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "scca/adjacency.hpp"
#include "scca/numkit/tensor.hpp"

namespace scca::train {

// Snapshot of a training run. Binary layout: magic "SCCA1", then
// little-endian u64 counts and f64 values; strings are u64-length prefixed.
struct Checkpoint {
  std::string config;  // serialized TrainConfig
  std::uint64_t epoch = 0;
  std::uint64_t rng_state = 0;
  std::uint64_t landmarks = 0;
  std::pair<std::uint64_t, std::uint64_t> eyes{0, 0};
  nk::Tensor adjacency;  // binary N x N mask
  std::map<std::string, nk::Tensor> params;
  std::map<std::string, nk::Tensor> buffers;
  std::map<std::string, nk::Tensor> velocity;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace scca::train
