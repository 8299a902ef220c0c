#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "scca/dataset.hpp"
#include "scca/losses.hpp"
#include "scca/model.hpp"

namespace scca::train {

struct TrainConfig {
  // Data: a corpus directory whose last `val_count` samples form the
  // validation split. Empty when samples are supplied in memory.
  std::string data;
  std::size_t val_count = 500;

  // Model
  std::size_t image_size = 64;
  std::vector<std::size_t> channels{8, 16, 32, 64, 128};
  std::size_t blocks_per_stage = 1;
  net::HeadKind head = net::HeadKind::Scc;
  net::AttentionMode attention = net::AttentionMode::Semantic;
  std::size_t k = 3;
  bool dynamic = true;
  std::size_t expansion = 4;
  std::size_t hidden = 32;
  std::size_t graph_blocks = 4;
  std::size_t node_kernel = 1;
  std::size_t fc_hidden = 0;

  // Optimisation
  std::size_t batch_size = 16;
  std::size_t epochs = 60;
  double lr = 0.01;
  double lr_drop = 5.0;
  std::size_t lr_period = 20;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  loss::LossParams loss;
  bool visibility_mask = false;  // exclude occluded landmarks from the loss

  bool augment = true;
  data::AugmentConfig augmentation;

  std::uint64_t seed = 0;
};

// Learning rate for a 0-based epoch: lr / lr_drop^floor(epoch / lr_period).
double learning_rate(const TrainConfig& cfg, std::size_t epoch);

// Recipe used for the full-size reference setting (batch 64, lr dropped by 5
// every 100 epochs, 256-pixel inputs, 128-wide graph).
TrainConfig reference_config();

// Throws std::invalid_argument naming the offending key.
void validate(const TrainConfig& cfg);

net::ModelConfig model_config(const TrainConfig& cfg);

// Flat key=value representation; keys are listed by config_keys().
std::map<std::string, std::string> to_key_values(const TrainConfig& cfg);
void apply_key_value(TrainConfig& cfg, const std::string& key, const std::string& value);
const std::vector<std::string>& config_keys();

// One `key=value` per line in config_keys() order.
std::string serialize_config(const TrainConfig& cfg);
// Parses `key=value` lines on top of `base`; blank lines and `#` comments are
// ignored. Unknown keys are errors.
TrainConfig parse_config(const std::string& text, TrainConfig base = {});
TrainConfig load_config(const std::filesystem::path& path, TrainConfig base = {});

}  // namespace scca::train
