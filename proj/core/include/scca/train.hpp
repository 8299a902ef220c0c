#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "scca/checkpoint.hpp"
#include "scca/config.hpp"
#include "scca/eval.hpp"
#include "scca/model.hpp"

namespace scca::train {

struct Dataset {
  std::vector<data::LandmarkSample> train;
  std::vector<data::LandmarkSample> val;
  std::vector<std::size_t> mirror;
  std::pair<std::size_t, std::size_t> eyes{0, 0};
};

// The last `val_count` samples become the validation split.
Dataset split_corpus(data::Corpus corpus, std::size_t val_count);

// v = momentum * v + grad + weight_decay * param; param -= lr * v.
void sgd_update(nk::Tensor& param, const nk::Tensor& grad, nk::Tensor& velocity, double lr, double momentum,
                double weight_decay);
// Applies sgd_update to every parameter; parameters flagged as non-decaying
// (batch-norm scale and shift, biases) use zero weight decay. Missing
// velocity entries start at zero.
void sgd_step(nk::ParameterStore& store, std::map<std::string, nk::Tensor>& velocity, double lr, double momentum,
              double weight_decay);

struct Batch {
  nk::Tensor images;   // [B, 3, S, S]
  nk::Tensor targets;  // [B, N, 2], coordinates divided by S
  nk::Tensor weights;  // [B, N, 2] loss weights
};

Batch make_batch(const std::vector<data::LandmarkSample>& samples, const std::vector<std::size_t>& indices,
                 bool visibility_mask);

// Eval-mode predictions in pixel units, one [N, 2] tensor per sample.
std::vector<nk::Tensor> predict(net::Model& model, const std::vector<data::LandmarkSample>& samples,
                                std::size_t batch_size = 50);
eval::EvalReport evaluate(net::Model& model, const std::vector<data::LandmarkSample>& samples,
                          std::pair<std::size_t, std::size_t> eyes, std::size_t batch_size = 50);

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  double lr = 0.0;
  double train_loss = 0.0;
  double val_nme = 0.0;  // percent
};

void write_metrics_csv(const std::filesystem::path& path, const std::vector<EpochMetrics>& history);
std::vector<EpochMetrics> read_metrics_csv(const std::filesystem::path& path);

// Seeded permutation of [0, n) for a 0-based epoch.
std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t epoch, std::size_t n);

class Trainer {
 public:
  // Builds the adjacency from the training split.
  Trainer(TrainConfig cfg, Dataset data);
  Trainer(TrainConfig cfg, Dataset data, adj::SparseAdjacency adjacency);
  // Resumes from a checkpoint. `cfg` must match the stored configuration in
  // every key except `epochs`.
  static Trainer resume(const Checkpoint& ck, Dataset data, const TrainConfig& cfg);

  // Throws std::runtime_error when the loss becomes non-finite.
  EpochMetrics run_epoch();
  std::vector<EpochMetrics> run(const std::function<void(const EpochMetrics&)>& on_epoch = {});

  Checkpoint checkpoint() const;
  net::Model& model() { return *model_; }
  const TrainConfig& config() const { return cfg_; }
  const Dataset& data() const { return data_; }
  std::size_t epoch() const { return epoch_; }
  const std::vector<EpochMetrics>& history() const { return history_; }

 private:
  TrainConfig cfg_;
  Dataset data_;
  std::unique_ptr<net::Model> model_;
  std::map<std::string, nk::Tensor> velocity_;
  std::size_t epoch_ = 0;
  std::vector<EpochMetrics> history_;
};

// Rebuilds the model stored in a checkpoint.
std::unique_ptr<net::Model> restore_model(const Checkpoint& ck);

}  // namespace scca::train
