#include "scca/train.hpp"

#include <cmath>
#include <stdexcept>

#include "scca/csv.hpp"
#include "scca/losses.hpp"
#include "scca/rng.hpp"

namespace scca::train {
namespace {

constexpr std::uint64_t kShuffleStream = 0x5348554646ULL;
constexpr std::uint64_t kAugmentStream = 0x4155474dULL;

void check_images(const std::vector<data::LandmarkSample>& samples, std::size_t size, const char* split) {
  for (const auto& s : samples) {
    if (s.image_size() != size) {
      throw std::invalid_argument(std::string(split) + " sample '" + s.id + "' has image size " +
                                  std::to_string(s.image_size()) + ", expected " + std::to_string(size));
    }
  }
}

}  // namespace

Dataset split_corpus(data::Corpus corpus, std::size_t val_count) {
  if (val_count == 0 || val_count >= corpus.samples.size()) {
    throw std::invalid_argument("split: val_count must lie in [1, " + std::to_string(corpus.samples.size() - 1) + "]");
  }
  Dataset d;
  const std::size_t n_train = corpus.samples.size() - val_count;
  d.train.assign(std::make_move_iterator(corpus.samples.begin()),
                 std::make_move_iterator(corpus.samples.begin() + static_cast<std::ptrdiff_t>(n_train)));
  d.val.assign(std::make_move_iterator(corpus.samples.begin() + static_cast<std::ptrdiff_t>(n_train)),
               std::make_move_iterator(corpus.samples.end()));
  d.mirror = std::move(corpus.mirror);
  d.eyes = corpus.eye_indices;
  return d;
}

void sgd_update(nk::Tensor& param, const nk::Tensor& grad, nk::Tensor& velocity, double lr, double momentum,
                double weight_decay) {
  if (param.shape() != grad.shape() || param.shape() != velocity.shape()) {
    throw std::invalid_argument("sgd: parameter, gradient and velocity shapes differ");
  }
  for (std::size_t i = 0; i < param.size(); ++i) {
    velocity[i] = momentum * velocity[i] + grad[i] + weight_decay * param[i];
    param[i] -= lr * velocity[i];
  }
}

void sgd_step(nk::ParameterStore& store, std::map<std::string, nk::Tensor>& velocity, double lr, double momentum,
              double weight_decay) {
  for (auto& [path, p] : store.params()) {
    auto it = velocity.find(path);
    if (it == velocity.end()) it = velocity.emplace(path, nk::Tensor(p.value.shape(), 0.0)).first;
    const nk::Tensor grad = p.grad.empty() ? nk::Tensor(p.value.shape(), 0.0) : p.grad;
    sgd_update(p.value, grad, it->second, lr, momentum, p.decay ? weight_decay : 0.0);
  }
}

Batch make_batch(const std::vector<data::LandmarkSample>& samples, const std::vector<std::size_t>& indices,
                 bool visibility_mask) {
  if (indices.empty()) throw std::invalid_argument("make_batch: empty batch");
  const auto& first = samples.at(indices[0]);
  const std::size_t S = first.image_size(), n = first.size();
  if (S == 0) throw std::invalid_argument("make_batch: samples carry no image");
  const std::size_t B = indices.size(), pix = 3 * S * S;
  Batch b{nk::Tensor({B, 3, S, S}), nk::Tensor({B, n, 2}), nk::Tensor({B, n, 2}, 1.0)};
  for (std::size_t i = 0; i < B; ++i) {
    const auto& s = samples.at(indices[i]);
    if (s.image_size() != S || s.size() != n) throw std::invalid_argument("make_batch: inconsistent samples");
    std::copy_n(s.image.ptr(), pix, b.images.ptr() + i * pix);
    for (std::size_t j = 0; j < n; ++j) {
      b.targets[(i * n + j) * 2] = s.landmarks[j].x / static_cast<double>(S);
      b.targets[(i * n + j) * 2 + 1] = s.landmarks[j].y / static_cast<double>(S);
      const bool occluded = visibility_mask && !s.visibility.empty() && !s.visibility[j];
      const double w = occluded ? 0.0 : s.weight;
      b.weights[(i * n + j) * 2] = w;
      b.weights[(i * n + j) * 2 + 1] = w;
    }
  }
  return b;
}

std::vector<nk::Tensor> predict(net::Model& model, const std::vector<data::LandmarkSample>& samples,
                                std::size_t batch_size) {
  std::vector<nk::Tensor> out;
  out.reserve(samples.size());
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(samples.size(), start + batch_size); ++i) idx.push_back(i);
    const Batch b = make_batch(samples, idx, false);
    const double S = static_cast<double>(b.images.dim(2));
    nk::Tape tape;
    const nk::Tensor& pred = model.forward(tape, b.images, nk::BnMode::Eval).value();
    const std::size_t n = pred.dim(1);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      nk::Tensor p({n, 2});
      for (std::size_t j = 0; j < 2 * n; ++j) p[j] = pred[i * 2 * n + j] * S;
      out.push_back(std::move(p));
    }
  }
  return out;
}

eval::EvalReport evaluate(net::Model& model, const std::vector<data::LandmarkSample>& samples,
                          std::pair<std::size_t, std::size_t> eyes, std::size_t batch_size) {
  const auto preds = predict(model, samples, batch_size);
  std::vector<double> errors;
  errors.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    std::vector<data::Point> p(samples[i].size());
    for (std::size_t j = 0; j < p.size(); ++j) p[j] = {preds[i][2 * j], preds[i][2 * j + 1]};
    errors.push_back(eval::sample_nme(p, samples[i].landmarks, eyes));
  }
  return eval::aggregate(errors);
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<EpochMetrics>& history) {
  CsvWriter w(path, {"epoch", "lr", "train_loss", "val_nme"});
  for (const auto& m : history) {
    w.row(std::vector<std::string>{std::to_string(m.epoch), format_double(m.lr), format_double(m.train_loss),
                                   format_double(m.val_nme)});
  }
}

std::vector<EpochMetrics> read_metrics_csv(const std::filesystem::path& path) {
  const CsvTable t = read_csv(path);
  const std::size_t ce = t.column("epoch"), cl = t.column("lr"), ct = t.column("train_loss"), cv = t.column("val_nme");
  std::vector<EpochMetrics> out;
  for (const auto& r : t.rows) {
    out.push_back({std::stoul(r.at(ce)), std::stod(r.at(cl)), std::stod(r.at(ct)), std::stod(r.at(cv))});
  }
  return out;
}

std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t epoch, std::size_t n) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng = Rng::derive(seed ^ kShuffleStream, epoch);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

Trainer::Trainer(TrainConfig cfg, Dataset data)
    : Trainer(cfg, data, adj::SparseAdjacency{}) {}

Trainer::Trainer(TrainConfig cfg, Dataset data, adj::SparseAdjacency adjacency)
    : cfg_(std::move(cfg)), data_(std::move(data)) {
  validate(cfg_);
  if (data_.train.size() < 2 || data_.val.empty()) throw std::invalid_argument("train: need >= 2 training and >= 1 validation samples");
  check_images(data_.train, cfg_.image_size, "training");
  check_images(data_.val, cfg_.image_size, "validation");
  if (adjacency.pattern.empty()) adjacency = adj::build_adjacency(data_.train, cfg_.k);
  if (adjacency.k != cfg_.k) {
    throw std::invalid_argument("train: adjacency has k=" + std::to_string(adjacency.k) + " but the config asks for k=" +
                                std::to_string(cfg_.k));
  }
  net::ModelConfig mc = model_config(cfg_);
  mc.scc.landmarks = data_.train.front().size();
  model_ = std::make_unique<net::Model>(mc, std::move(adjacency), cfg_.seed);
}

Trainer Trainer::resume(const Checkpoint& ck, Dataset data, const TrainConfig& cfg) {
  TrainConfig stored = parse_config(ck.config);
  stored.epochs = cfg.epochs;
  if (serialize_config(stored) != serialize_config(cfg)) {
    throw std::invalid_argument("resume: only the epoch count may differ from the checkpoint configuration");
  }
  Trainer t(cfg, std::move(data), adj::from_mask(ck.adjacency));
  t.model_ = restore_model(ck);
  t.velocity_ = ck.velocity;
  t.epoch_ = ck.epoch;
  return t;
}

EpochMetrics Trainer::run_epoch() {
  const std::size_t e = epoch_;
  const double lr = learning_rate(cfg_, e);
  const auto order = epoch_order(cfg_.seed, e, data_.train.size());
  const std::uint64_t aug_seed = splitmix64(cfg_.seed ^ kAugmentStream) + e;
  if (cfg_.augment && cfg_.augmentation.flip_prob > 0 && data_.mirror.size() != data_.train.front().size()) {
    throw std::invalid_argument("train: flip augmentation needs a mirror table");
  }

  double loss_sum = 0.0;
  std::size_t loss_count = 0;
  for (std::size_t start = 0; start + 1 < order.size(); start += cfg_.batch_size) {
    const std::size_t end = std::min(order.size(), start + cfg_.batch_size);
    if (end - start < 2) break;
    std::vector<data::LandmarkSample> batch_samples;
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < end; ++i) {
      const auto& s = data_.train[order[i]];
      if (cfg_.augment) {
        Rng rng = Rng::derive(aug_seed, order[i]);
        batch_samples.push_back(data::apply_augment(
            s, data::sample_augment(cfg_.augmentation, cfg_.image_size, rng), data_.mirror));
      } else {
        batch_samples.push_back(s);
      }
      idx.push_back(i - start);
    }
    const Batch b = make_batch(batch_samples, idx, cfg_.visibility_mask);

    model_->store().zero_grad();
    nk::Tape tape;
    nk::Var loss;
    try {
      nk::Var pred = model_->forward(tape, b.images, nk::BnMode::Train);
      loss = loss::batch_loss(pred, b.targets, cfg_.loss, &b.weights);
      tape.backward(loss);
    } catch (const std::runtime_error& err) {
      throw std::runtime_error("training diverged at epoch " + std::to_string(e + 1) + ", batch " +
                               std::to_string(start / cfg_.batch_size + 1) + ": " + err.what());
    }
    const double lv = loss.value()[0];
    loss_sum += lv * static_cast<double>(idx.size());
    loss_count += idx.size();
    sgd_step(model_->store(), velocity_, lr, cfg_.momentum, cfg_.weight_decay);
    for (const auto& [path, p] : model_->store().params()) {
      if (!p.value.all_finite()) {
        throw std::runtime_error("training diverged at epoch " + std::to_string(e + 1) + ", batch " +
                                 std::to_string(start / cfg_.batch_size + 1) + ": parameter " + path + " is non-finite");
      }
    }
  }

  EpochMetrics m;
  m.epoch = e + 1;
  m.lr = lr;
  m.train_loss = loss_sum / static_cast<double>(loss_count);
  try {
    m.val_nme = evaluate(*model_, data_.val, data_.eyes).nme;
  } catch (const std::runtime_error& err) {
    throw std::runtime_error("training diverged at epoch " + std::to_string(e + 1) + ", validation: " + err.what());
  }
  ++epoch_;
  history_.push_back(m);
  return m;
}

std::vector<EpochMetrics> Trainer::run(const std::function<void(const EpochMetrics&)>& on_epoch) {
  while (epoch_ < cfg_.epochs) {
    const EpochMetrics m = run_epoch();
    if (on_epoch) on_epoch(m);
  }
  return history_;
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint ck;
  ck.config = serialize_config(cfg_);
  ck.epoch = epoch_;
  ck.rng_state = cfg_.seed;
  ck.landmarks = model_->landmarks();
  ck.eyes = {data_.eyes.first, data_.eyes.second};
  ck.adjacency = model_->adjacency().mask;
  for (const auto& [path, p] : model_->store().params()) ck.params.emplace(path, p.value);
  ck.buffers = model_->store().buffers();
  ck.velocity = velocity_;
  return ck;
}

std::unique_ptr<net::Model> restore_model(const Checkpoint& ck) {
  const TrainConfig cfg = parse_config(ck.config);
  net::ModelConfig mc = model_config(cfg);
  mc.scc.landmarks = ck.landmarks;
  auto model = std::make_unique<net::Model>(mc, adj::from_mask(ck.adjacency), cfg.seed);
  auto& store = model->store();
  if (store.params().size() != ck.params.size() || store.buffers().size() != ck.buffers.size()) {
    throw std::runtime_error("checkpoint: parameter set does not match the stored configuration");
  }
  for (auto& [path, p] : store.params()) {
    auto it = ck.params.find(path);
    if (it == ck.params.end() || it->second.shape() != p.value.shape()) {
      throw std::runtime_error("checkpoint: missing or mis-shaped parameter " + path);
    }
    p.value = it->second;
  }
  for (auto& [path, t] : store.buffers()) {
    auto it = ck.buffers.find(path);
    if (it == ck.buffers.end() || it->second.shape() != t.shape()) {
      throw std::runtime_error("checkpoint: missing or mis-shaped buffer " + path);
    }
    t = it->second;
  }
  return model;
}

}  // namespace scca::train
