#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "oracles.hpp"
#include "scca/ablation.hpp"
#include "scca/checkpoint.hpp"
#include "scca/csv.hpp"
#include "scca/numkit/parallel.hpp"
#include "scca/train.hpp"

namespace adj = scca::adj;
namespace data = scca::data;
namespace loss = scca::loss;
namespace net = scca::net;
namespace nk = scca::nk;
namespace train = scca::train;
using scca::Rng;

namespace {

data::Corpus small_corpus(std::size_t samples, std::uint64_t seed, std::size_t size = 16) {
  data::SynthConfig sc = data::default_synth_config(12);
  sc.samples = samples;
  sc.image_size = size;
  sc.seed = seed;
  sc.occlusion_prob = 0.3;
  return {data::synth_generate(sc), sc.mirror, sc.eye_indices};
}

train::TrainConfig small_config() {
  train::TrainConfig cfg;
  cfg.image_size = 16;
  cfg.channels = {4, 8, 8};
  cfg.expansion = 2;
  cfg.hidden = 8;
  cfg.graph_blocks = 1;
  cfg.batch_size = 5;
  cfg.epochs = 2;
  cfg.lr_period = 1;
  cfg.val_count = 6;
  return cfg;
}

train::Dataset small_data(std::uint64_t seed = 1) { return train::split_corpus(small_corpus(26, seed), 6); }

}  // namespace

TEST(Config, ScheduleAndReferenceRecipe) {
  train::TrainConfig cfg;
  cfg.lr = 0.01;
  cfg.lr_drop = 5;
  cfg.lr_period = 20;
  EXPECT_EQ(train::learning_rate(cfg, 0), 0.01);
  EXPECT_EQ(train::learning_rate(cfg, 19), 0.01);
  EXPECT_DOUBLE_EQ(train::learning_rate(cfg, 20), 0.002);
  EXPECT_DOUBLE_EQ(train::learning_rate(cfg, 45), 0.01 / 25);
  const train::TrainConfig ref = train::reference_config();
  EXPECT_EQ(ref.lr, 0.01);
  EXPECT_EQ(ref.lr_drop, 5.0);
  EXPECT_EQ(ref.lr_period, 100u);
  EXPECT_EQ(ref.momentum, 0.9);
  EXPECT_EQ(ref.weight_decay, 5e-4);
  EXPECT_EQ(ref.batch_size, 64u);
  EXPECT_EQ(ref.image_size, 256u);
  EXPECT_EQ(ref.hidden, 128u);
  const train::TrainConfig desk;
  EXPECT_EQ(desk.batch_size, 16u);
  EXPECT_EQ(desk.epochs, 60u);
  EXPECT_EQ(desk.lr_period, 20u);
  EXPECT_EQ(desk.loss.kind, loss::LossKind::SoftWing);
}

TEST(Config, ValidationNamesTheKey) {
  for (auto [key, value] : std::vector<std::pair<std::string, std::string>>{
           {"lr", "0"}, {"lr_drop", "1"}, {"batch_size", "1"}, {"k", "0"}, {"omega2", "0.5"}}) {
    train::TrainConfig cfg;
    train::apply_key_value(cfg, key, value);
    try {
      train::validate(cfg);
      ADD_FAILURE() << key << "=" << value << " accepted";
    } catch (const std::invalid_argument& e) {
      EXPECT_NE(std::string(e.what()).find(key), std::string::npos) << e.what();
    }
  }
  train::TrainConfig cfg;
  EXPECT_THROW(train::apply_key_value(cfg, "nonsense", "1"), std::invalid_argument);
  EXPECT_THROW(train::apply_key_value(cfg, "epochs", "many"), std::invalid_argument);
  EXPECT_THROW(train::apply_key_value(cfg, "head", "cnn"), std::invalid_argument);
}

TEST(Config, SerialisationRoundTrips) {
  train::TrainConfig cfg = small_config();
  cfg.head = net::HeadKind::Fc;
  cfg.attention = net::AttentionMode::Self;
  cfg.loss = loss::default_params(loss::LossKind::Wing);
  cfg.lr = 0.1 + 0.2;
  cfg.seed = 0xFFFFFFFFFFFFull;
  const std::string text = train::serialize_config(cfg);
  EXPECT_EQ(train::serialize_config(train::parse_config(text)), text);
  EXPECT_EQ(train::parse_config(text).lr, cfg.lr);
  const auto kv = train::to_key_values(cfg);
  EXPECT_EQ(kv.size(), train::config_keys().size());
  for (const auto& key : train::config_keys()) EXPECT_EQ(kv.count(key), 1u) << key;
  const train::TrainConfig c2 = train::parse_config("# comment\n\nepochs=3\n  k = 4 \n", cfg);
  EXPECT_EQ(c2.epochs, 3u);
  EXPECT_EQ(c2.k, 4u);
  EXPECT_EQ(c2.head, net::HeadKind::Fc);
  EXPECT_THROW(train::parse_config("epochs\n"), std::invalid_argument);
}

TEST(Sgd, HandCases) {
  nk::Tensor p = nk::Tensor::from({3}, {1, -2, 3}), v({3}, 0.0);
  const nk::Tensor g = nk::Tensor::from({3}, {0.5, 0.25, -1});
  train::sgd_update(p, g, v, 0.1, 0.0, 0.0);
  EXPECT_EQ(p, nk::Tensor::from({3}, {1 - 0.1 * 0.5, -2 - 0.1 * 0.25, 3 + 0.1}));
  nk::Tensor q = nk::Tensor::from({2}, {4, 5}), w({2}, 0.0);
  train::sgd_update(q, nk::Tensor({2}, 0.0), w, 0.3, 0.9, 0.0);
  EXPECT_EQ(q, nk::Tensor::from({2}, {4, 5}));
  EXPECT_THROW(train::sgd_update(q, nk::Tensor({3}, 0.0), w, 0.1, 0.9, 0.0), std::invalid_argument);
}

TEST(Sgd, MomentumRecurrenceOnAQuadratic) {
  const double lr = 0.05, mu = 0.9, wd = 0.01, a = 3.0;
  nk::Tensor x = nk::Tensor::scalar(2.0), v = nk::Tensor::scalar(0.0);
  double ex = 2.0, ev = 0.0;
  for (int step = 0; step < 2; ++step) {
    const nk::Tensor g = nk::Tensor::scalar(a * x[0]);
    train::sgd_update(x, g, v, lr, mu, wd);
    ev = mu * ev + a * ex + wd * ex;
    ex = ex - lr * ev;
    EXPECT_NEAR(x[0], ex, 1e-15);
    EXPECT_NEAR(v[0], ev, 1e-15);
  }
}

TEST(Sgd, StepSkipsDecayForFlaggedParameters) {
  nk::ParameterStore store;
  store.add("w", nk::Tensor({2}, 1.0), true).grad = nk::Tensor({2}, 0.0);
  store.add("bn/gamma", nk::Tensor({2}, 1.0), false).grad = nk::Tensor({2}, 0.0);
  std::map<std::string, nk::Tensor> velocity;
  train::sgd_step(store, velocity, 0.1, 0.9, 0.5);
  EXPECT_EQ(store.param("w").value, nk::Tensor({2}, 1.0 - 0.1 * 0.5));
  EXPECT_EQ(store.param("bn/gamma").value, nk::Tensor({2}, 1.0));
  EXPECT_EQ(velocity.size(), 2u);
}

TEST(Data, SplitBatchAndOrder) {
  const data::Corpus c = small_corpus(10, 3);
  const train::Dataset d = train::split_corpus(c, 4);
  EXPECT_EQ(d.train.size(), 6u);
  EXPECT_EQ(d.val.size(), 4u);
  EXPECT_EQ(d.val.front().id, c.samples[6].id);
  EXPECT_THROW(train::split_corpus(c, 10), std::invalid_argument);

  const train::Batch plain = train::make_batch(d.train, {1, 3}, false);
  EXPECT_EQ(plain.images.shape(), (nk::Shape{2, 3, 16, 16}));
  EXPECT_EQ(plain.targets.shape(), (nk::Shape{2, 12, 2}));
  EXPECT_EQ(plain.targets[0], d.train[1].landmarks[0].x / 16.0);
  EXPECT_EQ(plain.targets[2 * 12 * 2 - 1], d.train[3].landmarks[11].y / 16.0);
  for (double w : plain.weights.data()) EXPECT_EQ(w, 1.0);
  const train::Batch masked = train::make_batch(d.train, {1, 3}, true);
  for (std::size_t s = 0; s < 2; ++s)
    for (std::size_t j = 0; j < 12; ++j) {
      const bool vis = d.train[s == 0 ? 1 : 3].visibility[j];
      EXPECT_EQ(masked.weights[(s * 12 + j) * 2], vis ? 1.0 : 0.0);
    }

  const auto o = train::epoch_order(5, 2, 50);
  EXPECT_EQ(o, train::epoch_order(5, 2, 50));
  EXPECT_NE(o, train::epoch_order(5, 3, 50));
  EXPECT_EQ(std::set<std::size_t>(o.begin(), o.end()).size(), 50u);
  EXPECT_EQ(*std::max_element(o.begin(), o.end()), 49u);
}

TEST(Metrics, CsvRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "scca_train_metrics.csv";
  const std::vector<train::EpochMetrics> h{{1, 0.01, 12.5, 9.25}, {2, 0.002, 0.1 + 0.2, 1.0 / 3}};
  train::write_metrics_csv(path, h);
  const auto back = train::read_metrics_csv(path);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].epoch, 2u);
  EXPECT_EQ(back[1].lr, 0.002);
  EXPECT_EQ(back[1].train_loss, 0.1 + 0.2);
  EXPECT_EQ(back[1].val_nme, 1.0 / 3);
  EXPECT_EQ(scca::read_csv(path).header, (std::vector<std::string>{"epoch", "lr", "train_loss", "val_nme"}));
}

TEST(Checkpoint, EncodingIsStableAndValidated) {
  train::Trainer t(small_config(), small_data());
  t.run_epoch();
  const train::Checkpoint ck = t.checkpoint();
  const auto bytes = train::encode_checkpoint(ck);
  ASSERT_GT(bytes.size(), 5u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 5), "SCCA1");
  EXPECT_EQ(train::encode_checkpoint(train::decode_checkpoint(bytes)), bytes);

  const auto path = std::filesystem::temp_directory_path() / "scca_train_ck.bin";
  train::save_checkpoint(path, ck);
  EXPECT_EQ(train::encode_checkpoint(train::load_checkpoint(path)), bytes);

  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(train::decode_checkpoint(bad), std::runtime_error);
  auto truncated = bytes;
  truncated.resize(bytes.size() / 2);
  EXPECT_THROW(train::decode_checkpoint(truncated), std::runtime_error);
}

TEST(Checkpoint, RestoredModelReproducesValidationNme) {
  train::Trainer t(small_config(), small_data());
  t.run_epoch();
  const train::Checkpoint ck = train::decode_checkpoint(train::encode_checkpoint(t.checkpoint()));
  const auto model = train::restore_model(ck);
  const auto a = train::evaluate(t.model(), t.data().val, t.data().eyes);
  const auto b = train::evaluate(*model, t.data().val, t.data().eyes);
  EXPECT_EQ(a.nme, b.nme);
  EXPECT_EQ(a.errors, b.errors);
  EXPECT_EQ(a.nme, t.history().back().val_nme);
}

TEST(Trainer, ZeroLearningRateLeavesParametersUnchanged) {
  const train::TrainConfig cfg = small_config();
  const train::Dataset d = small_data();
  train::Trainer t(cfg, d);
  net::Model& model = t.model();
  std::map<std::string, nk::Tensor> before;
  for (const auto& [path, p] : model.store().params()) before[path] = p.value;
  std::map<std::string, nk::Tensor> velocity;
  const auto order = train::epoch_order(cfg.seed, 0, d.train.size());
  for (std::size_t start = 0; start + 1 < order.size(); start += cfg.batch_size) {
    std::vector<std::size_t> idx(order.begin() + start, order.begin() + std::min(order.size(), start + cfg.batch_size));
    const train::Batch b = train::make_batch(d.train, idx, false);
    model.store().zero_grad();
    nk::Tape tape;
    tape.backward(loss::batch_loss(model.forward(tape, b.images, nk::BnMode::Train), b.targets, cfg.loss));
    train::sgd_step(model.store(), velocity, 0.0, cfg.momentum, cfg.weight_decay);
  }
  for (const auto& [path, p] : model.store().params()) EXPECT_EQ(p.value, before.at(path)) << path;
}

TEST(Trainer, SameSeedGivesIdenticalCheckpointsAcrossThreadCounts) {
  std::vector<std::vector<std::uint8_t>> runs;
  for (std::size_t threads : {1, 1, 4}) {
    nk::set_num_threads(threads);
    train::Trainer t(small_config(), small_data());
    t.run();
    runs.push_back(train::encode_checkpoint(t.checkpoint()));
  }
  nk::set_num_threads(1);
  EXPECT_TRUE(runs[0] == runs[1]);
  EXPECT_TRUE(runs[0] == runs[2]);

  train::TrainConfig other = small_config();
  other.seed = 9;
  train::Trainer t(other, small_data());
  t.run();
  EXPECT_FALSE(train::encode_checkpoint(t.checkpoint()) == runs[0]);
}

TEST(Trainer, LogsScheduleAndResumesExactly) {
  train::TrainConfig cfg = small_config();
  cfg.epochs = 3;
  train::Trainer straight(cfg, small_data());
  const auto history = straight.run();
  ASSERT_EQ(history.size(), 3u);
  for (const auto& m : history) {
    EXPECT_EQ(m.lr, train::learning_rate(cfg, m.epoch - 1));
    EXPECT_TRUE(std::isfinite(m.train_loss));
    EXPECT_GT(m.val_nme, 0.0);
  }

  cfg.epochs = 1;
  train::Trainer first(cfg, small_data());
  first.run();
  cfg.epochs = 3;
  train::Trainer resumed = train::Trainer::resume(first.checkpoint(), small_data(), cfg);
  EXPECT_EQ(resumed.epoch(), 1u);
  resumed.run();
  EXPECT_TRUE(train::encode_checkpoint(resumed.checkpoint()) == train::encode_checkpoint(straight.checkpoint()));

  train::TrainConfig changed = cfg;
  changed.lr = 0.02;
  EXPECT_THROW(train::Trainer::resume(first.checkpoint(), small_data(), changed), std::invalid_argument);
}

TEST(Trainer, DivergenceIsReportedWithTheEpoch) {
  train::TrainConfig cfg = small_config();
  cfg.lr = 1e12;
  cfg.lr_drop = 1.0001;
  train::Trainer t(cfg, small_data());
  try {
    t.run();
    FAIL() << "training with a huge step should diverge";
  } catch (const std::runtime_error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("training diverged at epoch "), std::string::npos) << msg;
  }
}

TEST(Trainer, RejectsMismatchedInputs) {
  train::TrainConfig cfg = small_config();
  cfg.image_size = 32;
  EXPECT_THROW(train::Trainer(cfg, small_data()), std::invalid_argument);
  cfg = small_config();
  EXPECT_THROW(train::Trainer(cfg, small_data(), adj::build_adjacency(small_data().train, 2)), std::invalid_argument);
}

TEST(Trainer, DeskRecipeHalvesTheTrainingLoss) {
  data::SynthConfig sc = data::default_synth_config(68);
  sc.samples = 2500;
  sc.image_size = 32;
  sc.occlusion_prob = 0.5;
  train::TrainConfig cfg;
  cfg.image_size = 32;
  cfg.channels = {4, 8, 16, 32};
  cfg.epochs = 6;
  cfg.lr_period = 5;
  cfg.val_count = 500;
  train::Trainer t(cfg, train::split_corpus({data::synth_generate(sc), sc.mirror, sc.eye_indices}, 500));
  const auto h = t.run();
  EXPECT_LE(h.back().train_loss, 0.5 * h.front().train_loss)
      << "epoch 1 " << h.front().train_loss << ", epoch " << h.size() << " " << h.back().train_loss;
}

TEST(Ablation, GridSwitchesOneFactorAtATime) {
  const train::TrainConfig base = small_config();
  const auto grid = train::ablation_grid(base);
  ASSERT_FALSE(grid.empty());
  EXPECT_EQ(grid.front().name, "base");
  std::set<std::string> names;
  for (const auto& cell : grid) {
    names.insert(cell.name);
    auto a = train::to_key_values(cell.config), b = train::to_key_values(base);
    std::size_t diffs = 0;
    for (const auto& [k, v] : a) diffs += b.at(k) != v;
    if (cell.factor == "loss") EXPECT_GE(diffs, 1u) << cell.name;
    else EXPECT_EQ(diffs, cell.name == "base" ? 0u : 1u) << cell.name;
  }
  for (const char* n : {"head=fc", "attention=off", "attention=self", "loss=l1", "loss=wing", "k=1", "k=10",
                        "dynamic=false"})
    EXPECT_EQ(names.count(n), 1u) << n;
  EXPECT_EQ(names.count("k=3"), 0u);
}

TEST(Ablation, AttentionSwitchKeepsAdjacencyAndHeadSwitchKeepsBackbone) {
  const train::Dataset d = small_data();
  train::TrainConfig cfg = small_config();
  train::Trainer a(cfg, d);
  cfg.attention = net::AttentionMode::Off;
  train::Trainer b(cfg, d);
  cfg.attention = net::AttentionMode::Semantic;
  cfg.head = net::HeadKind::Fc;
  train::Trainer c(cfg, d);
  EXPECT_EQ(a.checkpoint().adjacency, b.checkpoint().adjacency);
  for (const auto& [path, p] : a.model().store().params())
    if (path.rfind("backbone/", 0) == 0) {
      EXPECT_EQ(p.value, b.model().store().param(path).value) << path;
      EXPECT_EQ(p.value, c.model().store().param(path).value) << path;
    }
}

TEST(Ablation, SummaryCsvAveragesSeeds) {
  const auto grid = train::ablation_grid(small_config());
  std::vector<train::AblationRun> runs;
  for (std::uint64_t s = 0; s < 2; ++s) runs.push_back({grid[0].name, s, scca::eval::aggregate({0.01 * (s + 1), 0.2})});
  const auto path = std::filesystem::temp_directory_path() / "scca_ablation.csv";
  train::write_ablation_csv(path, {grid[0]}, runs);
  const scca::CsvTable t = scca::read_csv(path);
  ASSERT_EQ(t.rows.size(), 3u);
  EXPECT_EQ(t.rows[2][t.column("seed")], "mean");
  EXPECT_DOUBLE_EQ(std::stod(t.rows[2][t.column("nme")]), 0.5 * (runs[0].report.nme + runs[1].report.nme));
}
