#include <benchmark/benchmark.h>

#include "scca/losses.hpp"
#include "scca/train.hpp"

namespace data = scca::data;
namespace net = scca::net;
namespace nk = scca::nk;
namespace train = scca::train;

namespace {

struct Fixture {
  train::TrainConfig cfg;
  std::vector<data::LandmarkSample> samples;
  train::Batch batch;
  std::unique_ptr<net::Model> model;

  Fixture(net::HeadKind head, bool dynamic) {
    data::SynthConfig sc = data::default_synth_config(68);
    sc.samples = 64;
    sc.image_size = 32;
    samples = data::synth_generate(sc);
    cfg.image_size = 32;
    cfg.channels = {4, 8, 16, 32};
    cfg.head = head;
    cfg.dynamic = dynamic;
    std::vector<std::size_t> idx(cfg.batch_size);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    batch = train::make_batch(samples, idx, false);
    net::ModelConfig mc = train::model_config(cfg);
    mc.scc.landmarks = 68;
    model = std::make_unique<net::Model>(mc, scca::adj::build_adjacency(samples, cfg.k), 0);
  }
};

void BM_ModelForward(benchmark::State& state) {
  Fixture f(state.range(0) ? net::HeadKind::Scc : net::HeadKind::Fc, true);
  for (auto _ : state) {
    nk::Tape tape;
    benchmark::DoNotOptimize(f.model->forward(tape, f.batch.images, nk::BnMode::Eval).value().data().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(f.cfg.batch_size));
}
BENCHMARK(BM_ModelForward)->ArgName("scc")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  Fixture f(net::HeadKind::Scc, state.range(0) != 0);
  std::map<std::string, nk::Tensor> velocity;
  for (auto _ : state) {
    f.model->store().zero_grad();
    nk::Tape tape;
    tape.backward(scca::loss::batch_loss(f.model->forward(tape, f.batch.images, nk::BnMode::Train), f.batch.targets,
                                         f.cfg.loss));
    train::sgd_step(f.model->store(), velocity, 1e-4, f.cfg.momentum, f.cfg.weight_decay);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(f.cfg.batch_size));
}
BENCHMARK(BM_TrainStep)->ArgName("dynamic")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace
