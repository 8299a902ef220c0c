#include "scca/cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <ostream>
#include <stdexcept>

#include "CLI11.hpp"
#include "scca/ablation.hpp"
#include "scca/adjacency.hpp"
#include "scca/checkpoint.hpp"
#include "scca/csv.hpp"
#include "scca/numkit/gradcheck.hpp"
#include "scca/train.hpp"

namespace fs = std::filesystem;

namespace scca::cli {
namespace {

// Raised for bad flag combinations discovered after parsing.
struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

void require_dir(const std::string& path, const char* flag) {
  if (!fs::is_directory(path)) throw UsageError(std::string(flag) + ": directory '" + path + "' does not exist");
}

void require_file(const std::string& path, const char* flag) {
  if (!fs::is_regular_file(path)) throw UsageError(std::string(flag) + ": file '" + path + "' does not exist");
}

std::string dashed(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  return key;
}

// Training configuration assembled from an optional key=value file, then
// `--set key=value` entries, then one flag per config key.
struct ConfigFlags {
  std::string file;
  std::vector<std::string> sets;
  std::map<std::string, std::string> values;

  void add_to(CLI::App& app) {
    app.add_option("--config", file, "key=value configuration file");
    app.add_option("--set", sets, "Override a configuration key (key=value); repeatable");
    for (const auto& key : train::config_keys()) {
      app.add_option("--" + dashed(key), values[key], "Configuration key '" + key + "'");
    }
  }

  train::TrainConfig resolve(train::TrainConfig base = {}) const {
    train::TrainConfig cfg = base;
    if (!file.empty()) {
      require_file(file, "--config");
      cfg = train::load_config(file, base);
    }
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + s + "'");
      train::apply_key_value(cfg, s.substr(0, eq), s.substr(eq + 1));
    }
    for (const auto& key : train::config_keys()) {
      const auto& v = values.at(key);
      if (!v.empty()) train::apply_key_value(cfg, key, v);
    }
    train::validate(cfg);
    return cfg;
  }
};

train::Dataset load_split(const std::string& dir, std::size_t val_count) {
  return train::split_corpus(data::read_corpus(dir), val_count);
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::size_t n = 68;
  std::size_t m = 0;
  std::uint64_t seed = 0;
  std::string out;
  std::size_t size = 64;
  double occlusion = 0.0;
  double occlusion_fraction = 0.2;
  std::size_t modes = data::kMaxDeformationModes;
  double amplitude = 1.0;
  double noise = 0.3;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  if (a.n < 10) throw UsageError("--n must be at least 10");
  data::SynthConfig cfg = data::default_synth_config(a.n);
  cfg.samples = a.m;
  cfg.seed = a.seed;
  cfg.image_size = a.size;
  cfg.occlusion_prob = a.occlusion;
  cfg.occlusion_fraction = a.occlusion_fraction;
  cfg.deformation_modes = a.modes;
  cfg.deformation_amplitude = a.amplitude;
  cfg.noise_sigma = a.noise;
  try {
    data::validate(cfg);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  data::Corpus corpus{data::synth_generate(cfg), cfg.mirror, cfg.eye_indices};
  data::write_corpus(a.out, corpus);
  out << "wrote " << corpus.samples.size() << " samples with " << a.n << " landmarks to " << a.out << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct AdjacencyArgs {
  std::string data;
  std::string out;
  std::size_t k = 3;
  std::size_t val_count = 500;
};

int cmd_build_adjacency(const AdjacencyArgs& a, std::ostream& out) {
  require_dir(a.data, "--data");
  if (a.k == 0) throw UsageError("--k must be positive");
  data::Corpus corpus = data::read_corpus(a.data);
  if (a.val_count >= corpus.samples.size()) {
    throw UsageError("--val-count must be smaller than the corpus size (" + std::to_string(corpus.samples.size()) + ")");
  }
  corpus.samples.resize(corpus.samples.size() - a.val_count);
  const adj::CorrelationBundle c = adj::pearson(data::to_landmark_tensor(corpus.samples));
  const adj::SparseAdjacency m = adj::topk_sparsify(c.c, a.k);

  fs::create_directories(a.out);
  const fs::path dir(a.out);
  adj::write_adjacency(dir / "adjacency.csv", m);
  adj::write_matrix_csv(dir / "correlation.csv", c.c);
  adj::write_matrix_csv(dir / "correlation_x.csv", c.cx);
  adj::write_matrix_csv(dir / "correlation_y.csv", c.cy);
  const auto hist = adj::in_degree_histogram(m);
  {
    CsvWriter w(dir / "degree_histogram.csv", {"in_degree", "nodes"});
    for (std::size_t d = 0; d < hist.size(); ++d)
      if (hist[d]) w.row(std::vector<std::string>{std::to_string(d), std::to_string(hist[d])});
  }
  std::size_t max_deg = 0;
  for (std::size_t d = 0; d < hist.size(); ++d)
    if (hist[d]) max_deg = d;
  out << "adjacency: N=" << m.nodes() << " k=" << m.k << " nonzeros=" << m.nonzeros() << " max in-degree=" << max_deg
      << " (from " << corpus.samples.size() << " training samples)\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  ConfigFlags config;
  std::string out;
  std::string adjacency;
  std::string resume;
};

void print_epoch(std::ostream& out, const train::EpochMetrics& m) {
  out << "epoch " << m.epoch << " lr " << format_double(m.lr) << " train_loss " << format_double(m.train_loss)
      << " val_nme " << format_double(m.val_nme) << '\n'
      << std::flush;
}

int cmd_train(const TrainArgs& a, std::ostream& out) {
  std::optional<train::Checkpoint> resume;
  train::TrainConfig cfg;
  if (!a.resume.empty()) {
    require_file(a.resume, "--resume");
    resume = train::load_checkpoint(a.resume);
    cfg = a.config.resolve(train::parse_config(resume->config));
  } else {
    cfg = a.config.resolve();
  }
  if (cfg.data.empty()) throw UsageError("no corpus given (--data or data= in the config)");
  require_dir(cfg.data, "--data");
  if (!a.adjacency.empty()) require_file(a.adjacency, "--adjacency");

  train::Dataset ds = load_split(cfg.data, cfg.val_count);
  std::optional<train::Trainer> trainer;
  if (resume) {
    trainer.emplace(train::Trainer::resume(*resume, std::move(ds), cfg));
  } else if (!a.adjacency.empty()) {
    trainer.emplace(cfg, std::move(ds), adj::read_adjacency(a.adjacency));
  } else {
    trainer.emplace(cfg, std::move(ds));
  }

  fs::create_directories(a.out);
  const fs::path dir(a.out);
  {
    std::ofstream f(dir / "config.txt");
    f << train::serialize_config(cfg);
  }
  out << "training " << net::to_string(cfg.head) << " head, " << trainer->model().store().count()
      << " parameters, epochs " << trainer->epoch() << ".." << cfg.epochs << '\n';
  std::vector<train::EpochMetrics> earlier;
  if (resume && fs::exists(dir / "metrics.csv")) {
    for (const auto& m : train::read_metrics_csv(dir / "metrics.csv"))
      if (m.epoch <= resume->epoch) earlier.push_back(m);
  }
  trainer->run([&](const train::EpochMetrics& m) {
    print_epoch(out, m);
    auto log = earlier;
    log.insert(log.end(), trainer->history().begin(), trainer->history().end());
    train::write_metrics_csv(dir / "metrics.csv", log);
  });
  train::save_checkpoint(dir / "checkpoint.bin", trainer->checkpoint());
  adj::write_adjacency(dir / "adjacency.csv", trainer->model().adjacency());
  out << "saved " << (dir / "checkpoint.bin").string() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string out;
  std::string split = "val";
  std::size_t val_count = 0;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  require_file(a.checkpoint, "--checkpoint");
  if (a.split != "val" && a.split != "all") throw UsageError("--split must be 'val' or 'all'");
  const train::Checkpoint ck = train::load_checkpoint(a.checkpoint);
  const train::TrainConfig cfg = train::parse_config(ck.config);
  const std::string data_dir = a.data.empty() ? cfg.data : a.data;
  require_dir(data_dir, "--data");

  data::Corpus corpus = data::read_corpus(data_dir);
  std::vector<data::LandmarkSample> samples = std::move(corpus.samples);
  if (a.split == "val") {
    const std::size_t v = a.val_count ? a.val_count : cfg.val_count;
    if (v > samples.size()) throw UsageError("validation split larger than the corpus");
    samples.erase(samples.begin(), samples.end() - static_cast<std::ptrdiff_t>(v));
  }
  if (samples.empty()) throw UsageError("no samples to evaluate");
  if (samples.front().size() != ck.landmarks) {
    throw UsageError("corpus has " + std::to_string(samples.front().size()) + " landmarks, checkpoint expects " +
                     std::to_string(ck.landmarks));
  }

  auto model = train::restore_model(ck);
  const eval::EvalReport report = train::evaluate(*model, samples, corpus.eye_indices);
  fs::create_directories(a.out);
  const fs::path dir(a.out);
  std::vector<std::string> ids;
  for (const auto& s : samples) ids.push_back(s.id);
  eval::write_report_csv(dir / "report.csv", report);
  eval::write_ced_csv(dir / "ced.csv", report);
  eval::write_errors_csv(dir / "errors.csv", ids, report);
  out << "samples " << samples.size() << " NME " << format_double(report.nme) << "% FR@0.1 "
      << format_double(report.failure_rate) << "% AUC@0.1 " << format_double(report.auc) << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct LossPlotArgs {
  std::string out;
  double min = -30.0;
  double max = 30.0;
  double step = 0.01;
  double omega = 20.0;
  double omega1 = 2.0;
  double omega2 = 20.0;
  double epsilon = 0.5;
};

int cmd_loss_plot(const LossPlotArgs& a, std::ostream& out) {
  if (!(a.step > 0) || !(a.max > a.min)) throw UsageError("loss-plot: need --step > 0 and --max > --min");
  loss::LossParams base;
  base.omega = a.omega;
  base.omega1 = a.omega1;
  base.omega2 = a.omega2;
  base.epsilon = a.epsilon;
  std::vector<loss::LossParams> kinds;
  for (auto k : {loss::LossKind::L1, loss::LossKind::Wing, loss::LossKind::SoftWing}) {
    loss::LossParams p = base;
    p.kind = k;
    try {
      p.validate();
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    kinds.push_back(p);
  }
  // Grid points are integer multiples of the step, so x and -x are exact negatives.
  const auto lo = static_cast<long long>(std::ceil(a.min / a.step - 1e-9));
  const auto hi = static_cast<long long>(std::floor(a.max / a.step + 1e-9));
  if (hi - lo > 10'000'000) throw UsageError("loss-plot: grid too large");

  CsvWriter w(a.out, {"x", "l1", "wing", "softwing", "l1_grad", "wing_grad", "softwing_grad"});
  for (long long i = lo; i <= hi; ++i) {
    const double x = static_cast<double>(i) * a.step;
    std::vector<double> row{x};
    for (const auto& p : kinds) row.push_back(loss::loss_value(x, p));
    for (const auto& p : kinds) row.push_back(loss::loss_grad(x, p));
    w.row(row);
  }
  out << "wrote " << (hi - lo + 1) << " rows to " << a.out << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct GradcheckArgs {
  std::uint64_t seed = 0;
  std::size_t per_family = 20;
  double tolerance = 1e-5;
  double step = 1e-5;
  std::string head = "scc";
  std::string attention = "semantic";
  std::string loss = "softwing";
  bool dynamic = true;
  std::string out;
};

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out) {
  train::TrainConfig cfg;
  cfg.image_size = 16;
  cfg.channels = {4, 8, 8};
  cfg.expansion = 2;
  cfg.hidden = 8;
  cfg.graph_blocks = 2;
  cfg.head = net::parse_head_kind(a.head);
  cfg.attention = net::parse_attention_mode(a.attention);
  cfg.loss = loss::default_params(loss::parse_loss_kind(a.loss));
  cfg.dynamic = a.dynamic;
  cfg.seed = a.seed;
  train::validate(cfg);
  if (a.per_family == 0 || !(a.tolerance > 0) || !(a.step > 0)) {
    throw UsageError("gradcheck: --per-family, --tolerance and --step must be positive");
  }

  data::SynthConfig sc = data::default_synth_config(12);
  sc.samples = 8;
  sc.image_size = cfg.image_size;
  sc.seed = a.seed;
  const auto samples = data::synth_generate(sc);
  net::ModelConfig mc = train::model_config(cfg);
  mc.scc.landmarks = sc.n_landmarks;
  net::Model model(mc, adj::build_adjacency(samples, cfg.k), a.seed);
  const train::Batch batch = train::make_batch(samples, {0, 1, 2, 3}, false);

  nk::GradCheckOptions opt;
  opt.per_family = a.per_family;
  opt.tolerance = a.tolerance;
  opt.step = a.step;
  opt.seed = a.seed;
  const auto result = nk::check_gradients(
      model.store(),
      [&](nk::Tape& tape) {
        return loss::batch_loss(model.forward(tape, batch.images, nk::BnMode::Train), batch.targets, cfg.loss);
      },
      nk::digit_family, opt);
  const auto& rows = result.rows;

  struct Summary {
    std::size_t checked = 0, failed = 0;
    double worst = 0.0;
  };
  std::map<std::string, Summary> by_family;
  for (const auto& r : rows) {
    auto& s = by_family[r.family];
    ++s.checked;
    s.failed += r.pass ? 0 : 1;
    s.worst = std::max(s.worst, r.rel_error);
  }
  std::size_t failed = 0;
  for (const auto& [family, s] : by_family) {
    out << (s.failed ? "FAIL " : "ok   ") << family << "  checked " << s.checked << "  max rel err "
        << format_double(s.worst) << '\n';
    failed += s.failed;
  }
  if (!a.out.empty()) {
    CsvWriter w(a.out, {"family", "path", "index", "analytic", "numeric", "rel_error", "pass"});
    for (const auto& r : rows) {
      w.row(std::vector<std::string>{r.family, r.path, std::to_string(r.index), format_double(r.analytic),
                                     format_double(r.numeric), format_double(r.rel_error), r.pass ? "1" : "0"});
    }
  }
  out << rows.size() - failed << "/" << rows.size() << " checks passed (" << result.skipped
      << " skipped at non-differentiable points)\n";
  return failed == 0 ? kExitOk : kExitRuntime;
}

// ---------------------------------------------------------------------------

struct AblateArgs {
  ConfigFlags config;
  std::string out;
  std::vector<std::uint64_t> seeds{0};
};

int cmd_ablate(const AblateArgs& a, std::ostream& out) {
  const train::TrainConfig base = a.config.resolve();
  if (base.data.empty()) throw UsageError("no corpus given (--data or data= in the config)");
  require_dir(base.data, "--data");
  if (a.seeds.empty()) throw UsageError("--seeds must list at least one seed");
  const auto cells = train::ablation_grid(base);
  for (const auto& c : cells) train::validate(c.config);

  const train::Dataset ds = load_split(base.data, base.val_count);
  std::map<std::size_t, adj::SparseAdjacency> graphs;
  for (const auto& c : cells)
    if (!graphs.count(c.config.k)) graphs.emplace(c.config.k, adj::build_adjacency(ds.train, c.config.k));

  fs::create_directories(a.out);
  std::vector<train::AblationRun> runs;
  for (const auto& cell : cells) {
    for (std::uint64_t seed : a.seeds) {
      train::TrainConfig cfg = cell.config;
      cfg.seed = seed;
      const fs::path dir = fs::path(a.out) / cell.name / ("seed" + std::to_string(seed));
      fs::create_directories(dir);
      train::Trainer trainer(cfg, ds, graphs.at(cfg.k));
      trainer.run();
      train::write_metrics_csv(dir / "metrics.csv", trainer.history());
      train::AblationRun run{cell.name, seed, train::evaluate(trainer.model(), ds.val, ds.eyes)};
      eval::write_report_csv(dir / "report.csv", run.report);
      out << cell.name << " seed " << seed << " NME " << format_double(run.report.nme) << "%\n" << std::flush;
      runs.push_back(std::move(run));
    }
  }
  train::write_ablation_csv(fs::path(a.out) / "summary.csv", cells, runs);
  out << "wrote " << (fs::path(a.out) / "summary.csv").string() << '\n';
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Structure-coherent facial landmark regression: data, graph, training and evaluation tools", "scca"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every command");

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic face-landmark corpus");
  s->add_option("--n", synth.n, "Landmarks per face")->capture_default_str();
  s->add_option("--m", synth.m, "Number of samples")->required();
  s->add_option("--seed", synth.seed, "Random seed")->capture_default_str();
  s->add_option("--out", synth.out, "Output corpus directory")->required();
  s->add_option("--size", synth.size, "Image side in pixels")->capture_default_str();
  s->add_option("--occlusion", synth.occlusion, "Probability of an occluding patch")->capture_default_str();
  s->add_option("--occlusion-fraction", synth.occlusion_fraction, "Patch side as a fraction of the image")
      ->capture_default_str();
  s->add_option("--modes", synth.modes, "Number of shape deformation modes")->capture_default_str();
  s->add_option("--amplitude", synth.amplitude, "Deformation amplitude multiplier")->capture_default_str();
  s->add_option("--noise", synth.noise, "Per-landmark jitter in pixels")->capture_default_str();

  AdjacencyArgs adjacency;
  auto* b = app.add_subcommand("build-adjacency", "Build the static landmark graph from a corpus");
  b->add_option("--data", adjacency.data, "Corpus directory")->required();
  b->add_option("--out", adjacency.out, "Output directory")->required();
  b->add_option("--k", adjacency.k, "Neighbours per landmark")->capture_default_str();
  b->add_option("--val-count", adjacency.val_count, "Trailing samples excluded as validation")->capture_default_str();

  TrainArgs train_args;
  auto* t = app.add_subcommand("train", "Train a model");
  train_args.config.add_to(*t);
  t->add_option("--out", train_args.out, "Output directory (checkpoint.bin, metrics.csv)")->required();
  t->add_option("--adjacency", train_args.adjacency, "Prebuilt adjacency CSV");
  t->add_option("--resume", train_args.resume, "Continue from a checkpoint");

  EvalArgs eval_args;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint");
  e->add_option("--checkpoint", eval_args.checkpoint, "Checkpoint file")->required();
  e->add_option("--data", eval_args.data, "Corpus directory (defaults to the training corpus)");
  e->add_option("--out", eval_args.out, "Output directory")->required();
  e->add_option("--split", eval_args.split, "val or all")->capture_default_str();
  e->add_option("--val-count", eval_args.val_count, "Validation size (defaults to the training config)");

  LossPlotArgs plot;
  auto* l = app.add_subcommand("loss-plot", "Tabulate L1, Wing and Soft Wing losses and gradients");
  l->add_option("--out", plot.out, "Output CSV")->required();
  l->add_option("--min", plot.min, "Smallest error")->capture_default_str();
  l->add_option("--max", plot.max, "Largest error")->capture_default_str();
  l->add_option("--step", plot.step, "Grid step")->capture_default_str();
  l->add_option("--omega", plot.omega, "Wing width")->capture_default_str();
  l->add_option("--omega1", plot.omega1, "Soft Wing switch point")->capture_default_str();
  l->add_option("--omega2", plot.omega2, "Soft Wing log scale")->capture_default_str();
  l->add_option("--epsilon", plot.epsilon, "Log curvature")->capture_default_str();

  GradcheckArgs grad;
  auto* g = app.add_subcommand("gradcheck", "Compare backpropagated and finite-difference gradients on a small model");
  g->add_option("--seed", grad.seed, "Random seed")->capture_default_str();
  g->add_option("--per-family", grad.per_family, "Entries checked per parameter family")->capture_default_str();
  g->add_option("--tolerance", grad.tolerance, "Maximum relative error")->capture_default_str();
  g->add_option("--step", grad.step, "Finite-difference step")->capture_default_str();
  g->add_option("--head", grad.head, "scc or fc")->capture_default_str();
  g->add_option("--attention", grad.attention, "semantic, self or off")->capture_default_str();
  g->add_option("--loss", grad.loss, "l1, wing or softwing")->capture_default_str();
  g->add_flag("--dynamic,!--no-dynamic", grad.dynamic, "Input-dependent adjacency weights");
  g->add_option("--out", grad.out, "Optional per-check CSV");

  AblateArgs ablate;
  auto* a = app.add_subcommand("ablate", "Train the one-factor-at-a-time ablation grid");
  ablate.config.add_to(*a);
  a->add_option("--out", ablate.out, "Output directory")->required();
  a->add_option("--seeds", ablate.seeds, "Seeds to average over")->delimiter(',')->capture_default_str();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& pe) {
    std::ostringstream o, x;
    const int code = app.exit(pe, o, x);
    out << o.str();
    err << x.str();
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*s) return cmd_synth(synth, out);
    if (*b) return cmd_build_adjacency(adjacency, out);
    if (*t) return cmd_train(train_args, out);
    if (*e) return cmd_eval(eval_args, out);
    if (*l) return cmd_loss_plot(plot, out);
    if (*g) return cmd_gradcheck(grad, out);
    if (*a) return cmd_ablate(ablate, out);
  } catch (const std::invalid_argument& ex) {
    err << "error: " << ex.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace scca::cli
