#include "ecs/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <numeric>

#include "ecs/baselines.hpp"
#include "ecs/checkpoint.hpp"
#include "ecs/evolution.hpp"

namespace ecs {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

LabeledDataset head(LabeledDataset d, std::size_t limit) {
  if (limit == 0 || limit >= d.size()) return d;
  std::vector<std::size_t> idx(limit);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return d.subset(idx, d.name);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::io, "cannot write " + path.string());
  out << text;
  if (!out) fail(ErrorCode::io, "short write to " + path.string());
}

std::string fmt(const char* format, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, format, v);
  return buf;
}

struct Context {
  const RunConfig& config;
  const LogSink& sink;
  fs::path out;

  void log(const std::string& line) const {
    if (sink) sink(line);
  }
};

TrainedNetwork require_network(const std::string& path, const char* what) {
  if (path.empty()) {
    fail(ErrorCode::invalid_argument, std::string(what) +
                                          ": no checkpoint given (--checkpoint)");
  }
  if (!fs::exists(path)) fail(ErrorCode::io, "checkpoint " + path + " not found");
  return load_network(path);
}

Individual load_individual_any(const std::string& path, const LayoutPtr& layout) {
  if (!fs::exists(path)) fail(ErrorCode::io, "individual " + path + " not found");
  std::ifstream in(path, std::ios::binary);
  std::string first;
  std::getline(in, first);
  if (first == "ECS-CHECKPOINT") {
    Individual ind = load_individual(path);
    if (layout && !(ind.layout() == *layout)) {
      fail(ErrorCode::layout, "individual layout " + ind.layout().describe() +
                                  " does not match network " + layout->describe());
    }
    return ind;
  }
  if (!layout) fail(ErrorCode::invalid_argument, "plain bit strings need a network");
  std::ifstream again(path);
  std::string text((std::istreambuf_iterator<char>(again)), {});
  return Individual::parse(layout, text);
}

void cmd_train(const Context& ctx) {
  const RunConfig& c = ctx.config;
  const Datasets data = load_datasets(c.data, c.seed);
  const SplitPlan split = make_split(c, data.train.size());
  TrainConfig tc = c.train;
  tc.seed = derive_seed(c.seed, seed_tag::train);
  ctx.log("training LeNet on " + std::to_string(split.train.size()) +
          " images for " + std::to_string(tc.epochs) + " epochs");
  TrainedNetwork net = TrainedNetwork::initialize(
      lenet_spec(), derive_seed(c.seed, seed_tag::init));
  int last_epoch = -1;
  net = train(std::move(net), data.train, tc, split.train,
              [&](int epoch, std::size_t, double) {
                if (epoch != last_epoch) {
                  last_epoch = epoch;
                  ctx.log("epoch " + std::to_string(epoch + 1));
                }
              });
  const fs::path ckpt = ctx.out / "model.ckpt";
  save_checkpoint(net, ckpt);
  // Reload so the reported numbers come from the saved bytes.
  const TrainedNetwork saved = load_network(ckpt);
  const double eval_error = evaluate_error(saved, data.train, split.eval);
  const double test_error = evaluate_error(saved, data.test);
  json j;
  j["checkpoint"] = ckpt.string();
  j["train_samples"] = split.train.size();
  j["eval_error"] = eval_error;
  j["test_error"] = test_error;
  j["test_accuracy"] = 1.0 - test_error;
  j["parameters"] = saved.parameter_count();
  write_text(ctx.out / "train.json", j.dump(2) + "\n");
  ctx.log("test accuracy " + fmt("%.4f", 1.0 - test_error) + ", checkpoint " +
          ckpt.string());
}

void write_evolution(const Context& ctx, const EvolutionResult& evo) {
  save_checkpoint(evo.best, ctx.out / "best.individual");
  write_text(ctx.out / "best.txt", evo.best.to_string() + "\n");
  const std::string jsonl = evo.log.to_jsonl();
  write_text(ctx.out / "evolution.jsonl", jsonl);
  save_log_checkpoint(jsonl, ctx.out / "evolution.log");
}

json report_json(const FitnessReport& r) {
  json j;
  j["error"] = r.error;
  j["sparsity"] = r.sparsity;
  j["fitness"] = r.fitness;
  j["variant"] = to_string(r.variant);
  j["lambda"] = r.lambda;
  j["kept_weights"] = r.kept_weights;
  j["fine_tuned"] = r.fine_tuned;
  j["diverged"] = r.diverged;
  return j;
}

GenerationObserver progress(const Context& ctx) {
  return [&ctx](const GenerationRecord& r) {
    ctx.log("generation " + std::to_string(r.generation) + ": best " +
            fmt("%.5f", r.best_fitness) + " (E " + fmt("%.4f", r.best_error) +
            ", kept " + fmt("%.4f", r.best_kept_fraction) + ")");
  };
}

void cmd_compress(const Context& ctx) {
  const RunConfig& c = ctx.config;
  GAConfig ga = c.ga;
  ga.seed = c.seed;
  ga.workers = c.workers;
  FitnessConfig fc = c.fitness;
  fc.seed = c.seed;

  if (c.fitness_mode == "surrogate") {
    const NetworkSpec spec = c.checkpoint.empty()
                                 ? lenet_spec()
                                 : load_network(c.checkpoint).spec();
    auto layout = std::make_shared<const MaskLayout>(MaskLayout::from_spec(spec));
    SurrogateFitness evaluator(layout, fc, c.surrogate_seed);
    const EvolutionResult evo = evolve(layout, evaluator, ga, progress(ctx));
    write_evolution(ctx, evo);
    json j;
    j["mode"] = "surrogate";
    j["best"] = report_json(evo.best_report);
    j["best_bits"] = evo.best.to_string();
    j["evaluations"] = evaluator.computed();
    write_text(ctx.out / "compress.json", j.dump(2) + "\n");
    return;
  }

  const TrainedNetwork net = require_network(c.checkpoint, "compress");
  const Datasets data = load_datasets(c.data, c.seed);
  const SplitPlan split = make_split(c, data.train.size());
  ctx.log("evolving " + std::to_string(ga.population) + " individuals for " +
          std::to_string(ga.iterations) + " generations");
  const EcsResult result =
      run_ecs(net, data.train, split, ga, fc, c.final, progress(ctx));
  write_evolution(ctx, result.evolution);
  save_checkpoint(result.compact, ctx.out / "compact.ckpt");

  const double base_error = evaluate_error(net, data.test);
  const double compact_error = evaluate_error(result.compact, data.test);
  const CompressionReport report =
      overall_report(net, result.evolution.best,
                     {1.0 - base_error, 1.0 - compact_error});
  write_text(ctx.out / "report.txt", emit_table(report));
  write_text(ctx.out / "report.jsonl", emit_jsonl(report));
  json j;
  j["mode"] = "network";
  j["best"] = report_json(result.evolution.best_report);
  j["best_bits"] = result.evolution.best.to_string();
  j["counts"] = surviving_counts(result.evolution.best);
  j["r_c"] = report.r_c;
  j["r_s"] = report.r_s;
  j["r_f"] = report.r_f;
  j["baseline_test_error"] = base_error;
  j["compact_test_error"] = compact_error;
  j["final_diverged"] = result.final_diverged;
  write_text(ctx.out / "compress.json", j.dump(2) + "\n");
  ctx.log("compressed r_c " + fmt("%.2f", report.r_c) + ", test accuracy " +
          fmt("%.4f", 1.0 - base_error) + " -> " + fmt("%.4f", 1.0 - compact_error));
}

void cmd_evaluate(const Context& ctx) {
  const RunConfig& c = ctx.config;
  const TrainedNetwork net = require_network(c.checkpoint, "evaluate");
  const Datasets data = load_datasets(c.data, c.seed);
  const double error = evaluate_error(net, data.test);
  json j;
  j["checkpoint"] = c.checkpoint;
  j["samples"] = data.test.size();
  j["error"] = error;
  j["accuracy"] = 1.0 - error;
  write_text(ctx.out / "evaluate.json", j.dump(2) + "\n");
  ctx.log("error " + fmt("%.6f", error));
}

void cmd_report(const Context& ctx) {
  const RunConfig& c = ctx.config;
  const TrainedNetwork net = require_network(c.checkpoint, "report");
  auto layout = std::make_shared<const MaskLayout>(MaskLayout::from_spec(net.spec()));
  if (c.individual.empty()) {
    fail(ErrorCode::invalid_argument, "report: no individual given (--individual)");
  }
  const Individual ind = load_individual_any(c.individual, layout);
  Accuracies acc;
  std::optional<TrainedNetwork> compact;
  const bool need_data = !c.data.dir.empty() || c.data.source == "synthetic";
  if (!c.compact.empty()) {
    compact = load_network(c.compact);
    if (!(compact->spec() == compact_spec(net.spec(), surviving_counts(ind)))) {
      fail(ErrorCode::layout, "compact network does not match the individual");
    }
  }
  if (need_data) {
    const Datasets data = load_datasets(c.data, c.seed);
    acc.before = 1.0 - evaluate_error(net, data.test);
    if (compact) acc.after = 1.0 - evaluate_error(*compact, data.test);
  }
  const CompressionReport report = overall_report(net, ind, acc);
  std::string text = emit_table(report);

  const auto files = export_filters(net, 1, ctx.out / "filters");
  const CompactArchitecture arch = compact_architecture(ind);
  const Tensor& w1 = net.params()[net.spec().conv_layers()[0]].weight;
  text += "conv1 mean pairwise filter distance: all " +
          fmt("%.4f", mean_pairwise_distance(w1)) + ", kept " +
          fmt("%.4f", mean_pairwise_distance(w1, arch.kept_filters[0]));
  if (compact) {
    export_filters(*compact, 1, ctx.out / "filters_compact");
    const Tensor& wc = compact->params()[compact->spec().conv_layers()[0]].weight;
    text += ", kept after fine-tune " + fmt("%.4f", mean_pairwise_distance(wc));
  }
  text += "\n";
  write_text(ctx.out / "report.txt", text);
  write_text(ctx.out / "report.jsonl", emit_jsonl(report));
  ctx.log(text);
  ctx.log("wrote " + std::to_string(files.size()) + " filter images");
}

// Filter-norm individual keeping the `counts` largest-norm filters of every
// maskable layer: per-layer thresholds at the equal-budget point.
Individual norm_mask_with_counts(const TrainedNetwork& net,
                                 const std::vector<int>& counts) {
  auto layout = std::make_shared<const MaskLayout>(MaskLayout::from_spec(net.spec()));
  std::vector<std::uint8_t> bits;
  const auto convs = net.spec().conv_layers();
  for (std::size_t k = 0; k + 1 < convs.size(); ++k) {
    const auto norms = filter_squared_norms(net.params()[convs[k]].weight);
    std::vector<std::size_t> order(norms.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return norms[a] > norms[b];
    });
    std::vector<std::uint8_t> layer(norms.size(), 0);
    for (int n = 0; n < counts[k + 1]; ++n) layer[order[std::size_t(n)]] = 1;
    bits.insert(bits.end(), layer.begin(), layer.end());
  }
  return Individual(layout, std::move(bits));
}

void cmd_baseline(const Context& ctx) {
  const RunConfig& c = ctx.config;
  const TrainedNetwork net = require_network(c.checkpoint, "baseline");
  auto layout = std::make_shared<const MaskLayout>(MaskLayout::from_spec(net.spec()));
  const Datasets data = load_datasets(c.data, c.seed);
  const SplitPlan split = make_split(c, data.train.size());
  std::string text;
  std::string jsonl;
  auto record = [&](json j) { jsonl += j.dump() + "\n"; };

  const auto stats = weight_threshold_stats(net, c.baseline.weight_tau);
  text += "weight threshold tau " + fmt("%g", c.baseline.weight_tau) + ":";
  for (std::size_t i = 0; i < stats.size(); ++i) {
    text += " conv" + std::to_string(i + 1) + " " +
            fmt("%.4f", stats[i].zero_fraction());
    record({{"record", "weight-threshold"}, {"layer", i + 1},
            {"tau", c.baseline.weight_tau}, {"zeros", stats[i].zeros},
            {"total", stats[i].total}});
  }
  text += " zero fraction\n";

  std::optional<Individual> ecs_ind;
  if (!c.individual.empty()) ecs_ind = load_individual_any(c.individual, layout);
  Individual norm_ind = Individual::all_ones(layout);
  if (c.baseline.filter_tau >= 0.0) {
    Rng rng(derive_seed(c.seed, seed_tag::control));
    norm_ind = filter_norm_mask(net, c.baseline.filter_tau, rng);
  } else if (ecs_ind) {
    norm_ind = norm_mask_with_counts(net, surviving_counts(*ecs_ind));
  } else {
    fail(ErrorCode::config,
         "baseline.filter_tau: set a threshold or pass --individual");
  }
  const Individual& target = ecs_ind ? *ecs_ind : norm_ind;
  const std::vector<int> counts = surviving_counts(target);
  int total_filters = 0;
  for (std::size_t i = 1; i < counts.size(); ++i) total_filters += counts[i];

  auto test_acc = [&](const TrainedNetwork& n) {
    return 1.0 - evaluate_error(n, data.test);
  };
  TrainConfig ft = c.final.train;
  ft.seed = derive_seed(c.seed, seed_tag::final_finetune);
  const TrainedNetwork norm_net =
      train(compact_network(net, norm_ind), data.train, ft, split.train);
  const double norm_acc = test_acc(norm_net);
  text += "filter-norm mask counts";
  for (int n : surviving_counts(norm_ind)) text += " " + std::to_string(n);
  text += ", fine-tuned test accuracy " + fmt("%.4f", norm_acc) + "\n";
  record({{"record", "filter-norm"}, {"counts", surviving_counts(norm_ind)},
          {"test_accuracy", norm_acc}});

  if (!c.compact.empty()) {
    const double ecs_acc = test_acc(load_network(c.compact));
    text += "ECS compact network test accuracy " + fmt("%.4f", ecs_acc) + "\n";
    record({{"record", "ecs"}, {"counts", counts}, {"test_accuracy", ecs_acc}});
  }

  const NetworkSpec small = compact_spec(net.spec(), counts);
  for (int s = 0; s < c.baseline.control_seeds; ++s) {
    TrainConfig tc = c.train;
    tc.epochs = c.baseline.control_epochs;
    tc.seed = derive_seed(derive_seed(c.seed, seed_tag::control), std::uint64_t(s));
    const ControlResult scratch =
        scratch_train_control(small, data.train, split.train, split.eval, tc);
    const double scratch_acc = test_acc(scratch.net);
    const ControlResult random = random_architecture_control(
        net.spec(), total_filters, tc.seed, data.train, split.train, split.eval, tc);
    const double random_acc = test_acc(random.net);
    std::string rc;
    for (int n : random.counts) rc += " " + std::to_string(n);
    text += "seed " + std::to_string(s) + ": scratch " + fmt("%.4f", scratch_acc) +
            ", random architecture (" + rc.substr(1) + ") " +
            fmt("%.4f", random_acc) + "\n";
    record({{"record", "scratch-control"}, {"seed", s}, {"counts", counts},
            {"test_accuracy", scratch_acc}});
    record({{"record", "random-architecture-control"}, {"seed", s},
            {"counts", random.counts}, {"test_accuracy", random_acc}});
  }
  write_text(ctx.out / "baseline.txt", text);
  write_text(ctx.out / "baseline.jsonl", jsonl);
  ctx.log(text);
}

}  // namespace

Datasets load_datasets(const DataConfig& config, std::uint64_t seed) {
  Datasets d;
  if (config.source == "synthetic") {
    const int per_class = config.synthetic_per_class;
    const int test_per_class = std::max(1, per_class / 5);
    const LabeledDataset all = synthetic_blobs(
        10, per_class + test_per_class, {28, 28, 1}, derive_seed(seed, seed_tag::split));
    const std::size_t n_test = std::size_t(10 * test_per_class);
    std::vector<std::size_t> train_idx(all.size() - n_test), test_idx(n_test);
    std::iota(train_idx.begin(), train_idx.end(), std::size_t{0});
    std::iota(test_idx.begin(), test_idx.end(), all.size() - n_test);
    d.train = all.subset(train_idx, "synthetic-train");
    d.test = all.subset(test_idx, "synthetic-test");
  } else {
    if (config.dir.empty()) {
      fail(ErrorCode::config, std::string("data.dir: no MNIST directory (set --data or ") +
                                  kDataDirEnv + ")");
    }
    const fs::path dir = config.dir;
    d.train = load_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte");
    d.test = load_idx(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte");
    d.train.name = "mnist-train";
    d.test.name = "mnist-test";
  }
  d.train = head(std::move(d.train), config.train_limit);
  d.test = head(std::move(d.test), config.test_limit);
  return d;
}

SplitPlan make_split(const RunConfig& config, std::size_t train_size) {
  if (config.data.holdout >= train_size) {
    fail(ErrorCode::config, "data.holdout (" + std::to_string(config.data.holdout) +
                                ") must be smaller than the training set (" +
                                std::to_string(train_size) + ")");
  }
  if (config.finetune_subset > train_size - config.data.holdout) {
    fail(ErrorCode::config, "fitness.subset (" +
                                std::to_string(config.finetune_subset) +
                                ") exceeds the " +
                                std::to_string(train_size - config.data.holdout) +
                                " training images outside the holdout");
  }
  return sample_finetune_subset(train_size, config.data.holdout,
                                config.finetune_subset,
                                derive_seed(config.seed, seed_tag::split));
}

void run_command(const std::string& command, const RunConfig& config,
                 const LogSink& log) {
  config.validate();
  using Handler = void (*)(const Context&);
  Handler handler = nullptr;
  if (command == "train") handler = cmd_train;
  else if (command == "compress") handler = cmd_compress;
  else if (command == "evaluate") handler = cmd_evaluate;
  else if (command == "report") handler = cmd_report;
  else if (command == "baseline") handler = cmd_baseline;
  else fail(ErrorCode::invalid_argument, "unknown command '" + command + "'");

  const fs::path out = config.out;
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) fail(ErrorCode::io, "cannot create " + out.string() + ": " + ec.message());
  write_text(out / "config.ini", serialize_config(config));
  handler(Context{config, log, out});
}

}  // namespace ecs
