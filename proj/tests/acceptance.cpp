// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero when any fails. Criteria 5 and 9 need MNIST in $ECS_DATA_DIR.
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "ecs/analysis.hpp"
#include "ecs/checkpoint.hpp"
#include "ecs/config.hpp"
#include "ecs/evolution.hpp"
#include "ecs/gradcheck.hpp"
#include "ecs/pipeline.hpp"
#include "test_util.hpp"

using namespace ecs;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), {});
}

fs::path work_root() {
  const char* env = std::getenv("ECS_ACCEPT_OUT");
  fs::path root = env && *env ? fs::path(env) : fs::temp_directory_path() / "ecs_acceptance";
  fs::create_directories(root);
  return root;
}

// Logs gathered for the elitism check.
std::vector<std::pair<std::string, EvolutionLog>> g_logs;

Outcome ratios() {
  const std::vector<int> counts = {1, 9, 17, 84, 10};
  const auto r = overall_report(lenet_spec(), counts);
  const bool ok = std::abs(r.r_c - 15.52) <= 0.01 && std::abs(r.r_s - 5.76) <= 0.01 &&
                  r.r_f >= 2.35 && r.r_f <= 2.45;
  return {ok, "r_c " + fmt("%.4f", r.r_c) + ", r_s " + fmt("%.4f", r.r_s) + ", r_f " +
                  fmt("%.4f", r.r_f) +
                  " (feature maps counted as conv plus pooled outputs)"};
}

Outcome operators() {
  Rng rng(0);
  auto l30 = std::make_shared<const MaskLayout>(
      MaskLayout(1, {{3, 3, 1, 10}, {3, 3, 10, 10}, {3, 3, 10, 6}, {1, 1, 6, 2}}));
  const Individual a = Individual::parse(l30, "1011101010|0101110010|010100");
  const Individual b = Individual::parse(l30, "1010001011|1010101011|011010");
  const auto [x, y] = crossover_at(a, b, 10, 20, rng);
  auto l27 = std::make_shared<const MaskLayout>(
      MaskLayout(1, {{3, 3, 1, 7}, {3, 3, 7, 13}, {3, 3, 13, 7}, {1, 1, 7, 2}}));
  const Individual p = Individual::parse(l27, "0110100|1001010100001|1010100");
  const Individual m = mutate_fragment(p, 7, 20, rng);
  const bool ok = x.to_string() == "1011101010|1010101011|010100" &&
                  y.to_string() == "1010001011|0101110010|011010" &&
                  m.to_string() == "0110100|0110101011110|1010100";
  return {ok, "crossover " + x.to_string() + " / " + y.to_string() + ", mutation " +
                  m.to_string()};
}

Outcome brute_force() {
  auto layout = std::make_shared<const MaskLayout>(
      MaskLayout::from_spec(fixtures::tiny_spec()));
  const std::size_t n = layout->bit_count();
  int hits = 0;
  std::string detail = std::to_string(n) + " bits; seeds hit:";
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    FitnessConfig fc;
    SurrogateFitness f(layout, fc, seed);
    double best = -1e300;
    for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
      std::vector<std::uint8_t> bits(n);
      for (std::size_t i = 0; i < n; ++i) bits[i] = (mask >> i) & 1;
      Individual ind(layout, bits);
      if (ind.satisfies_floor()) best = std::max(best, f.evaluate(ind).fitness);
    }
    GAConfig ga;
    ga.population = 20;
    ga.iterations = 30;
    ga.seed = seed;
    const EvolutionResult r = evolve(layout, f, ga);
    g_logs.emplace_back("surrogate seed " + std::to_string(seed), r.log);
    const bool hit = r.best_report.fitness == best;
    hits += hit;
    detail += hit ? " " + std::to_string(seed) : "";
  }
  return {hits >= 4, detail + " (" + std::to_string(hits) + "/5)"};
}

Outcome gradients() {
  const NetworkSpec spec = fixtures::two_conv_spec();
  const TrainedNetwork net = TrainedNetwork::initialize(spec, 21);
  const LabeledDataset data = synthetic_blobs(spec.class_count, 3, spec.input, 5, 0.3);
  GradientCheckOptions o;
  o.samples = 200;
  const auto r = gradient_check(net, data.images, data.labels, o);
  return {r.checked >= 100 && r.max_relative_discrepancy < 1e-3,
          std::to_string(r.checked) + " parameters, max relative error " +
              fmt("%.3g", r.max_relative_discrepancy) + ", " +
              std::to_string(r.skipped_nonsmooth) + " kink samples skipped"};
}

struct DeskRun {
  bool ok = false;
  std::string error;
  double base_acc = 0, compact_acc = 0, r_c = 0;
  fs::path out;
};

DeskRun g_desk;

RunConfig mnist_config(const fs::path& out, const std::string& dir) {
  RunConfig c = resolve_config({}, {{"run.preset", "desk"},
                                    {"data.dir", dir},
                                    {"fitness.lambda", "0.9"},
                                    {"run.out", out.string()}});
  return c;
}

Outcome desk_end_to_end() {
  const char* dir = std::getenv(kDataDirEnv);
  if (!dir || !*dir || !fs::exists(fs::path(dir) / "train-images-idx3-ubyte")) {
    g_desk.error = "MNIST not found ($ECS_DATA_DIR)";
    return {false, g_desk.error};
  }
  const fs::path out = work_root() / "desk";
  g_desk.out = out;
  try {
    auto log = [](const std::string& line) { std::fprintf(stderr, "  %s\n", line.c_str()); };
    RunConfig c = mnist_config(out, dir);
    run_command("train", c, log);
    c.checkpoint = (out / "model.ckpt").string();
    run_command("compress", c, log);
    const json j = json::parse(slurp(out / "compress.json"));
    g_desk.base_acc = 1.0 - j.at("baseline_test_error").get<double>();
    g_desk.compact_acc = 1.0 - j.at("compact_test_error").get<double>();
    g_desk.r_c = j.at("r_c").get<double>();
    g_logs.emplace_back("desk MNIST", EvolutionLog::from_jsonl(slurp(out / "evolution.jsonl")));
    g_desk.ok = true;
  } catch (const std::exception& e) {
    g_desk.error = e.what();
    return {false, g_desk.error};
  }
  const bool ok = g_desk.base_acc >= 0.985 && g_desk.r_c >= 4.0 &&
                  g_desk.compact_acc >= g_desk.base_acc - 0.005;
  return {ok, "baseline accuracy " + fmt("%.4f", g_desk.base_acc) + ", compact " +
                  fmt("%.4f", g_desk.compact_acc) + ", r_c " + fmt("%.2f", g_desk.r_c)};
}

Outcome elitism() {
  if (g_logs.empty()) return {false, "no logs recorded"};
  std::string bad;
  for (const auto& [name, log] : g_logs) {
    bool ok = log.best_non_decreasing() && !log.generations.empty();
    for (const auto& g : log.generations) {
      ok = ok && g.population == log.generations.front().population &&
           g.valid == g.population;
    }
    if (!ok) bad += " " + name;
  }
  std::string detail = std::to_string(g_logs.size()) + " logs checked";
  if (!g_desk.ok) detail += "; MNIST run log missing";
  if (!bad.empty()) detail += "; violations in" + bad;
  return {bad.empty() && g_desk.ok, detail};
}

Outcome variants() {
  const Individual ind = fixtures::reference_mask();
  // Discarded filters per layer: 11, 33, 416, 0 of 20, 50, 500, 10.
  const double M = 25 * 1 * 20 + 25 * 20 * 50 + 16 * 50 * 500 + 500 * 10;
  const double v2 = (25.0 * 1 * 11 + 25.0 * 20 * 33 + 16.0 * 50 * 416) / M;
  const double v3l = (25.0 * 11 * 33 + 16.0 * 33 * 416) / M;
  const double kept = 25.0 * 1 * 9 + 25.0 * 9 * 17 + 16.0 * 17 * 84 + 84.0 * 10;
  const double v3c = (M - kept) / M;
  const double s2 = sparsity_term(ind, FitnessVariant::v2_sized);
  const double s3l = sparsity_term(ind, FitnessVariant::v3_coupled_literal);
  const double s3c = sparsity_term(ind, FitnessVariant::v3_coupled_corrected);
  const bool ok = std::abs(s2 - 0.81202) < 1e-5 && std::abs(s2 - v2) < 1e-12 &&
                  std::abs(s3l - 0.53130) < 1e-5 && std::abs(s3l - v3l) < 1e-12 &&
                  std::abs(s3c - 0.93556) < 1e-5 && std::abs(s3c - v3c) < 1e-12;
  return {ok, "v2 " + fmt("%.6f", s2) + ", v3-literal " + fmt("%.6f", s3l) +
                  ", v3-corrected " + fmt("%.6f", s3c)};
}

bool same_outputs(const fs::path& a, const fs::path& b, std::string& why) {
  for (const char* f : {"best.individual", "evolution.jsonl"}) {
    if (!fs::exists(a / f) || slurp(a / f) != slurp(b / f)) {
      why += std::string(" ") + f + " differs (" + a.filename().string() + ")";
      return false;
    }
  }
  return true;
}

Outcome determinism() {
  const fs::path root = work_root() / "determinism";
  std::string why;
  bool ok = true;
  try {
    for (int w : {1, 4}) {
      RunConfig c = resolve_config({}, {{"run.preset", "desk"},
                                        {"fitness.mode", "surrogate"},
                                        {"run.seed", "11"},
                                        {"run.workers", std::to_string(w)},
                                        {"run.out", (root / ("surrogate_w" + std::to_string(w))).string()}});
      run_command("compress", c);
    }
    ok = same_outputs(root / "surrogate_w1", root / "surrogate_w4", why) && ok;

    // Network fitness with fine-tuning on synthetic data.
    const ConfigEntries common = {{"data.source", "synthetic"}, {"data.holdout", "100"},
                                  {"fitness.subset", "200"},   {"ga.population", "8"},
                                  {"ga.iterations", "3"},      {"train.epochs", "1"},
                                  {"final.epochs", "1"},       {"run.seed", "5"}};
    ConfigEntries train = common;
    train.emplace_back("run.out", (root / "net_train").string());
    run_command("train", resolve_config({}, train));
    for (int w : {1, 4}) {
      ConfigEntries e = common;
      e.emplace_back("run.checkpoint", (root / "net_train" / "model.ckpt").string());
      e.emplace_back("run.workers", std::to_string(w));
      e.emplace_back("run.out", (root / ("net_w" + std::to_string(w))).string());
      run_command("compress", resolve_config({}, e));
    }
    ok = same_outputs(root / "net_w1", root / "net_w4", why) && ok;
    ok = ok && slurp(root / "net_w1" / "compact.ckpt") == slurp(root / "net_w4" / "compact.ckpt");
  } catch (const std::exception& e) {
    return {false, e.what()};
  }
  return {ok, ok ? "surrogate desk preset and synthetic network runs byte-identical "
                   "for 1 and 4 workers"
                 : "mismatch:" + why};
}

Outcome controls() {
  if (!g_desk.ok) return {false, "needs the MNIST run: " + g_desk.error};
  const fs::path out = g_desk.out / "baseline";
  try {
    RunConfig c = mnist_config(out, std::getenv(kDataDirEnv));
    c.checkpoint = (g_desk.out / "model.ckpt").string();
    c.individual = (g_desk.out / "best.individual").string();
    c.compact = (g_desk.out / "compact.ckpt").string();
    run_command("baseline", c,
                [](const std::string& l) { std::fprintf(stderr, "  %s\n", l.c_str()); });
  } catch (const std::exception& e) {
    return {false, e.what()};
  }
  double ecs_acc = -1;
  std::vector<double> scratch, random;
  std::istringstream lines(slurp(out / "baseline.jsonl"));
  for (std::string line; std::getline(lines, line);) {
    const json j = json::parse(line);
    const std::string rec = j.at("record");
    if (rec == "ecs") ecs_acc = j.at("test_accuracy");
    if (rec == "scratch-control") scratch.push_back(j.at("test_accuracy"));
    if (rec == "random-architecture-control") random.push_back(j.at("test_accuracy"));
  }
  int scratch_wins = 0, random_wins = 0;
  for (double a : scratch) scratch_wins += ecs_acc - a >= 0;
  for (double a : random) random_wins += ecs_acc - a >= 0;
  const int seeds = int(scratch.size());
  std::string detail = "ECS " + fmt("%.4f", ecs_acc) + "; scratch";
  for (double a : scratch) detail += " " + fmt("%.4f", a);
  detail += "; random";
  for (double a : random) detail += " " + fmt("%.4f", a);
  detail += " (ECS ahead in " + std::to_string(scratch_wins) + "/" + std::to_string(seeds) +
            " and " + std::to_string(random_wins) + "/" + std::to_string(seeds) + ")";
  return {seeds == 3 && 2 * scratch_wins > seeds && 2 * random_wins > seeds, detail};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"1 ratio oracles", ratios},
      {"2 bit-string operators", operators},
      {"3 brute-force GA optimum", brute_force},
      {"4 gradient check", gradients},
      {"5 desk-scale MNIST end-to-end", desk_end_to_end},
      {"6 elitism and invariants", elitism},
      {"7 fitness-variant arithmetic", variants},
      {"8 worker-count determinism", determinism},
      {"9 controls underperform ECS", controls},
  };
  int failed = 0;
  for (const auto& [name, run] : criteria) {
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s criterion %s: %s\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}
