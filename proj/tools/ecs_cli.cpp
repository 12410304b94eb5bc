// Command-line front end; talks to the library only through ecs.h.
#include <CLI11.hpp>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "ecs/ecs.h"

namespace {

struct Options {
  std::string config_file;
  std::optional<std::string> seed, lambda, population, iterations, preset,
      workers, out, data, checkpoint, individual, compact, mode;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config_file, "config file ([section] key = value)");
  cmd->add_option("--seed", o.seed, "master seed");
  cmd->add_option("--lambda", o.lambda, "fitness trade-off lambda");
  cmd->add_option("--population", o.population, "population size K");
  cmd->add_option("--iterations", o.iterations, "generations T");
  cmd->add_option("--preset", o.preset, "full or desk");
  cmd->add_option("--workers", o.workers, "concurrent fitness evaluations");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--data", o.data, "MNIST directory (default $ECS_DATA_DIR)");
  cmd->add_option("--checkpoint", o.checkpoint, "network checkpoint");
  cmd->add_option("--individual", o.individual, "individual file");
  cmd->add_option("--compact", o.compact, "compact network checkpoint");
  cmd->add_option("--fitness-mode", o.mode, "network or surrogate");
  cmd->add_option("--set", o.sets, "override section.key=value")->take_all();
}

int report_failure(ecs_status st) {
  std::fprintf(stderr, "error: %s: %s\n", ecs_status_string(st), ecs_last_error());
  return int(st);
}

void print_line(const char* line, void*) {
  std::fprintf(stderr, "%s\n", line);
}

int run(const std::string& command, const Options& o) {
  ecs_config* cfg = nullptr;
  ecs_status st = ecs_config_create(&cfg);
  if (st != ECS_OK) return report_failure(st);
  auto set = [&](const char* key, const std::optional<std::string>& v) {
    if (st == ECS_OK && v) st = ecs_config_set(cfg, key, v->c_str());
  };
  if (!o.config_file.empty()) st = ecs_config_load_file(cfg, o.config_file.c_str());
  set("run.preset", o.preset);
  set("run.seed", o.seed);
  set("fitness.lambda", o.lambda);
  set("ga.population", o.population);
  set("ga.iterations", o.iterations);
  set("run.workers", o.workers);
  set("run.out", o.out);
  set("data.dir", o.data);
  set("run.checkpoint", o.checkpoint);
  set("run.individual", o.individual);
  set("run.compact", o.compact);
  set("fitness.mode", o.mode);
  for (const std::string& kv : o.sets) {
    if (st != ECS_OK) break;
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      std::fprintf(stderr, "error: --set expects section.key=value, got '%s'\n",
                   kv.c_str());
      ecs_config_free(cfg);
      return int(ECS_ERR_CONFIG);
    }
    st = ecs_config_set(cfg, kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str());
  }
  if (st == ECS_OK) st = ecs_run(cfg, command.c_str(), print_line, nullptr);
  ecs_config_free(cfg);
  return st == ECS_OK ? 0 : report_failure(st);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Evolutionary filter pruning for convolutional networks"};
  app.set_version_flag("--version", std::string(ecs_version()));
  app.require_subcommand(1);
  Options opts;
  const std::pair<const char*, const char*> commands[] = {
      {"train", "train the baseline LeNet and write model.ckpt"},
      {"compress", "evolve a filter mask and write the compact network"},
      {"evaluate", "test error of a checkpoint"},
      {"report", "compression ratios, tables and filter images"},
      {"baseline", "filter-norm / threshold baselines and controls"},
  };
  for (const auto& [name, help] : commands) add_common(app.add_subcommand(name, help), opts);
  CLI11_PARSE(app, argc, argv);
  return run(app.get_subcommands().front()->get_name(), opts);
}
