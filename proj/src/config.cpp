#include "ecs/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

namespace ecs {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            const char* want) {
  fail(ErrorCode::config, key + ": expected " + want + ", got '" + value + "'");
}

template <class T>
T parse_integer(const std::string& key, const std::string& value) {
  T v{};
  const auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || p != value.data() + value.size()) {
    bad_value(key, value, "an integer");
  }
  return v;
}

double parse_real(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) bad_value(key, value, "a number");
    return v;
  } catch (const std::logic_error&) {
    bad_value(key, value, "a number");
  }
}

std::string real_text(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

struct Key {
  std::string name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define ECS_INT_KEY(NAME, FIELD, TYPE)                                       \
  Key {                                                                      \
    NAME,                                                                    \
        [](RunConfig& c, const std::string& v) {                             \
          c.FIELD = parse_integer<TYPE>(NAME, v);                            \
        },                                                                   \
        [](const RunConfig& c) { return std::to_string(c.FIELD); }           \
  }
#define ECS_REAL_KEY(NAME, FIELD)                                                \
  Key {                                                                          \
    NAME, [](RunConfig& c, const std::string& v) { c.FIELD = parse_real(NAME, v); }, \
        [](const RunConfig& c) { return real_text(c.FIELD); }                    \
  }
#define ECS_TEXT_KEY(NAME, FIELD)                                       \
  Key {                                                                 \
    NAME, [](RunConfig& c, const std::string& v) { c.FIELD = v; },      \
        [](const RunConfig& c) { return c.FIELD; }                      \
  }

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      ECS_TEXT_KEY("data.source", data.source),
      ECS_TEXT_KEY("data.dir", data.dir),
      ECS_INT_KEY("data.holdout", data.holdout, std::size_t),
      ECS_INT_KEY("data.train_limit", data.train_limit, std::size_t),
      ECS_INT_KEY("data.test_limit", data.test_limit, std::size_t),
      ECS_INT_KEY("data.synthetic_per_class", data.synthetic_per_class, int),
      ECS_INT_KEY("train.epochs", train.epochs, int),
      ECS_INT_KEY("train.batch_size", train.batch_size, int),
      ECS_REAL_KEY("train.learning_rate", train.learning_rate),
      ECS_REAL_KEY("train.momentum", train.momentum),
      ECS_REAL_KEY("train.weight_decay", train.weight_decay),
      ECS_INT_KEY("ga.population", ga.population, int),
      ECS_INT_KEY("ga.iterations", ga.iterations, int),
      ECS_REAL_KEY("ga.s1", ga.s1),
      ECS_REAL_KEY("ga.s2", ga.s2),
      ECS_REAL_KEY("ga.s3", ga.s3),
      ECS_REAL_KEY("ga.init_density", ga.init_density),
      ECS_REAL_KEY("fitness.lambda", fitness.lambda),
      Key{"fitness.variant",
          [](RunConfig& c, const std::string& v) {
            try {
              c.fitness.variant = fitness_variant_from_string(v);
            } catch (const Error&) {
              bad_value("fitness.variant", v,
                        "v1-uniform, v2-sized, v3-coupled-literal or "
                        "v3-coupled-corrected");
            }
          },
          [](const RunConfig& c) {
            return std::string(to_string(c.fitness.variant));
          }},
      ECS_TEXT_KEY("fitness.mode", fitness_mode),
      ECS_INT_KEY("fitness.surrogate_seed", surrogate_seed, std::uint64_t),
      ECS_INT_KEY("fitness.subset", finetune_subset, std::size_t),
      ECS_INT_KEY("fitness.batch_size", fitness.finetune.batch_size, int),
      ECS_INT_KEY("fitness.steps", fitness.finetune_steps, std::size_t),
      ECS_REAL_KEY("fitness.learning_rate", fitness.finetune.learning_rate),
      ECS_REAL_KEY("fitness.momentum", fitness.finetune.momentum),
      ECS_REAL_KEY("fitness.weight_decay", fitness.finetune.weight_decay),
      ECS_INT_KEY("final.epochs", final.train.epochs, int),
      ECS_INT_KEY("final.batch_size", final.train.batch_size, int),
      ECS_REAL_KEY("final.learning_rate", final.train.learning_rate),
      ECS_REAL_KEY("final.momentum", final.train.momentum),
      ECS_REAL_KEY("final.weight_decay", final.train.weight_decay),
      ECS_REAL_KEY("baseline.weight_tau", baseline.weight_tau),
      ECS_REAL_KEY("baseline.filter_tau", baseline.filter_tau),
      ECS_INT_KEY("baseline.control_epochs", baseline.control_epochs, int),
      ECS_INT_KEY("baseline.control_seeds", baseline.control_seeds, int),
      ECS_TEXT_KEY("run.preset", preset),
      ECS_INT_KEY("run.seed", seed, std::uint64_t),
      ECS_INT_KEY("run.workers", workers, int),
      ECS_TEXT_KEY("run.out", out),
      ECS_TEXT_KEY("run.checkpoint", checkpoint),
      ECS_TEXT_KEY("run.individual", individual),
      ECS_TEXT_KEY("run.compact", compact),
  };
  return table;
}

#undef ECS_INT_KEY
#undef ECS_REAL_KEY
#undef ECS_TEXT_KEY

const Key& find_key(const std::string& name) {
  for (const Key& k : keys()) {
    if (k.name == name) return k;
  }
  fail(ErrorCode::config, "unknown config key '" + name + "'");
}

RunConfig defaults() {
  RunConfig c;
  if (const char* dir = std::getenv(kDataDirEnv)) c.data.dir = dir;
  // One pass over the subset at a tenth of the training rate.
  c.fitness.finetune.learning_rate = c.train.learning_rate / 10.0;
  c.fitness.finetune_steps =
      one_pass_steps(c.finetune_subset, c.fitness.finetune.batch_size);
  return c;
}

}  // namespace

void apply_preset(RunConfig& config, const std::string& name) {
  if (name == "full") {
    config.ga.population = 1000;
    config.ga.iterations = 100;
    config.finetune_subset = 10000;
  } else if (name == "desk") {
    config.ga.population = 50;
    config.ga.iterations = 20;
    config.finetune_subset = 2000;
  } else {
    fail(ErrorCode::config, "run.preset: unknown preset '" + name +
                                "' (full or desk)");
  }
  config.preset = name;
  config.fitness.finetune_steps =
      one_pass_steps(config.finetune_subset, config.fitness.finetune.batch_size);
}

void RunConfig::validate() const {
  auto need = [](bool ok, const std::string& msg) {
    if (!ok) fail(ErrorCode::config, msg);
  };
  need(data.source == "mnist" || data.source == "synthetic",
       "data.source must be mnist or synthetic");
  need(data.synthetic_per_class >= 1, "data.synthetic_per_class must be >= 1");
  need(train.epochs >= 0, "train.epochs must be >= 0");
  need(train.batch_size >= 1, "train.batch_size must be >= 1");
  need(train.learning_rate > 0, "train.learning_rate must be > 0");
  need(ga.population >= 2, "ga.population must be >= 2");
  need(ga.iterations >= 1, "ga.iterations must be >= 1");
  for (auto [name, v] : {std::pair{"ga.s1", ga.s1}, std::pair{"ga.s2", ga.s2},
                         std::pair{"ga.s3", ga.s3}}) {
    need(v >= 0.0 && v <= 1.0, std::string(name) + " must lie in [0,1]");
  }
  need(std::abs(ga.s1 + ga.s2 + ga.s3 - 1.0) <= 1e-9,
       "ga.s1 + ga.s2 + ga.s3 must equal 1");
  need(ga.init_density > 0.0 && ga.init_density <= 1.0,
       "ga.init_density must lie in (0,1]");
  need(fitness.lambda >= 0.0, "fitness.lambda must be >= 0");
  need(fitness_mode == "network" || fitness_mode == "surrogate",
       "fitness.mode must be network or surrogate");
  need(fitness.finetune.batch_size >= 1, "fitness.batch_size must be >= 1");
  need(fitness.finetune.learning_rate > 0, "fitness.learning_rate must be > 0");
  need(final.train.epochs >= 0, "final.epochs must be >= 0");
  need(final.train.batch_size >= 1, "final.batch_size must be >= 1");
  need(final.train.learning_rate > 0, "final.learning_rate must be > 0");
  need(baseline.control_epochs >= 0, "baseline.control_epochs must be >= 0");
  need(baseline.control_seeds >= 1, "baseline.control_seeds must be >= 1");
  need(workers >= 1, "run.workers must be >= 1");
  need(!out.empty(), "run.out must not be empty");
}

ConfigEntries parse_config_text(const std::string& text) {
  ConfigEntries entries;
  std::istringstream in(text);
  std::string section;
  std::size_t line_no = 0;
  for (std::string raw; std::getline(in, raw);) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    const std::string where = "line " + std::to_string(line_no);
    if (line.front() == '[') {
      if (line.back() != ']') fail(ErrorCode::config, where + ": bad section header");
      section = trim(line.substr(1, line.size() - 2));
      bool known = false;
      for (const Key& k : keys()) known |= k.name.rfind(section + ".", 0) == 0;
      if (!known) fail(ErrorCode::config, where + ": unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail(ErrorCode::config, where + ": expected key = value");
    if (section.empty()) fail(ErrorCode::config, where + ": key outside a section");
    const std::string key = section + "." + trim(line.substr(0, eq));
    find_key(key);
    entries.emplace_back(key, trim(line.substr(eq + 1)));
  }
  return entries;
}

ConfigEntries parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io, "cannot open config " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

void set_config_value(RunConfig& config, const std::string& key,
                      const std::string& value) {
  if (key == "run.preset") {
    apply_preset(config, value);
    return;
  }
  find_key(key).set(config, value);
  // Changing the subset or batch re-derives the one-pass step count unless
  // steps were set explicitly afterwards.
  if (key == "fitness.subset" || key == "fitness.batch_size") {
    config.fitness.finetune_steps = one_pass_steps(
        config.finetune_subset, config.fitness.finetune.batch_size);
  }
  if (key == "train.learning_rate") {
    config.fitness.finetune.learning_rate = config.train.learning_rate / 10.0;
  }
}

std::string get_config_value(const RunConfig& config, const std::string& key) {
  return find_key(key).get(config);
}

RunConfig resolve_config(const ConfigEntries& file,
                         const ConfigEntries& overrides) {
  RunConfig c = defaults();
  std::string preset;
  for (const auto& [k, v] : file) if (k == "run.preset") preset = v;
  for (const auto& [k, v] : overrides) if (k == "run.preset") preset = v;
  if (!preset.empty()) apply_preset(c, preset);
  for (const ConfigEntries* layer : {&file, &overrides}) {
    for (const auto& [k, v] : *layer) {
      if (k == "run.preset") continue;
      set_config_value(c, k, v);
    }
  }
  c.validate();
  return c;
}

std::string serialize_config(const RunConfig& config) {
  std::string out;
  std::string section;
  // Derived keys come after the keys they derive from in the table, so the
  // snapshot resolves back to the same values.
  for (const Key& k : keys()) {
    const std::string s = k.name.substr(0, k.name.find('.'));
    if (s != section) {
      if (!section.empty()) out += "\n";
      out += "[" + s + "]\n";
      section = s;
    }
    out += k.name.substr(s.size() + 1) + " = " + k.get(config) + "\n";
  }
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> names;
  for (const Key& k : keys()) names.push_back(k.name);
  return names;
}

}  // namespace ecs
