#include "ecs/evolution.hpp"

#include <cmath>
#include <json.hpp>
#include <sstream>

namespace ecs {

void GAConfig::validate() const {
  if (population < 2) fail(ErrorCode::config, "population must be >= 2");
  if (iterations < 1) fail(ErrorCode::config, "iterations must be >= 1");
  for (double s : {s1, s2, s3}) {
    if (!(s >= 0.0 && s <= 1.0)) {
      fail(ErrorCode::config, "operator probabilities must lie in [0,1]");
    }
  }
  if (std::abs(s1 + s2 + s3 - 1.0) > 1e-9) {
    fail(ErrorCode::config, "s1 + s2 + s3 must equal 1");
  }
  if (!(init_density > 0.0 && init_density <= 1.0)) {
    fail(ErrorCode::config, "init_density must lie in (0,1]");
  }
  if (workers < 1) fail(ErrorCode::config, "workers must be >= 1");
}

std::vector<double> selection_probabilities(std::span<const double> fitness) {
  if (fitness.empty()) fail(ErrorCode::invalid_argument, "no fitness values");
  double total = 0.0;
  for (double f : fitness) {
    if (!(f > 0.0) || !std::isfinite(f)) {
      fail(ErrorCode::invalid_argument, "fitness values must be positive");
    }
    total += f;
  }
  std::vector<double> p(fitness.size());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = fitness[i] / total;
  return p;
}

std::size_t roulette_select(std::span<const double> probabilities, Rng& rng) {
  if (probabilities.empty()) {
    fail(ErrorCode::invalid_argument, "no probabilities");
  }
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  double acc = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < probabilities.size(); ++i) {
    if (probabilities[i] <= 0.0) continue;
    acc += probabilities[i];
    last_positive = i;
    if (u < acc) return i;
  }
  // Rounding left u above the accumulated sum.
  return last_positive;
}

namespace {

std::pair<std::size_t, std::size_t> draw_segment(std::size_t n, Rng& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, n);
  std::size_t a = pick(rng);
  std::size_t b = pick(rng);
  if (a > b) std::swap(a, b);
  return {a, b};
}

void check_segment(std::size_t begin, std::size_t end, std::size_t n) {
  if (begin > end || end > n) {
    fail(ErrorCode::invalid_argument, "segment [" + std::to_string(begin) +
                                          ", " + std::to_string(end) +
                                          ") outside the bit string");
  }
}

}  // namespace

std::pair<Individual, Individual> crossover_at(const Individual& a,
                                               const Individual& b,
                                               std::size_t cut1,
                                               std::size_t cut2, Rng& rng) {
  if (!(a.layout() == b.layout())) {
    fail(ErrorCode::layout, "crossover parents have different layouts");
  }
  check_segment(cut1, cut2, a.bits().size());
  Individual x = a;
  Individual y = b;
  for (std::size_t i = cut1; i < cut2; ++i) {
    std::swap(x.mutable_bits()[i], y.mutable_bits()[i]);
  }
  repair(x, rng);
  repair(y, rng);
  return {std::move(x), std::move(y)};
}

std::pair<Individual, Individual> crossover(const Individual& a,
                                            const Individual& b, Rng& rng) {
  const auto [lo, hi] = draw_segment(a.bits().size(), rng);
  return crossover_at(a, b, lo, hi, rng);
}

Individual mutate_fragment(const Individual& parent, std::size_t begin,
                           std::size_t end, Rng& rng) {
  check_segment(begin, end, parent.bits().size());
  Individual child = parent;
  for (std::size_t i = begin; i < end; ++i) child.mutable_bits()[i] ^= 1;
  repair(child, rng);
  return child;
}

Individual mutate(const Individual& parent, Rng& rng) {
  const auto [lo, hi] = draw_segment(parent.bits().size(), rng);
  return mutate_fragment(parent, lo, hi, rng);
}

bool better(const FitnessReport& ra, const std::string& ka,
            const FitnessReport& rb, const std::string& kb) {
  if (ra.fitness != rb.fitness) return ra.fitness > rb.fitness;
  if (ra.kept_weights != rb.kept_weights) return ra.kept_weights < rb.kept_weights;
  return ka < kb;
}

std::string EvolutionLog::to_jsonl() const {
  std::string out;
  for (const GenerationRecord& r : generations) {
    nlohmann::ordered_json j;
    j["generation"] = r.generation;
    j["population"] = r.population;
    j["valid"] = r.valid;
    j["best_fitness"] = r.best_fitness;
    j["mean_fitness"] = r.mean_fitness;
    j["min_fitness"] = r.min_fitness;
    j["best_error"] = r.best_error;
    j["best_sparsity"] = r.best_sparsity;
    j["best_kept_fraction"] = r.best_kept_fraction;
    j["ops"] = {{"elite", r.op_elite},
                {"random", r.op_random},
                {"selection", r.op_selection},
                {"crossover", r.op_crossover},
                {"mutation", r.op_mutation}};
    j["evaluations"] = r.evaluations;
    j["best_bits"] = r.best_bits;
    out += j.dump() + "\n";
  }
  return out;
}

EvolutionLog EvolutionLog::from_jsonl(const std::string& text) {
  EvolutionLog log;
  std::istringstream in(text);
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      GenerationRecord r;
      r.generation = j.at("generation").get<int>();
      r.population = j.at("population").get<int>();
      r.valid = j.at("valid").get<int>();
      r.best_fitness = j.at("best_fitness").get<double>();
      r.mean_fitness = j.at("mean_fitness").get<double>();
      r.min_fitness = j.at("min_fitness").get<double>();
      r.best_error = j.at("best_error").get<double>();
      r.best_sparsity = j.at("best_sparsity").get<double>();
      r.best_kept_fraction = j.at("best_kept_fraction").get<double>();
      const auto& ops = j.at("ops");
      r.op_elite = ops.at("elite").get<int>();
      r.op_random = ops.at("random").get<int>();
      r.op_selection = ops.at("selection").get<int>();
      r.op_crossover = ops.at("crossover").get<int>();
      r.op_mutation = ops.at("mutation").get<int>();
      r.evaluations = j.at("evaluations").get<std::size_t>();
      r.best_bits = j.at("best_bits").get<std::string>();
      log.generations.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::format,
           "log line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return log;
}

bool EvolutionLog::best_non_decreasing() const {
  for (std::size_t i = 1; i < generations.size(); ++i) {
    if (generations[i].best_fitness < generations[i - 1].best_fitness) {
      return false;
    }
  }
  return true;
}

namespace {

// Positive weight for roulette even when an individual scored the worst
// case (diverged network with nothing pruned gives exactly 0).
constexpr double kMinSelectionWeight = 1e-9;

struct Scored {
  std::vector<FitnessReport> reports;
  std::vector<std::string> keys;
  std::size_t best = 0;
};

Scored score(FitnessEvaluator& evaluator, const std::vector<Individual>& pop,
             int workers) {
  evaluate_many(evaluator, pop, workers);
  Scored s;
  for (const Individual& ind : pop) {
    s.keys.push_back(ind.key());
    s.reports.push_back(evaluator.evaluate(ind));
  }
  for (std::size_t i = 1; i < pop.size(); ++i) {
    if (better(s.reports[i], s.keys[i], s.reports[s.best], s.keys[s.best])) {
      s.best = i;
    }
  }
  return s;
}

}  // namespace

EvolutionResult evolve(const LayoutPtr& layout, FitnessEvaluator& evaluator,
                       const GAConfig& config,
                       const GenerationObserver& observer) {
  config.validate();
  Rng rng(derive_seed(config.seed, seed_tag::evolution));
  const std::size_t k = std::size_t(config.population);
  const double total_weights = double(layout->total_weights());

  std::vector<Individual> pop;
  pop.reserve(k);
  for (std::size_t j = 0; j < k; ++j) {
    pop.push_back(random_individual(layout, config.init_density, rng));
  }
  GenerationRecord ops;
  ops.op_random = int(k);

  EvolutionLog log;
  for (int t = 1;; ++t) {
    const Scored s = score(evaluator, pop, config.workers);

    GenerationRecord r = ops;
    r.generation = t;
    r.population = int(pop.size());
    r.min_fitness = s.reports[0].fitness;
    double sum = 0.0;
    for (std::size_t j = 0; j < pop.size(); ++j) {
      sum += s.reports[j].fitness;
      r.min_fitness = std::min(r.min_fitness, s.reports[j].fitness);
      if (pop[j].satisfies_floor()) ++r.valid;
    }
    const FitnessReport& best = s.reports[s.best];
    r.mean_fitness = sum / double(pop.size());
    r.best_fitness = best.fitness;
    r.best_error = best.error;
    r.best_sparsity = best.sparsity;
    r.best_kept_fraction = double(best.kept_weights) / total_weights;
    r.best_bits = pop[s.best].to_string();
    r.evaluations = evaluator.computed();
    log.generations.push_back(r);
    if (observer) observer(r);

    if (t >= config.iterations) {
      return {pop[s.best], best, std::move(log), std::move(pop)};
    }

    std::vector<double> weights(pop.size());
    for (std::size_t j = 0; j < pop.size(); ++j) {
      weights[j] = std::max(s.reports[j].fitness, kMinSelectionWeight);
    }
    const std::vector<double> probs = selection_probabilities(weights);

    // All random draws for the next generation happen here, in slot order.
    std::vector<Individual> next{pop[s.best]};
    struct Pair {
      std::size_t slot;
      Individual a, b;
    };
    std::vector<Pair> pairs;
    ops = GenerationRecord{};
    ops.op_elite = 1;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t slot = 1; slot < k; ++slot) {
      const double draw = u(rng);
      if (draw < config.s1) {
        next.push_back(pop[roulette_select(probs, rng)]);
        ++ops.op_selection;
      } else if (draw < config.s1 + config.s2) {
        const std::size_t p1 = roulette_select(probs, rng);
        const std::size_t p2 = roulette_select(probs, rng);
        auto [a, b] = crossover(pop[p1], pop[p2], rng);
        next.push_back(a);  // placeholder until both offspring are scored
        pairs.push_back({slot, std::move(a), std::move(b)});
        ++ops.op_crossover;
      } else {
        next.push_back(mutate(pop[roulette_select(probs, rng)], rng));
        ++ops.op_mutation;
      }
    }

    if (!pairs.empty()) {
      std::vector<Individual> offspring;
      offspring.reserve(2 * pairs.size());
      for (const Pair& p : pairs) {
        offspring.push_back(p.a);
        offspring.push_back(p.b);
      }
      evaluate_many(evaluator, offspring, config.workers);
      for (Pair& p : pairs) {
        const FitnessReport ra = evaluator.evaluate(p.a);
        const FitnessReport rb = evaluator.evaluate(p.b);
        next[p.slot] = better(rb, p.b.key(), ra, p.a.key()) ? std::move(p.b)
                                                            : std::move(p.a);
      }
    }
    pop = std::move(next);
  }
}

EcsResult run_ecs(const TrainedNetwork& net, const LabeledDataset& data,
                  const SplitPlan& split, const GAConfig& ga,
                  const FitnessConfig& fitness, const FinalTuneConfig& final,
                  const GenerationObserver& observer) {
  auto layout = std::make_shared<const MaskLayout>(MaskLayout::from_spec(net.spec()));
  NetworkFitness evaluator(net, data, split.finetune, split.eval, fitness);
  EcsResult result{evolve(layout, evaluator, ga, observer), {}, false};
  TrainedNetwork compact = compact_network(net, result.evolution.best);
  TrainConfig tc = final.train;
  tc.seed = derive_seed(ga.seed, seed_tag::final_finetune);
  if (tc.epochs > 0) {
    try {
      compact = train(compact, data, tc, split.train);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::numeric) throw;
      // Keep the evolved weights; the caller sees the flag.
      compact = compact_network(net, result.evolution.best);
      result.final_diverged = true;
    }
  }
  result.compact = std::move(compact);
  return result;
}

}  // namespace ecs
