#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "lossforge/graph.hpp"
#include "lossforge/integrity.hpp"

namespace lossforge::evolve {

using graph::LossGraph;
using integrity::IntegrityConfig;

using Rng = std::mt19937_64;

/// Candidate fitness: best validation accuracy, or nullopt when the
/// surrogate rejected the run (early stop).
using FitnessFn = std::function<std::optional<double>(const LossGraph&)>;

struct Individual {
    LossGraph graph;
    double fitness = 0.0;
    std::uint64_t birth = 0;
};

struct EvolveConfig {
    int initial_size = 1000;
    int population_size = 100;
    int tournament_k = 20;
    int max_mutation_attempts = 2500;
    int max_redo = 7;
    std::uint64_t iterations = 1000;
    std::uint64_t rng_seed = 0;
    IntegrityConfig integrity;
};

struct IterationLog {
    std::uint64_t iteration = 0;
    double best = 0.0;
    double mean = 0.0;
    double median = 0.0;
    bool accepted = false;
    std::string reject_reason;  // empty when accepted
};

struct EvolveState {
    EvolveConfig config;
    std::vector<Individual> population;
    std::vector<graph::Phenotype> pool;  // phenotypes of population members
    std::vector<Individual> archive;     // every evaluated individual
    std::uint64_t birth_counter = 0;
    std::uint64_t iteration = 0;
    Rng rng;
};

struct EvolutionReport {
    std::vector<IterationLog> log;
    std::vector<Individual> archive;
    std::vector<Individual> population;
    std::vector<Individual> top(std::size_t k) const;  // best-k of the archive
};

/// Fresh genotype: uniform ops, uniform connections, root guaranteed at
/// least one hidden argument, sign +1. Integrity is the caller's loop.
LossGraph random_graph(Rng& rng);

/// One mutation per the 70/15/15 branch split; at most one node changes.
LossGraph mutate(const LossGraph& parent, Rng& rng);

/// k distinct members uniformly; highest fitness wins, ties to the
/// smallest birth.
const Individual& tournament_select(const std::vector<Individual>& pop, int k,
                                    Rng& rng);

/// Draws integrity-passing random graphs until initial_size candidates
/// exist, each checked against the accepted prefix, then scores all with
/// the (cheap) fitness function. Failed evaluations score 0.
std::vector<Individual> initialize_population(const EvolveConfig& cfg,
                                              const FitnessFn& fitness,
                                              Rng& rng,
                                              std::uint64_t* birth_counter = nullptr);

/// One aging-GA iteration: tournament, mutate-until-integrity (with the
/// 2500-failure fallback to an unmutated clone), evaluate with up to
/// max_redo retries, insert child and evict the oldest on success.
IterationLog evolve_step(EvolveState& state, const FitnessFn& fitness);

/// Full run: initialize with proxy_fitness, keep the best
/// population_size, then evolve with fitness for cfg.iterations.
EvolutionReport run_evolution(const EvolveConfig& cfg, const FitnessFn& proxy_fitness,
                              const FitnessFn& fitness);

/// Same, but starting from (or resuming) an explicit state. The state is
/// advanced in place; the report covers only the new iterations.
EvolutionReport run_evolution(EvolveState& state, const FitnessFn& fitness);

/// Seeds a warm state from an initial population.
EvolveState make_state(const EvolveConfig& cfg, std::vector<Individual> initial,
                       Rng rng, std::uint64_t birth_counter);

/// Checkpoint round-trip: full rng state, population, archive, counters.
std::string checkpoint_save(const EvolveState& state);
EvolveState checkpoint_load(const std::string& text);

std::string iteration_csv(const std::vector<IterationLog>& log);

}  // namespace lossforge::evolve
