#include "lossforge/evolve.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace lossforge::evolve {

using graph::Node;
using graph::NodeRef;
using nlohmann::json;
using ops::OpKind;

namespace {

constexpr int kTargets = 8;  // 4 inputs + 4 hidden

NodeRef target_from_index(int i) {
    switch (i) {
        case 0: return NodeRef::y();
        case 1: return NodeRef::yhat();
        case 2: return NodeRef::one();
        case 3: return NodeRef::neg_one();
        default: return NodeRef::hidden(i - 4);
    }
}

int target_index(NodeRef r) {
    if (r == NodeRef::y()) return 0;
    if (r == NodeRef::yhat()) return 1;
    if (r == NodeRef::one()) return 2;
    if (r == NodeRef::neg_one()) return 3;
    return 4 + r.hidden_index();
}

NodeRef random_target(Rng& rng) {
    return target_from_index(std::uniform_int_distribution<int>(0, kTargets - 1)(rng));
}

// Uniform over targets excluding `avoid`.
NodeRef random_other_target(Rng& rng, NodeRef avoid) {
    int i = std::uniform_int_distribution<int>(0, kTargets - 2)(rng);
    if (i >= target_index(avoid)) ++i;
    return target_from_index(i);
}

OpKind random_op(Rng& rng) {
    return ops::catalog()[std::uniform_int_distribution<int>(0, ops::kNumOps - 1)(rng)];
}

OpKind random_op_of_arity(Rng& rng, int arity) {
    const int lo = arity == 1 ? 0 : ops::kNumUnary;
    const int hi = arity == 1 ? ops::kNumUnary - 1 : ops::kNumOps - 1;
    return ops::catalog()[std::uniform_int_distribution<int>(lo, hi)(rng)];
}

// Uniform over same-arity ops excluding `current`.
OpKind random_different_op(Rng& rng, OpKind current) {
    OpKind k;
    do {
        k = random_op_of_arity(rng, ops::arity(current));
    } while (k == current);
    return k;
}

bool root_ok(const Node& root) {
    return root.arg1.is_hidden() || (root.arity() == 2 && root.arg2.is_hidden());
}

}  // namespace

LossGraph random_graph(Rng& rng) {
    LossGraph g;
    g.sign = 1;
    g.hidden.reserve(LossGraph::kSearchHidden);
    for (int i = 0; i < LossGraph::kSearchHidden; ++i) {
        const OpKind op = random_op(rng);
        const NodeRef a1 = random_target(rng);
        const NodeRef a2 = ops::arity(op) == 2 ? random_target(rng) : a1;
        g.hidden.push_back(Node{op, a1, a2});
    }
    do {
        const OpKind op = random_op(rng);
        const NodeRef a1 = random_target(rng);
        const NodeRef a2 = ops::arity(op) == 2 ? random_target(rng) : a1;
        g.root = Node{op, a1, a2};
    } while (!root_ok(g.root));
    return g;
}

LossGraph mutate(const LossGraph& parent, Rng& rng) {
    LossGraph child = parent;
    const int n = static_cast<int>(child.hidden.size());
    const int pick = std::uniform_int_distribution<int>(0, n)(rng);
    const bool is_root = pick == n;
    Node& node = is_root ? child.root : child.hidden[pick];

    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double u = unit(rng);
    if (u < 0.70) {
        // operation replaced by a different one of the same arity
        node.op = random_different_op(rng, node.op);
    } else if (u < 0.85) {
        // arity swap
        if (node.arity() == 1) {
            node.op = random_op_of_arity(rng, 2);
            node.arg2 = random_target(rng);
        } else {
            node.op = random_op_of_arity(rng, 1);
            if (is_root) {
                // keep a hidden argument at the root
                NodeRef keep;
                do {
                    keep = unit(rng) < 0.5 ? node.arg1 : node.arg2;
                } while (!keep.is_hidden());
                node.arg1 = keep;
            } else {
                node.arg1 = unit(rng) < 0.5 ? node.arg1 : node.arg2;
            }
            node.arg2 = node.arg1;
        }
    } else {
        // connection change
        if (node.arity() == 1) {
            do {
                node.arg1 = random_other_target(rng, node.arg1);
            } while (is_root && !root_ok(node));
            node.arg2 = node.arg1;
        } else if (unit(rng) < 0.20) {
            std::swap(node.arg1, node.arg2);
        } else {
            const bool first = unit(rng) < 0.5;
            do {
                (first ? node.arg1 : node.arg2) = random_target(rng);
            } while (is_root && !root_ok(node));
        }
    }
    return child;
}

const Individual& tournament_select(const std::vector<Individual>& pop, int k, Rng& rng) {
    const int n = static_cast<int>(pop.size());
    if (k < 1 || k > n) throw std::invalid_argument("tournament_select: bad k");
    // partial Fisher-Yates over an index array, without replacement
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    const Individual* best = nullptr;
    for (int i = 0; i < k; ++i) {
        const int j = std::uniform_int_distribution<int>(i, n - 1)(rng);
        std::swap(idx[i], idx[j]);
        const Individual& cand = pop[idx[i]];
        if (!best || cand.fitness > best->fitness ||
            (cand.fitness == best->fitness && cand.birth < best->birth)) {
            best = &cand;
        }
    }
    return *best;
}

std::vector<Individual> initialize_population(const EvolveConfig& cfg,
                                              const FitnessFn& fitness, Rng& rng,
                                              std::uint64_t* birth_counter) {
    std::vector<Individual> out;
    std::vector<graph::Phenotype> pool;
    out.reserve(cfg.initial_size);
    pool.reserve(cfg.initial_size);
    std::uint64_t local = 0;
    std::uint64_t& birth = birth_counter ? *birth_counter : local;
    while (static_cast<int>(out.size()) < cfg.initial_size) {
        LossGraph g = random_graph(rng);
        const auto verdict = integrity::integrity_check(g, pool, cfg.integrity);
        if (!verdict.accepted) continue;
        g.sign = verdict.oriented_sign;
        pool.push_back(graph::phenotype(g));
        out.push_back(Individual{std::move(g), 0.0, birth++});
    }
    for (Individual& ind : out) {
        ind.fitness = fitness(ind.graph).value_or(0.0);
    }
    return out;
}

EvolveState make_state(const EvolveConfig& cfg, std::vector<Individual> initial,
                       Rng rng, std::uint64_t birth_counter) {
    EvolveState st;
    st.config = cfg;
    st.population = std::move(initial);
    st.rng = std::move(rng);
    st.birth_counter = birth_counter;
    st.pool.reserve(st.population.size());
    for (const Individual& ind : st.population) {
        st.pool.push_back(graph::phenotype(ind.graph));
    }
    return st;
}

namespace {

void fill_stats(const std::vector<Individual>& pop, IterationLog& log) {
    std::vector<double> f;
    f.reserve(pop.size());
    for (const auto& ind : pop) f.push_back(ind.fitness);
    std::sort(f.begin(), f.end());
    log.best = f.back();
    log.mean = std::accumulate(f.begin(), f.end(), 0.0) / f.size();
    const std::size_t m = f.size() / 2;
    log.median = f.size() % 2 ? f[m] : 0.5 * (f[m - 1] + f[m]);
}

}  // namespace

IterationLog evolve_step(EvolveState& state, const FitnessFn& fitness) {
    IterationLog log;
    log.iteration = ++state.iteration;
    const EvolveConfig& cfg = state.config;
    const Individual winner = tournament_select(state.population, cfg.tournament_k, state.rng);

    int redo = cfg.max_redo;
    while (redo > 0) {
        LossGraph child;
        bool mutated = false;
        for (int attempt = 0; attempt < cfg.max_mutation_attempts; ++attempt) {
            LossGraph cand = mutate(winner.graph, state.rng);
            const auto verdict = integrity::integrity_check(cand, state.pool, cfg.integrity);
            if (verdict.accepted) {
                cand.sign = verdict.oriented_sign;
                child = std::move(cand);
                mutated = true;
                break;
            }
        }
        if (!mutated) {
            // 2500 failures in a row: the mutation does not take place
            child = winner.graph;
        }
        const auto fit = fitness(child);
        if (!fit) {
            --redo;
            continue;
        }
        // success: insert, evict the oldest
        Individual ind{std::move(child), *fit, state.birth_counter++};
        std::size_t oldest = 0;
        for (std::size_t i = 1; i < state.population.size(); ++i) {
            if (state.population[i].birth < state.population[oldest].birth) oldest = i;
        }
        state.pool[oldest] = graph::phenotype(ind.graph);
        state.archive.push_back(ind);
        state.population[oldest] = std::move(ind);
        log.accepted = true;
        break;
    }
    if (!log.accepted) log.reject_reason = "fitness_failed";
    fill_stats(state.population, log);
    return log;
}

EvolutionReport run_evolution(EvolveState& state, const FitnessFn& fitness) {
    EvolutionReport report;
    while (state.iteration < state.config.iterations) {
        report.log.push_back(evolve_step(state, fitness));
    }
    report.archive = state.archive;
    report.population = state.population;
    return report;
}

EvolutionReport run_evolution(const EvolveConfig& cfg, const FitnessFn& proxy_fitness,
                              const FitnessFn& fitness) {
    Rng rng(cfg.rng_seed);
    std::uint64_t birth = 0;
    std::vector<Individual> initial = initialize_population(cfg, proxy_fitness, rng, &birth);

    // best population_size, ties broken by smaller birth
    std::vector<Individual> sorted = initial;
    std::sort(sorted.begin(), sorted.end(), [](const Individual& a, const Individual& b) {
        if (a.fitness != b.fitness) return a.fitness > b.fitness;
        return a.birth < b.birth;
    });
    sorted.resize(cfg.population_size);

    EvolveState state = make_state(cfg, std::move(sorted), std::move(rng), birth);
    state.archive = std::move(initial);
    EvolutionReport report = run_evolution(state, fitness);
    report.archive = state.archive;
    return report;
}

std::vector<Individual> EvolutionReport::top(std::size_t k) const {
    std::vector<Individual> sorted = archive;
    std::sort(sorted.begin(), sorted.end(), [](const Individual& a, const Individual& b) {
        if (a.fitness != b.fitness) return a.fitness > b.fitness;
        return a.birth < b.birth;
    });
    if (sorted.size() > k) sorted.resize(k);
    return sorted;
}

namespace {

json individual_to_json(const Individual& ind) {
    json j;
    j["graph"] = json::parse(graph::serialize(ind.graph));
    j["fitness"] = ind.fitness;
    j["birth"] = ind.birth;
    return j;
}

Individual individual_from_json(const json& j) {
    Individual ind;
    ind.graph = graph::parse(j.at("graph").dump());
    ind.fitness = j.at("fitness").get<double>();
    ind.birth = j.at("birth").get<std::uint64_t>();
    return ind;
}

}  // namespace

std::string checkpoint_save(const EvolveState& state) {
    json j;
    const EvolveConfig& c = state.config;
    j["config"] = {{"initial_size", c.initial_size},
                   {"population_size", c.population_size},
                   {"tournament_k", c.tournament_k},
                   {"max_mutation_attempts", c.max_mutation_attempts},
                   {"max_redo", c.max_redo},
                   {"iterations", c.iterations},
                   {"rng_seed", c.rng_seed}};
    std::ostringstream rng_text;
    rng_text << state.rng;
    j["rng"] = rng_text.str();
    j["birth_counter"] = state.birth_counter;
    j["iteration"] = state.iteration;
    json pop = json::array();
    for (const auto& ind : state.population) pop.push_back(individual_to_json(ind));
    j["population"] = std::move(pop);
    json arch = json::array();
    for (const auto& ind : state.archive) arch.push_back(individual_to_json(ind));
    j["archive"] = std::move(arch);
    return j.dump();
}

EvolveState checkpoint_load(const std::string& text) {
    const json j = json::parse(text);
    EvolveConfig cfg;
    const json& c = j.at("config");
    cfg.initial_size = c.at("initial_size").get<int>();
    cfg.population_size = c.at("population_size").get<int>();
    cfg.tournament_k = c.at("tournament_k").get<int>();
    cfg.max_mutation_attempts = c.at("max_mutation_attempts").get<int>();
    cfg.max_redo = c.at("max_redo").get<int>();
    cfg.iterations = c.at("iterations").get<std::uint64_t>();
    cfg.rng_seed = c.at("rng_seed").get<std::uint64_t>();

    std::vector<Individual> pop;
    for (const json& e : j.at("population")) pop.push_back(individual_from_json(e));
    Rng rng;
    std::istringstream rng_text(j.at("rng").get<std::string>());
    rng_text >> rng;

    EvolveState st = make_state(cfg, std::move(pop), std::move(rng),
                                j.at("birth_counter").get<std::uint64_t>());
    st.iteration = j.at("iteration").get<std::uint64_t>();
    for (const json& e : j.at("archive")) st.archive.push_back(individual_from_json(e));
    return st;
}

std::string iteration_csv(const std::vector<IterationLog>& log) {
    std::string out = "iteration,best,mean,median,accepted,reject_reason\n";
    char buf[160];
    for (const auto& e : log) {
        std::snprintf(buf, sizeof buf, "%llu,%.17g,%.17g,%.17g,%d,%s\n",
                      static_cast<unsigned long long>(e.iteration), e.best, e.mean,
                      e.median, e.accepted ? 1 : 0, e.reject_reason.c_str());
        out += buf;
    }
    return out;
}

}  // namespace lossforge::evolve
