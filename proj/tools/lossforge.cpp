// lossforge: operator CLI over the search library.
//
// Subcommands: evolve, check, phenotype, train, eliminate, compare,
// fidelity. One JSON config file drives a run; the seed may be overridden
// by --seed or the LOSSFORGE_SEED environment variable. Exit codes:
// 0 success/accepted, 1 domain rejection, 2 usage or I/O error.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "lossforge/evolve.hpp"
#include "lossforge/graph.hpp"
#include "lossforge/integrity.hpp"
#include "lossforge/protocol.hpp"
#include "lossforge/surrogate.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace lossforge;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRejected = 1;
constexpr int kExitUsage = 2;

struct CliError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CliError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CliError("cannot write " + path.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

json load_config(const std::string& path) {
    try {
        return json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw CliError(path + ": invalid JSON: " + e.what());
    }
}

// --seed beats LOSSFORGE_SEED beats the config file.
std::uint64_t resolve_seed(const json& cfg, std::optional<std::uint64_t> flag) {
    if (flag) return *flag;
    if (const char* env = std::getenv("LOSSFORGE_SEED")) {
        try {
            return std::stoull(env);
        } catch (...) {
            throw CliError("LOSSFORGE_SEED is not a number");
        }
    }
    return cfg.value("seed", std::uint64_t{0});
}

surrogate::Dataset load_dataset(const json& cfg) {
    if (!cfg.contains("dataset")) throw CliError("config needs a dataset section");
    const json& d = cfg.at("dataset");
    const std::string kind = d.value("kind", "blobs");
    if (kind == "blobs" || kind == "spirals") {
        return surrogate::generate_synthetic(
            kind == "blobs" ? surrogate::SyntheticKind::Blobs
                            : surrogate::SyntheticKind::Spirals,
            d.value("n", 600), d.value("classes", 3), d.value("dim", 2),
            d.value("noise", 0.35), d.value("seed", std::uint64_t{42}));
    }
    if (kind == "csv") return surrogate::load_csv(d.at("path").get<std::string>());
    if (kind == "idx") {
        return surrogate::load_idx(d.at("images").get<std::string>(),
                                   d.at("labels").get<std::string>());
    }
    throw CliError("unknown dataset kind \"" + kind + "\"");
}

surrogate::NetworkSpec network_spec(const json& cfg, const surrogate::Dataset& ds,
                                    std::uint64_t seed) {
    surrogate::NetworkSpec spec;
    spec.input_dim = ds.dim();
    spec.num_classes = ds.num_classes();
    spec.init_seed = seed;
    if (cfg.contains("network")) {
        spec.hidden = cfg["network"].value("hidden", spec.hidden);
    }
    return spec;
}

surrogate::TrainConfig train_config(const json& cfg, std::uint64_t seed) {
    surrogate::TrainConfig tc;
    tc.seed = seed;
    if (!cfg.contains("train")) return tc;
    const json& t = cfg["train"];
    tc.steps = t.value("steps", tc.steps);
    tc.batch_size = t.value("batch", tc.batch_size);
    tc.peak_lr = t.value("peak_lr", tc.peak_lr);
    tc.warmup_steps = t.value("warmup", tc.warmup_steps);
    tc.momentum = t.value("momentum", tc.momentum);
    tc.adam = t.value("adam", tc.adam);
    tc.eval_interval = t.value("eval_interval", tc.eval_interval);
    tc.proxy_threshold = t.value("proxy_threshold", tc.proxy_threshold);
    tc.proxy_steps = t.value("proxy_steps", tc.proxy_steps);
    tc.main_threshold = t.value("main_threshold", tc.main_threshold);
    tc.main_check_step = t.value("main_check_step", tc.main_check_step);
    return tc;
}

// A loss argument is either a built-in reference name or a genotype file.
graph::LossGraph load_loss(const std::string& name_or_path) {
    const auto names = protocol::reference_names();
    if (std::find(names.begin(), names.end(), name_or_path) != names.end()) {
        return protocol::reference_loss(name_or_path).graph;
    }
    return graph::parse(read_file(name_or_path));
}

protocol::EliminationPlan elimination_plan(const json& cfg) {
    if (!cfg.contains("elimination")) return protocol::EliminationPlan::desk();
    const json& e = cfg["elimination"];
    const std::string kind = e.value("plan", "desk");
    if (kind == "desk") return protocol::EliminationPlan::desk();
    if (kind == "paper") {
        return protocol::EliminationPlan::paper(e.value("base_steps", 16000));
    }
    if (kind == "custom") {
        protocol::EliminationPlan plan;
        plan.candidates_in = e.at("candidates_in").get<int>();
        for (const auto& round : e.at("rounds")) {
            plan.rounds.push_back({round.at(0).get<int>(), round.at(1).get<int>()});
        }
        plan.validate();
        return plan;
    }
    throw CliError("unknown elimination plan \"" + kind + "\"");
}

std::string json_population(const std::vector<evolve::Individual>& pop) {
    json arr = json::array();
    for (const auto& ind : pop) {
        arr.push_back({{"graph", json::parse(graph::serialize(ind.graph))},
                       {"fitness", ind.fitness},
                       {"birth", ind.birth},
                       {"expression", graph::to_expression(ind.graph)}});
    }
    return arr.dump(2);
}

int cmd_evolve(const json& cfg, std::uint64_t seed, const fs::path& out,
               const std::string& resume_path) {
    const auto ds = load_dataset(cfg);
    const auto tc = train_config(cfg, seed);
    const auto spec = network_spec(cfg, ds, seed);
    const auto fitness = surrogate::make_fitness(ds, spec, tc);

    evolve::EvolveConfig ec;
    ec.rng_seed = seed;
    int checkpoint_interval = 25;
    if (cfg.contains("evolve")) {
        const json& e = cfg["evolve"];
        ec.initial_size = e.value("initial_size", ec.initial_size);
        ec.population_size = e.value("population_size", ec.population_size);
        ec.tournament_k = e.value("tournament_k", ec.tournament_k);
        ec.iterations = e.value("iterations", ec.iterations);
        ec.max_redo = e.value("max_redo", ec.max_redo);
        ec.max_mutation_attempts =
            e.value("max_mutation_attempts", ec.max_mutation_attempts);
        checkpoint_interval = e.value("checkpoint_interval", checkpoint_interval);
    }

    evolve::EvolveState state;
    if (!resume_path.empty()) {
        state = evolve::checkpoint_load(read_file(resume_path));
    } else {
        evolve::Rng rng(ec.rng_seed);
        std::uint64_t birth = 0;
        auto initial = evolve::initialize_population(ec, fitness, rng, &birth);
        std::vector<evolve::Individual> archive = initial;
        std::sort(initial.begin(), initial.end(),
                  [](const evolve::Individual& a, const evolve::Individual& b) {
                      if (a.fitness != b.fitness) return a.fitness > b.fitness;
                      return a.birth < b.birth;
                  });
        initial.resize(ec.population_size);
        state = evolve::make_state(ec, std::move(initial), std::move(rng), birth);
        state.archive = std::move(archive);
    }

    std::vector<evolve::IterationLog> log;
    while (state.iteration < state.config.iterations) {
        log.push_back(evolve::evolve_step(state, fitness));
        if (checkpoint_interval > 0 &&
            state.iteration % static_cast<std::uint64_t>(checkpoint_interval) == 0) {
            write_file(out / "checkpoint.json", evolve::checkpoint_save(state));
        }
    }

    write_file(out / "iterations.csv", evolve::iteration_csv(log));
    write_file(out / "checkpoint.json", evolve::checkpoint_save(state));
    write_file(out / "archive.json", json_population(state.archive));
    write_file(out / "population.json", json_population(state.population));
    std::cout << "evolve: " << log.size() << " iterations, archive "
              << state.archive.size() << ", outputs in " << out.string() << "\n";
    return kExitOk;
}

int cmd_check(const std::string& genotype) {
    graph::LossGraph g;
    try {
        g = load_loss(genotype);
    } catch (const graph::ParseError& e) {
        std::cerr << "parse error: " << e.what() << "\n";
        return kExitUsage;
    }
    const auto verdict = integrity::integrity_check(g, {});
    if (!verdict.accepted) {
        std::cout << "rejected: " << integrity::reason_name(verdict.reason) << "\n";
        return kExitRejected;
    }
    g.sign = verdict.oriented_sign;
    std::cout << "accepted: " << graph::to_expression(g) << "\n";
    return kExitOk;
}

int cmd_phenotype(const std::string& genotype, const fs::path& out_csv) {
    graph::LossGraph g;
    try {
        g = load_loss(genotype);
    } catch (const graph::ParseError& e) {
        std::cerr << "parse error: " << e.what() << "\n";
        return kExitUsage;
    }
    const auto verdict = integrity::integrity_check(g, {});
    if (!verdict.accepted) {
        std::cout << "rejected: " << integrity::reason_name(verdict.reason) << "\n";
        return kExitRejected;
    }
    g.sign = verdict.oriented_sign;
    const auto ph = graph::phenotype(g);
    write_file(out_csv, graph::phenotype_csv(ph));
    fs::path norm = out_csv;
    norm.replace_extension(".normalized.csv");
    write_file(norm, graph::phenotype_csv(graph::normalize_phenotype(ph)));
    std::cout << "phenotype: " << ph.grid.size() << " rows -> " << out_csv.string()
              << " (+ normalized)\n";
    return kExitOk;
}

int cmd_train(const json& cfg, std::uint64_t seed, const fs::path& out) {
    const auto ds = load_dataset(cfg);
    const auto tc = train_config(cfg, seed);
    const auto spec = network_spec(cfg, ds, seed);
    const auto g = load_loss(cfg.value("loss", std::string("ce")));
    const auto run = surrogate::train(spec, ds, g, tc);
    write_file(out / "curves.csv", surrogate::curves_csv(run));
    std::cout << "train: best val acc " << run.best_val_acc << ", final train acc "
              << run.final_train_acc
              << (run.stop_reason == surrogate::StopReason::EarlyStopMain
                      ? " (early stop)"
                      : "")
              << "\n";
    return kExitOk;
}

std::vector<std::string> loss_list(const json& cfg, const char* section) {
    if (!cfg.contains(section) || !cfg[section].contains("losses")) {
        throw CliError(std::string("config needs ") + section + ".losses");
    }
    return cfg[section]["losses"].get<std::vector<std::string>>();
}

int cmd_eliminate(const json& cfg, std::uint64_t seed, const fs::path& out) {
    const auto ds = load_dataset(cfg);
    const auto spec = network_spec(cfg, ds, seed);
    auto tc = train_config(cfg, seed);
    auto plan = elimination_plan(cfg);
    const auto names = loss_list(cfg, "elimination");
    std::vector<graph::LossGraph> candidates;
    for (const auto& name : names) candidates.push_back(load_loss(name));
    plan.candidates_in = static_cast<int>(candidates.size());
    plan.validate();

    const protocol::Trainer trainer = [&](const graph::LossGraph& g, int steps) {
        surrogate::TrainConfig round = tc;
        round.steps = steps;
        round.warmup_steps = std::min(tc.warmup_steps, steps / 4);
        round.main_check_step = steps + 1;  // no mid-round early stop
        return surrogate::train(spec, ds, g, round).best_val_acc;
    };
    const auto ladder = protocol::eliminate(candidates, plan, trainer);
    for (std::size_t r = 0; r < ladder.survivors.size(); ++r) {
        protocol::EliminationLadder one;
        one.survivors = {ladder.survivors[r]};
        write_file(out / ("survivors_round" + std::to_string(r + 1) + ".json"),
                   protocol::survivors_json(candidates, one));
    }
    write_file(out / "ladder.json", protocol::survivors_json(candidates, ladder));
    std::cout << "eliminate: " << ladder.survivors.size() << " rounds, final "
              << ladder.survivors.back().size() << " survivors\n";
    return kExitOk;
}

int cmd_compare(const json& cfg, std::uint64_t seed, const fs::path& out) {
    const auto ds = load_dataset(cfg);
    const auto spec = network_spec(cfg, ds, seed);
    const auto tc = train_config(cfg, seed);
    const json& c = cfg.value("compare", json::object());
    const int runs = c.value("runs", 3);
    const int baseline = c.value("baseline", 0);
    const bool one_sided = c.value("one_sided", false);
    std::vector<protocol::NamedLoss> losses;
    for (const auto& name : loss_list(cfg, "compare")) {
        losses.push_back({name, load_loss(name)});
    }
    const protocol::RunTrainer trainer = [&](const graph::LossGraph& g, int run) {
        surrogate::TrainConfig rc = tc;
        rc.seed = seed + static_cast<std::uint64_t>(run) + 1;
        surrogate::NetworkSpec rs = spec;
        rs.init_seed = rc.seed;
        return surrogate::train(rs, ds, g, rc).best_val_acc;
    };
    const auto report = protocol::compare(losses, runs, trainer, baseline, one_sided);
    write_file(out / "compare.csv", report.csv());
    std::cout << "compare: " << report.rows.size() << " losses x " << runs
              << " runs -> " << (out / "compare.csv").string() << "\n";
    return kExitOk;
}

int cmd_fidelity(const json& cfg, std::uint64_t seed, const fs::path& out) {
    const auto ds = load_dataset(cfg);
    const auto spec = network_spec(cfg, ds, seed);
    const auto tc = train_config(cfg, seed);
    const json& f = cfg.value("fidelity", json::object());
    const std::vector<int> cheap_steps =
        f.value("cheap_steps", std::vector<int>{100, 200});
    const int expensive_steps = f.value("expensive_steps", 400);
    std::vector<graph::LossGraph> losses;
    for (const auto& name : loss_list(cfg, "fidelity")) {
        losses.push_back(load_loss(name));
    }
    auto evaluator = [&](int steps) {
        return protocol::Evaluator([&, steps](const graph::LossGraph& g) {
            surrogate::TrainConfig rc = tc;
            rc.steps = steps;
            rc.warmup_steps = std::min(tc.warmup_steps, steps / 4);
            rc.main_check_step = steps + 1;
            return surrogate::train(spec, ds, g, rc).best_val_acc;
        });
    };
    std::vector<protocol::Evaluator> cheap;
    for (int s : cheap_steps) cheap.push_back(evaluator(s));
    const auto taus = protocol::fidelity_study(losses, cheap, evaluator(expensive_steps));
    std::string csv = "cheap_steps,kendall_tau\n";
    for (std::size_t i = 0; i < taus.size(); ++i) {
        char buf[64];
        if (taus[i]) {
            std::snprintf(buf, sizeof buf, "%d,%.17g\n", cheap_steps[i], *taus[i]);
        } else {
            std::snprintf(buf, sizeof buf, "%d,\n", cheap_steps[i]);
        }
        csv += buf;
    }
    write_file(out / "fidelity.csv", csv);
    std::cout << "fidelity: " << taus.size() << " cheap configs -> "
              << (out / "fidelity.csv").string() << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"loss-function search over computational-graph genotypes"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "out", resume_path, genotype, out_csv;
    std::optional<std::uint64_t> seed_flag;
    int threads = 1;
    app.add_option("--config", config_path, "JSON run configuration")
        ->envname("LOSSFORGE_CONFIG");
    app.add_option("--seed", seed_flag, "override the config seed");
    app.add_option("--out", out_dir, "output directory");
    app.add_option("--threads", threads, "worker threads (reserved; runs single-threaded)");

    auto* evolve_cmd = app.add_subcommand("evolve", "run regularized evolution");
    evolve_cmd->add_option("--resume", resume_path, "checkpoint file to resume from");
    auto* check_cmd = app.add_subcommand("check", "integrity-check a genotype");
    check_cmd->add_option("genotype", genotype, "genotype file or reference name")
        ->required();
    auto* pheno_cmd = app.add_subcommand("phenotype", "export a phenotype CSV");
    pheno_cmd->add_option("genotype", genotype, "genotype file or reference name")
        ->required();
    pheno_cmd->add_option("out_csv", out_csv, "output CSV path")->required();
    auto* train_cmd = app.add_subcommand("train", "train one loss on the dataset");
    auto* elim_cmd = app.add_subcommand("eliminate", "run the elimination ladder");
    auto* compare_cmd = app.add_subcommand("compare", "compare losses with Welch tests");
    auto* fidelity_cmd = app.add_subcommand("fidelity", "rank-correlation fidelity study");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (check_cmd->parsed()) return cmd_check(genotype);
        if (pheno_cmd->parsed()) return cmd_phenotype(genotype, out_csv);

        if (config_path.empty()) throw CliError("--config is required");
        const json cfg = load_config(config_path);
        const std::uint64_t seed = resolve_seed(cfg, seed_flag);
        const fs::path out = app.count("--out") != 0
                                 ? fs::path(out_dir)
                                 : fs::path(cfg.value("out", out_dir));

        if (evolve_cmd->parsed()) return cmd_evolve(cfg, seed, out, resume_path);
        if (train_cmd->parsed()) return cmd_train(cfg, seed, out);
        if (elim_cmd->parsed()) return cmd_eliminate(cfg, seed, out);
        if (compare_cmd->parsed()) return cmd_compare(cfg, seed, out);
        if (fidelity_cmd->parsed()) return cmd_fidelity(cfg, seed, out);
        throw CliError("no subcommand");
    } catch (const graph::ParseError& e) {
        std::cerr << "parse error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const surrogate::LoadError& e) {
        std::cerr << "load error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
}
