#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "lossforge/evolve.hpp"
#include "lossforge/graph.hpp"
#include "lossforge/surrogate.hpp"

namespace lossforge::protocol {

using graph::LossGraph;

/// Tau-b (tie-corrected) by exact pair enumeration. Returns nullopt when
/// either list is fully tied.
std::optional<double> kendall_tau(const std::vector<double>& a,
                                  const std::vector<double>& b);

struct WelchResult {
    double t = 0.0;
    double df = 0.0;
    double p = 1.0;  // two-sided by default
};

/// Welch's t statistic with Welch-Satterthwaite degrees of freedom;
/// p via the regularized incomplete beta function. Returns nullopt when
/// both samples have zero variance.
std::optional<WelchResult> welch_t(const std::vector<double>& a,
                                   const std::vector<double>& b,
                                   bool one_sided = false);

/// Regularized incomplete beta I_x(a, b), continued-fraction evaluation,
/// absolute tolerance ~1e-10.
double incomplete_beta(double a, double b, double x);

/// Two-sided p for a t statistic with df degrees of freedom.
double student_t_two_sided_p(double t, double df);

/// Built-in reference losses. The graph reproduces the published formula;
/// smoothing_alpha, when nonzero, remaps targets y' = y(1-a) + a/K before
/// the graph is applied.
struct ReferenceLoss {
    std::string name;
    LossGraph graph;
    double smoothing_alpha = 0.0;
    int num_classes = 2;  // K in the alpha/K smoothing term

    double loss(std::span<const double> y, std::span<const double> yhat) const;
    std::vector<double> gradient(std::span<const double> y,
                                 std::span<const double> yhat) const;
};

/// Names: ce, ce_ls010 (alpha = 0.10), ce_ls3e5 (alpha = 0.00003),
/// neuroloss1..3, bessel, hm1..hm7. Throws on unknown names.
ReferenceLoss reference_loss(const std::string& name);
std::vector<std::string> reference_names();

struct EliminationRound {
    int survivor_count;
    int training_steps;
};

struct EliminationPlan {
    std::vector<EliminationRound> rounds;
    int candidates_in = 16;

    void validate() const;  // counts strictly decreasing, steps increasing
    static EliminationPlan desk();   // 16 -> 8 -> 4 -> 2
    static EliminationPlan paper(int base_steps = 16000);  // 150/50/25/10
};

/// Candidate trainer: (graph, training_steps, run_index) -> score.
using Trainer = std::function<double(const LossGraph&, int steps)>;

struct EliminationLadder {
    // survivors[r] holds the indices (into the input list) surviving
    // round r, ranked best-first.
    std::vector<std::vector<int>> survivors;
};

/// Progressive elimination: each round retrains every surviving candidate
/// from scratch for the round's budget and keeps the top survivor_count.
EliminationLadder eliminate(const std::vector<LossGraph>& candidates,
                            const EliminationPlan& plan, const Trainer& trainer);

struct ComparisonRow {
    std::string name;
    double mean = 0.0;
    double stddev = 0.0;
    int runs = 0;
    std::optional<double> p_vs_baseline;
};

struct ComparisonReport {
    std::vector<ComparisonRow> rows;
    int baseline_index = 0;
    std::string csv() const;
};

struct NamedLoss {
    std::string name;
    LossGraph graph;
};

/// Per-run trainer: (graph, run_index) -> score; runs use distinct
/// derived seeds supplied by the caller through run_index.
using RunTrainer = std::function<double(const LossGraph&, int run_index)>;

ComparisonReport compare(const std::vector<NamedLoss>& losses, int runs,
                         const RunTrainer& trainer, int baseline_index = 0,
                         bool one_sided = false);

/// Scores one candidate under one training configuration.
using Evaluator = std::function<double(const LossGraph&)>;

/// Kendall tau between each cheap configuration's ranking and the
/// expensive configuration's ranking over the same losses.
std::vector<std::optional<double>> fidelity_study(
    const std::vector<LossGraph>& losses, const std::vector<Evaluator>& cheap,
    const Evaluator& expensive);

std::string survivors_json(const std::vector<LossGraph>& candidates,
                           const EliminationLadder& ladder);

}  // namespace lossforge::protocol
