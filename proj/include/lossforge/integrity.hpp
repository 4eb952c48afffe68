#pragma once

#include <optional>
#include <string_view>
#include <vector>

#include "lossforge/graph.hpp"

namespace lossforge::integrity {

using graph::LossGraph;
using graph::Phenotype;

enum class PhenotypeTag {
    MonotoneDecreasing,
    MonotoneIncreasing,
    ParabolicMin,
    ParabolicMax,
    Multimodal,
    Nonfinite,
    DegenerateConstant,
};

struct PhenotypeClass {
    PhenotypeTag tag;
    std::optional<double> optimum_p;  // present for parabolic tags
};

enum class RejectReason {
    Ok,
    Cycle,
    MissingInput,
    Multimodal,
    Nonfinite,
    OptimumNearHalf,
    TooSimilar,
};

std::string_view reason_name(RejectReason r);

struct IntegrityVerdict {
    bool accepted = false;
    RejectReason reason = RejectReason::Ok;
    int oriented_sign = 1;
};

struct IntegrityConfig {
    double classify_tolerance = 1e-6;   // on normalized values
    double similarity_threshold = 0.01;
    bool similarity_rms = true;         // false: raw Euclidean norm
    double near_half_width = 0.005;     // "1% of 0.5"
};

/// True iff the active subgraph contains a cycle through hidden nodes.
bool has_cycle(const LossGraph& g);

/// True iff both y and yhat are reachable from the root.
bool inputs_present(const LossGraph& g);

/// Shape classification of a phenotype curve; tolerance applies to the
/// min-max-normalized values.
PhenotypeClass classify(const Phenotype& ph, double tolerance = 1e-6);

/// Flips the graph sign (and phenotype) when the class is
/// monotone-increasing or parabolic-max. Not valid for multimodal or
/// non-finite classes.
struct OrientResult {
    LossGraph graph;
    Phenotype phenotype;
    PhenotypeClass cls;
    bool flipped;
};
OrientResult orient(const LossGraph& g, const Phenotype& ph, const PhenotypeClass& cls);

/// Parabolic-min optimum within near_half_width of 0.5.
bool near_half_reject(const PhenotypeClass& cls, double width = 0.005);

/// Distance test against the pool of normalized phenotypes. All
/// phenotypes must be finite and share the grid.
bool too_similar(const Phenotype& ph, const std::vector<Phenotype>& pool,
                 const IntegrityConfig& cfg = {});

/// Full four-component check: cycle, input presence, phenotype shape
/// with sign orientation, and similarity against the pool.
IntegrityVerdict integrity_check(const LossGraph& g,
                                 const std::vector<Phenotype>& pool,
                                 const IntegrityConfig& cfg = {});

}  // namespace lossforge::integrity
