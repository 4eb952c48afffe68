#include "lossforge/integrity.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace lossforge::integrity {

using graph::NodeRef;

std::string_view reason_name(RejectReason r) {
    switch (r) {
        case RejectReason::Ok: return "ok";
        case RejectReason::Cycle: return "cycle";
        case RejectReason::MissingInput: return "missing_input";
        case RejectReason::Multimodal: return "multimodal";
        case RejectReason::Nonfinite: return "nonfinite";
        case RejectReason::OptimumNearHalf: return "optimum_near_half";
        case RejectReason::TooSimilar: return "too_similar";
    }
    return "?";
}

bool has_cycle(const LossGraph& g) {
    std::vector<int> state(g.hidden.size(), 0);  // 0 new, 1 on stack, 2 done
    bool cyclic = false;
    auto visit = [&](auto&& self, NodeRef r) -> void {
        if (cyclic || r.is_input()) return;
        const int i = r.hidden_index();
        if (state[i] == 2) return;
        if (state[i] == 1) {
            cyclic = true;
            return;
        }
        state[i] = 1;
        const graph::Node& n = g.hidden[i];
        self(self, n.arg1);
        if (n.arity() == 2) self(self, n.arg2);
        state[i] = 2;
    };
    visit(visit, g.root.arg1);
    if (g.root.arity() == 2) visit(visit, g.root.arg2);
    return cyclic;
}

bool inputs_present(const LossGraph& g) {
    if (has_cycle(g)) return false;
    return graph::is_active(g, NodeRef::y()) && graph::is_active(g, NodeRef::yhat());
}

namespace {

struct Run {
    std::size_t begin, end;  // half-open index range on the grid
    bool interior(const std::vector<double>& grid) const {
        return begin > 0 && end < grid.size();
    }
};

// Contiguous runs of points within tol of the given extreme value.
std::vector<Run> extreme_runs(const std::vector<double>& v, double extreme, double tol) {
    std::vector<Run> runs;
    std::size_t i = 0;
    while (i < v.size()) {
        if (std::fabs(v[i] - extreme) <= tol) {
            std::size_t j = i;
            while (j < v.size() && std::fabs(v[j] - extreme) <= tol) ++j;
            runs.push_back({i, j});
            i = j;
        } else {
            ++i;
        }
    }
    return runs;
}

bool non_increasing(const std::vector<double>& v, std::size_t b, std::size_t e, double tol) {
    for (std::size_t i = b; i + 1 < e; ++i) {
        if (v[i + 1] > v[i] + tol) return false;
    }
    return true;
}

bool non_decreasing(const std::vector<double>& v, std::size_t b, std::size_t e, double tol) {
    for (std::size_t i = b; i + 1 < e; ++i) {
        if (v[i + 1] < v[i] - tol) return false;
    }
    return true;
}

// Grid location of the sharpest extreme point inside a run.
double run_optimum(const Phenotype& ph, const Run& r, bool minimum) {
    std::size_t best = r.begin;
    for (std::size_t i = r.begin; i < r.end; ++i) {
        if (minimum ? ph.values[i] < ph.values[best] : ph.values[i] > ph.values[best]) {
            best = i;
        }
    }
    return ph.grid[best];
}

}  // namespace

PhenotypeClass classify(const Phenotype& ph, double tolerance) {
    if (!ph.finite) return {PhenotypeTag::Nonfinite, std::nullopt};
    const auto [mn_it, mx_it] = std::minmax_element(ph.values.begin(), ph.values.end());
    if (*mx_it - *mn_it < tolerance) {
        return {PhenotypeTag::DegenerateConstant, std::nullopt};
    }
    const Phenotype norm = graph::normalize_phenotype(ph);
    const auto& v = norm.values;
    const std::size_t n = v.size();
    if (non_increasing(v, 0, n, tolerance)) {
        return {PhenotypeTag::MonotoneDecreasing, std::nullopt};
    }
    if (non_decreasing(v, 0, n, tolerance)) {
        return {PhenotypeTag::MonotoneIncreasing, std::nullopt};
    }
    const auto min_runs = extreme_runs(v, 0.0, tolerance);
    const auto max_runs = extreme_runs(v, 1.0, tolerance);
    // Parabolic shapes must have a unique run at BOTH extremes; the
    // symmetric hump [0,1,0] has two global minima and is multimodal.
    if (min_runs.size() == 1 && max_runs.size() == 1) {
        const Run& mn = min_runs.front();
        const Run& mx = max_runs.front();
        if (mn.interior(ph.grid) && non_increasing(v, 0, mn.begin + 1, tolerance) &&
            non_decreasing(v, mn.end - 1, n, tolerance)) {
            return {PhenotypeTag::ParabolicMin, run_optimum(ph, mn, true)};
        }
        if (mx.interior(ph.grid) && non_decreasing(v, 0, mx.begin + 1, tolerance) &&
            non_increasing(v, mx.end - 1, n, tolerance)) {
            return {PhenotypeTag::ParabolicMax, run_optimum(ph, mx, false)};
        }
    }
    return {PhenotypeTag::Multimodal, std::nullopt};
}

OrientResult orient(const LossGraph& g, const Phenotype& ph, const PhenotypeClass& cls) {
    if (cls.tag == PhenotypeTag::Multimodal || cls.tag == PhenotypeTag::Nonfinite) {
        throw std::invalid_argument("orient: class not orientable");
    }
    OrientResult out{g, ph, cls, false};
    if (cls.tag == PhenotypeTag::MonotoneIncreasing ||
        cls.tag == PhenotypeTag::ParabolicMax) {
        out.flipped = true;
        out.graph.sign = -g.sign;
        for (double& v : out.phenotype.values) v = -v;
        out.cls.tag = cls.tag == PhenotypeTag::MonotoneIncreasing
                          ? PhenotypeTag::MonotoneDecreasing
                          : PhenotypeTag::ParabolicMin;
    }
    return out;
}

bool near_half_reject(const PhenotypeClass& cls, double width) {
    if (cls.tag != PhenotypeTag::ParabolicMin || !cls.optimum_p) return false;
    return std::fabs(*cls.optimum_p - 0.5) <= width;
}

bool too_similar(const Phenotype& ph, const std::vector<Phenotype>& pool,
                 const IntegrityConfig& cfg) {
    const Phenotype self = graph::normalize_phenotype(ph);
    const double scale =
        cfg.similarity_rms ? std::sqrt(static_cast<double>(self.grid.size())) : 1.0;
    for (const Phenotype& other : pool) {
        if (other.grid.size() != self.grid.size()) {
            throw std::invalid_argument("too_similar: grid mismatch");
        }
        const Phenotype on = graph::normalize_phenotype(other);
        double ss = 0.0;
        for (std::size_t i = 0; i < self.values.size(); ++i) {
            const double d = self.values[i] - on.values[i];
            ss += d * d;
        }
        if (std::sqrt(ss) / scale < cfg.similarity_threshold) return true;
    }
    return false;
}

IntegrityVerdict integrity_check(const LossGraph& g,
                                 const std::vector<Phenotype>& pool,
                                 const IntegrityConfig& cfg) {
    IntegrityVerdict v;
    v.oriented_sign = g.sign;
    if (has_cycle(g)) {
        v.reason = RejectReason::Cycle;
        return v;
    }
    if (!inputs_present(g)) {
        v.reason = RejectReason::MissingInput;
        return v;
    }
    const Phenotype ph = graph::phenotype(g);
    if (!ph.finite) {
        v.reason = RejectReason::Nonfinite;
        return v;
    }
    const PhenotypeClass cls = classify(ph, cfg.classify_tolerance);
    if (cls.tag == PhenotypeTag::Multimodal ||
        cls.tag == PhenotypeTag::DegenerateConstant) {
        v.reason = RejectReason::Multimodal;
        return v;
    }
    const OrientResult oriented = orient(g, ph, cls);
    v.oriented_sign = oriented.graph.sign;
    if (near_half_reject(oriented.cls, cfg.near_half_width)) {
        v.reason = RejectReason::OptimumNearHalf;
        return v;
    }
    if (too_similar(oriented.phenotype, pool, cfg)) {
        v.reason = RejectReason::TooSimilar;
        return v;
    }
    v.accepted = true;
    v.reason = RejectReason::Ok;
    return v;
}

}  // namespace lossforge::integrity
