#include "lossforge/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace lossforge::protocol {

using graph::Node;
using graph::NodeRef;
using nlohmann::json;
using ops::OpKind;

std::optional<double> kendall_tau(const std::vector<double>& a,
                                  const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2) {
        throw std::invalid_argument("kendall_tau: need equal lengths >= 2");
    }
    const std::size_t n = a.size();
    long long concordant = 0, discordant = 0, ties_a = 0, ties_b = 0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double da = a[i] - a[j];
            const double db = b[i] - b[j];
            if (da == 0 && db == 0) {
                ++ties_a;
                ++ties_b;
            } else if (da == 0) {
                ++ties_a;
            } else if (db == 0) {
                ++ties_b;
            } else if ((da > 0) == (db > 0)) {
                ++concordant;
            } else {
                ++discordant;
            }
        }
    }
    const double n0 = static_cast<double>(n) * (n - 1) / 2.0;
    const double denom = std::sqrt((n0 - ties_a) * (n0 - ties_b));
    if (denom == 0) return std::nullopt;
    return (concordant - discordant) / denom;
}

namespace {

// Continued fraction for the incomplete beta function (Lentz's method).
double betacf(double a, double b, double x) {
    constexpr int kMaxIter = 300;
    constexpr double kEps = 1e-15;
    constexpr double kTiny = 1e-300;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < kTiny) d = kTiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < kEps) break;
    }
    return h;
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                            a * std::log(x) + b * std::log(1.0 - x);
    const double front = std::exp(ln_front);
    if (x < (a + 1.0) / (a + b + 2.0)) {
        return front * betacf(a, b, x) / a;
    }
    return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

double student_t_two_sided_p(double t, double df) {
    const double x = df / (df + t * t);
    return incomplete_beta(df / 2.0, 0.5, x);
}

std::optional<WelchResult> welch_t(const std::vector<double>& a,
                                   const std::vector<double>& b, bool one_sided) {
    if (a.size() < 2 || b.size() < 2) {
        throw std::invalid_argument("welch_t: need at least 2 samples each");
    }
    auto mean_var = [](const std::vector<double>& v) {
        const double n = static_cast<double>(v.size());
        const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
        double ss = 0.0;
        for (double x : v) ss += (x - mean) * (x - mean);
        return std::pair<double, double>{mean, ss / (n - 1.0)};
    };
    const auto [ma, va] = mean_var(a);
    const auto [mb, vb] = mean_var(b);
    const double na = static_cast<double>(a.size());
    const double nb = static_cast<double>(b.size());
    const double sa = va / na, sb = vb / nb;
    if (sa + sb == 0.0) return std::nullopt;
    WelchResult r;
    r.t = (ma - mb) / std::sqrt(sa + sb);
    r.df = (sa + sb) * (sa + sb) /
           (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    const double two = student_t_two_sided_p(r.t, r.df);
    r.p = one_sided ? (r.t > 0 ? two / 2.0 : 1.0 - two / 2.0) : two;
    return r;
}

namespace {

Node filler() { return Node{OpKind::Neg, NodeRef::one(), NodeRef::one()}; }

LossGraph ce_graph() {
    LossGraph g;
    g.sign = -1;
    g.hidden = {Node{OpKind::LnAbsEps, NodeRef::yhat(), NodeRef::yhat()}, filler(),
                filler(), filler()};
    g.root = Node{OpKind::Mul, NodeRef::y(), NodeRef::hidden(0)};
    return g;
}

// Shared prefix of the NeuroLoss family:
//   h0 = yhat/(y+eps), h1 = yhat/sqrt(1+h0^2)
void neuro_prefix(LossGraph& g) {
    g.sign = -1;
    g.hidden = {Node{OpKind::DivEps, NodeRef::yhat(), NodeRef::y()},
                Node{OpKind::DivSqrt1p, NodeRef::yhat(), NodeRef::hidden(0)}};
}

}  // namespace

ReferenceLoss reference_loss(const std::string& name) {
    ReferenceLoss ref;
    ref.name = name;
    LossGraph& g = ref.graph;
    const NodeRef y = NodeRef::y(), yhat = NodeRef::yhat();
    const NodeRef h0 = NodeRef::hidden(0), h1 = NodeRef::hidden(1),
                  h2 = NodeRef::hidden(2), h3 = NodeRef::hidden(3);
    if (name == "ce") {
        g = ce_graph();
    } else if (name == "ce_ls010") {
        g = ce_graph();
        ref.smoothing_alpha = 0.10;
    } else if (name == "ce_ls3e5") {
        g = ce_graph();
        ref.smoothing_alpha = 0.00003;
    } else if (name == "neuroloss1") {
        neuro_prefix(g);
        g.hidden.push_back(Node{OpKind::LnAbsEps, h1, h1});
        g.hidden.push_back(Node{OpKind::Mul, yhat, h1});
        g.root = Node{OpKind::Add, h2, h3};
    } else if (name == "neuroloss2") {
        neuro_prefix(g);
        g.hidden.push_back(Node{OpKind::Log10AbsEps, h1, h1});
        g.hidden.push_back(Node{OpKind::Sin, h1, h1});
        g.root = Node{OpKind::Add, h2, h3};
    } else if (name == "neuroloss3") {
        neuro_prefix(g);
        g.hidden.push_back(Node{OpKind::LnAbsEps, h1, h1});
        g.hidden.push_back(Node{OpKind::Min, y, h0});
        g.root = Node{OpKind::Add, h2, h3};
    } else if (name == "bessel") {
        g.sign = 1;
        g.hidden = {Node{OpKind::BesselI0e, yhat, yhat},
                    Node{OpKind::Min, h0, y}, filler(), filler()};
        g.root = Node{OpKind::Add, NodeRef::hidden(1), h0};
    } else if (name == "hm1") {
        g.sign = -1;
        g.hidden = {Node{OpKind::DivSqrt1p, yhat, y},
                    Node{OpKind::LnAbsEps, h0, h0},
                    Node{OpKind::DivEps, yhat, y},
                    Node{OpKind::Max, y, h2}};
        g.root = Node{OpKind::DivSqrt1p, h1, h3};
    } else if (name == "hm2") {
        neuro_prefix(g);
        g.hidden.push_back(Node{OpKind::Log10AbsEps, h1, h1});
        g.hidden.push_back(Node{OpKind::Arcsinh, h1, h1});
        g.root = Node{OpKind::Max, h2, h3};
    } else if (name == "hm3") {
        neuro_prefix(g);
        g.hidden.push_back(Node{OpKind::Log10AbsEps, h1, h1});
        g.hidden.push_back(Node{OpKind::Square, h1, h1});
        g.root = Node{OpKind::Add, h2, h3};
    } else if (name == "hm4") {
        neuro_prefix(g);
        g.hidden.push_back(Node{OpKind::LnAbsEps, h1, h1});
        g.hidden.push_back(Node{OpKind::Sinh, h1, h1});
        g.root = Node{OpKind::Add, h2, h3};
    } else if (name == "hm5") {
        neuro_prefix(g);
        g.hidden.push_back(Node{OpKind::LnAbsEps, h1, h1});
        g.hidden.push_back(Node{OpKind::Erf, h0, h0});
        g.root = Node{OpKind::Add, h2, h3};
    } else if (name == "hm6") {
        neuro_prefix(g);
        g.hidden.push_back(Node{OpKind::Log10AbsEps, h1, h1});
        g.hidden.push_back(Node{OpKind::Tanh, h0, h0});
        g.root = Node{OpKind::Add, h2, h3};
    } else if (name == "hm7") {
        g.sign = -1;
        g.hidden = {Node{OpKind::DivEps, yhat, y},
                    Node{OpKind::Mul, y, yhat},
                    Node{OpKind::LnAbsEps, NodeRef::hidden(1), NodeRef::hidden(1)},
                    filler()};
        g.root = Node{OpKind::DivSqrt1p, h2, h0};
    } else {
        throw std::invalid_argument("unknown reference loss \"" + name + "\"");
    }
    return ref;
}

std::vector<std::string> reference_names() {
    return {"ce",  "ce_ls010", "ce_ls3e5", "neuroloss1", "neuroloss2", "neuroloss3",
            "bessel", "hm1", "hm2", "hm3", "hm4", "hm5", "hm6", "hm7"};
}

namespace {

std::vector<double> smooth_targets(std::span<const double> y, double alpha, int k) {
    std::vector<double> out(y.begin(), y.end());
    for (double& v : out) v = v * (1.0 - alpha) + alpha / k;
    return out;
}

}  // namespace

double ReferenceLoss::loss(std::span<const double> y, std::span<const double> yhat) const {
    if (smoothing_alpha == 0.0) return graph::loss(graph, y, yhat);
    const auto ys = smooth_targets(y, smoothing_alpha, num_classes);
    return graph::loss(graph, ys, yhat);
}

std::vector<double> ReferenceLoss::gradient(std::span<const double> y,
                                            std::span<const double> yhat) const {
    if (smoothing_alpha == 0.0) return graph::loss_gradient(graph, y, yhat);
    const auto ys = smooth_targets(y, smoothing_alpha, num_classes);
    return graph::loss_gradient(graph, ys, yhat);
}

void EliminationPlan::validate() const {
    if (rounds.empty()) throw std::invalid_argument("elimination plan is empty");
    if (rounds.front().survivor_count > candidates_in) {
        throw std::invalid_argument("first round survivors exceed candidates_in");
    }
    for (std::size_t r = 0; r < rounds.size(); ++r) {
        if (rounds[r].survivor_count < 1 || rounds[r].training_steps < 1) {
            throw std::invalid_argument("elimination round values must be positive");
        }
        if (r > 0) {
            if (rounds[r].survivor_count >= rounds[r - 1].survivor_count) {
                throw std::invalid_argument("survivor counts must strictly decrease");
            }
            if (rounds[r].training_steps <= rounds[r - 1].training_steps) {
                throw std::invalid_argument("training steps must strictly increase");
            }
        }
    }
}

EliminationPlan EliminationPlan::desk() {
    EliminationPlan p;
    p.candidates_in = 16;
    p.rounds = {{16, 150}, {8, 300}, {4, 450}, {2, 600}};
    return p;
}

EliminationPlan EliminationPlan::paper(int base_steps) {
    EliminationPlan p;
    p.candidates_in = 150;
    p.rounds = {{150, base_steps},
                {50, 2 * base_steps},
                {25, 3 * base_steps},
                {10, 4 * base_steps}};
    return p;
}

EliminationLadder eliminate(const std::vector<LossGraph>& candidates,
                            const EliminationPlan& plan, const Trainer& trainer) {
    plan.validate();
    if (static_cast<int>(candidates.size()) < plan.candidates_in) {
        throw std::invalid_argument("eliminate: not enough candidates for the plan");
    }
    EliminationLadder ladder;
    std::vector<int> alive(plan.candidates_in);
    std::iota(alive.begin(), alive.end(), 0);
    for (const EliminationRound& round : plan.rounds) {
        std::vector<std::pair<double, int>> scored;
        scored.reserve(alive.size());
        for (int idx : alive) {
            scored.emplace_back(trainer(candidates[idx], round.training_steps), idx);
        }
        std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        const int keep = std::min<int>(round.survivor_count, static_cast<int>(scored.size()));
        alive.clear();
        for (int i = 0; i < keep; ++i) alive.push_back(scored[i].second);
        ladder.survivors.push_back(alive);
    }
    return ladder;
}

ComparisonReport compare(const std::vector<NamedLoss>& losses, int runs,
                         const RunTrainer& trainer, int baseline_index, bool one_sided) {
    if (runs < 2) throw std::invalid_argument("compare: need runs >= 2");
    ComparisonReport report;
    report.baseline_index = baseline_index;
    std::vector<std::vector<double>> scores(losses.size());
    for (std::size_t i = 0; i < losses.size(); ++i) {
        for (int r = 0; r < runs; ++r) scores[i].push_back(trainer(losses[i].graph, r));
    }
    for (std::size_t i = 0; i < losses.size(); ++i) {
        ComparisonRow row;
        row.name = losses[i].name;
        row.runs = runs;
        row.mean = std::accumulate(scores[i].begin(), scores[i].end(), 0.0) / runs;
        double ss = 0.0;
        for (double x : scores[i]) ss += (x - row.mean) * (x - row.mean);
        row.stddev = std::sqrt(ss / (runs - 1));
        if (static_cast<int>(i) != baseline_index) {
            const auto w = welch_t(scores[i], scores[baseline_index], one_sided);
            if (w) row.p_vs_baseline = w->p;
        }
        report.rows.push_back(std::move(row));
    }
    return report;
}

std::string ComparisonReport::csv() const {
    std::string out = "loss,mean,std,runs,p_vs_baseline\n";
    char buf[192];
    for (const auto& row : rows) {
        if (row.p_vs_baseline) {
            std::snprintf(buf, sizeof buf, "%s,%.17g,%.17g,%d,%.17g\n", row.name.c_str(),
                          row.mean, row.stddev, row.runs, *row.p_vs_baseline);
        } else {
            std::snprintf(buf, sizeof buf, "%s,%.17g,%.17g,%d,\n", row.name.c_str(),
                          row.mean, row.stddev, row.runs);
        }
        out += buf;
    }
    return out;
}

std::vector<std::optional<double>> fidelity_study(
    const std::vector<LossGraph>& losses, const std::vector<Evaluator>& cheap,
    const Evaluator& expensive) {
    if (losses.size() < 2) throw std::invalid_argument("fidelity_study: need >= 2 losses");
    std::vector<double> exp_scores;
    exp_scores.reserve(losses.size());
    for (const LossGraph& g : losses) exp_scores.push_back(expensive(g));
    std::vector<std::optional<double>> taus;
    for (const Evaluator& ev : cheap) {
        std::vector<double> cheap_scores;
        cheap_scores.reserve(losses.size());
        for (const LossGraph& g : losses) cheap_scores.push_back(ev(g));
        taus.push_back(kendall_tau(cheap_scores, exp_scores));
    }
    return taus;
}

std::string survivors_json(const std::vector<LossGraph>& candidates,
                           const EliminationLadder& ladder) {
    json j;
    json rounds = json::array();
    for (const auto& round : ladder.survivors) {
        json entry = json::array();
        for (int idx : round) {
            entry.push_back({{"index", idx},
                             {"genotype", json::parse(graph::serialize(candidates[idx]))}});
        }
        rounds.push_back(std::move(entry));
    }
    j["rounds"] = std::move(rounds);
    return j.dump(2);
}

}  // namespace lossforge::protocol
