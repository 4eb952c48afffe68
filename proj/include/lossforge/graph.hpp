#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lossforge/ops.hpp"

namespace lossforge::graph {

using ops::OpKind;

/// Argument target of a node: one of the four inputs or a hidden node.
/// The root is never a valid target.
class NodeRef {
  public:
    static constexpr int kNumInputs = 4;

    NodeRef() : code_(0) {}  // defaults to the y input

    static NodeRef y() { return NodeRef(0); }
    static NodeRef yhat() { return NodeRef(1); }
    static NodeRef one() { return NodeRef(2); }
    static NodeRef neg_one() { return NodeRef(3); }
    static NodeRef hidden(int index) { return NodeRef(kNumInputs + index); }

    bool is_input() const { return code_ < kNumInputs; }
    bool is_hidden() const { return code_ >= kNumInputs; }
    int hidden_index() const { return code_ - kNumInputs; }

    /// Input value for this ref given (y, yhat); only valid for inputs.
    double input_value(double y, double yhat) const;

    std::string to_string() const;          // "y", "yhat", "one", "neg_one", "h0"..
    static NodeRef from_string(const std::string& s, int num_hidden);

    friend bool operator==(NodeRef a, NodeRef b) { return a.code_ == b.code_; }
    friend auto operator<=>(NodeRef a, NodeRef b) { return a.code_ <=> b.code_; }

  private:
    explicit NodeRef(int code) : code_(static_cast<std::int8_t>(code)) {}
    std::int8_t code_;
};

struct Node {
    OpKind op = OpKind::Neg;
    NodeRef arg1;
    NodeRef arg2;  // meaningful iff arity(op) == 2

    int arity() const { return ops::arity(op); }
    friend bool operator==(const Node& a, const Node& b) {
        if (a.op != b.op || !(a.arg1 == b.arg1)) return false;
        return a.arity() == 1 || a.arg2 == b.arg2;
    }
};

struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Sampled loss curve for the canonical binary case y=(1,0), yhat=(p,1-p).
struct Phenotype {
    std::vector<double> grid;
    std::vector<double> values;
    bool finite = false;
};

/// The standard phenotype grid: 2001 uniform points on [0,1] plus the
/// geometric tail {1e-j, 1-1e-j : j=2..7}, sorted and deduplicated.
const std::vector<double>& standard_grid();

struct GridSpec {
    const std::vector<double>* points = &standard_grid();
};

/// Loss-function genotype: hidden nodes plus a root, over inputs
/// {y, yhat, 1, -1}, with an orientation sign applied at reduction time.
/// Evolution uses exactly kSearchHidden hidden nodes; built-in reference
/// losses may carry more.
struct LossGraph {
    static constexpr int kSearchHidden = 4;

    std::vector<Node> hidden;
    Node root;
    int sign = 1;  // +1 or -1

    friend bool operator==(const LossGraph& a, const LossGraph& b) {
        return a.hidden == b.hidden && a.root == b.root && a.sign == b.sign;
    }
};

/// Evaluates the active subgraph at a single (y, yhat) pair. Each hidden
/// node is computed at most once per call; reuse shares the memoized
/// value. Sign and mean are NOT applied. Throws on an active cycle.
double elementwise(const LossGraph& g, double y, double yhat);

/// sign * (1/n) * sum_i elementwise(y_i, yhat_i).
double loss(const LossGraph& g, std::span<const double> y,
            std::span<const double> yhat);

/// d loss / d yhat_i via a reverse-mode sweep; includes sign and 1/n.
std::vector<double> loss_gradient(const LossGraph& g, std::span<const double> y,
                                  std::span<const double> yhat);
void loss_gradient(const LossGraph& g, std::span<const double> y,
                   std::span<const double> yhat, std::span<double> out);

/// Refs reachable from the root by argument edges (inputs and hidden).
std::vector<NodeRef> active_nodes(const LossGraph& g);
bool is_active(const LossGraph& g, NodeRef ref);

/// Loss curve over the grid for y=(1,0), yhat=(p,1-p); sign applied.
Phenotype phenotype(const LossGraph& g, const GridSpec& spec = {});

/// Min-max rescale to [0,1]; a constant curve maps to all zeros.
/// Requires ph.finite.
Phenotype normalize_phenotype(const Phenotype& ph);

/// JSON document round-trip, inactive nodes and sign included.
std::string serialize(const LossGraph& g);
LossGraph parse(const std::string& text);  // throws ParseError

/// Deterministic infix rendering of the active subgraph with the sign
/// and mean wrapper, e.g. "-(1/n)*sum(y*ln(abs(yhat)+eps))".
std::string to_expression(const LossGraph& g);

/// Phenotype CSV with header "p,loss".
std::string phenotype_csv(const Phenotype& ph);

}  // namespace lossforge::graph
