#include "lossforge/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include <nlohmann/json.hpp>

namespace lossforge::graph {

using nlohmann::json;

double NodeRef::input_value(double y, double yhat) const {
    switch (code_) {
        case 0: return y;
        case 1: return yhat;
        case 2: return 1.0;
        default: return -1.0;
    }
}

std::string NodeRef::to_string() const {
    switch (code_) {
        case 0: return "y";
        case 1: return "yhat";
        case 2: return "one";
        case 3: return "neg_one";
        default: return "h" + std::to_string(hidden_index());
    }
}

NodeRef NodeRef::from_string(const std::string& s, int num_hidden) {
    if (s == "y") return y();
    if (s == "yhat") return yhat();
    if (s == "one") return one();
    if (s == "neg_one") return neg_one();
    if (s.size() >= 2 && s[0] == 'h') {
        int idx = -1;
        try {
            idx = std::stoi(s.substr(1));
        } catch (...) {
        }
        if (idx >= 0 && idx < num_hidden) return hidden(idx);
    }
    throw ParseError("bad node ref \"" + s + "\"");
}

const std::vector<double>& standard_grid() {
    static const std::vector<double> grid = [] {
        std::vector<double> g;
        g.reserve(2013);
        for (int i = 0; i <= 2000; ++i) g.push_back(static_cast<double>(i) / 2000.0);
        for (int j = 2; j <= 7; ++j) {
            const double t = std::pow(10.0, -j);
            g.push_back(t);
            g.push_back(1.0 - t);
        }
        std::sort(g.begin(), g.end());
        g.erase(std::unique(g.begin(), g.end()), g.end());
        return g;
    }();
    return grid;
}

namespace {

struct Evaluator {
    const LossGraph& g;
    double y, yhat;
    // 0 = unvisited, 1 = in progress, 2 = done
    std::vector<int> state;
    std::vector<double> value;

    Evaluator(const LossGraph& gr, double yv, double yh)
        : g(gr), y(yv), yhat(yh), state(gr.hidden.size(), 0),
          value(gr.hidden.size(), 0.0) {}

    double resolve(NodeRef r) {
        if (r.is_input()) return r.input_value(y, yhat);
        const int i = r.hidden_index();
        if (state[i] == 2) return value[i];
        if (state[i] == 1) throw std::runtime_error("cycle in active subgraph");
        state[i] = 1;
        value[i] = eval_node(g.hidden[i]);
        state[i] = 2;
        return value[i];
    }

    double eval_node(const Node& n) {
        double args[2];
        args[0] = resolve(n.arg1);
        if (n.arity() == 2) args[1] = resolve(n.arg2);
        return ops::eval_op(n.op, std::span<const double>(args, n.arity()));
    }
};

// Active hidden indices in dependency order (arguments before users).
std::vector<int> topo_order(const LossGraph& g) {
    std::vector<int> order;
    std::vector<int> state(g.hidden.size(), 0);
    auto visit = [&](auto&& self, NodeRef r) -> void {
        if (r.is_input()) return;
        const int i = r.hidden_index();
        if (state[i] == 2) return;
        if (state[i] == 1) throw std::runtime_error("cycle in active subgraph");
        state[i] = 1;
        const Node& n = g.hidden[i];
        self(self, n.arg1);
        if (n.arity() == 2) self(self, n.arg2);
        state[i] = 2;
        order.push_back(i);
    };
    visit(visit, g.root.arg1);
    if (g.root.arity() == 2) visit(visit, g.root.arg2);
    return order;
}

// d elementwise / d yhat at one point, via reverse sweep.
double elementwise_grad_yhat(const LossGraph& g, const std::vector<int>& order,
                             double y, double yhat) {
    std::vector<double> value(g.hidden.size(), 0.0);
    auto arg_val = [&](NodeRef r) {
        return r.is_input() ? r.input_value(y, yhat) : value[r.hidden_index()];
    };
    for (int i : order) {
        const Node& n = g.hidden[i];
        double args[2] = {arg_val(n.arg1), 0.0};
        if (n.arity() == 2) args[1] = arg_val(n.arg2);
        value[i] = ops::eval_op(n.op, std::span<const double>(args, n.arity()));
    }

    std::vector<double> adjoint(g.hidden.size(), 0.0);
    double dyhat = 0.0;
    auto propagate = [&](const Node& n, double a) {
        double args[2] = {arg_val(n.arg1), 0.0};
        double partials[2];
        const int ar = n.arity();
        if (ar == 2) args[1] = arg_val(n.arg2);
        ops::grad_op(n.op, std::span<const double>(args, ar),
                     std::span<double>(partials, ar));
        auto sink = [&](NodeRef r, double contrib) {
            if (r.is_hidden()) {
                adjoint[r.hidden_index()] += contrib;
            } else if (r == NodeRef::yhat()) {
                dyhat += contrib;
            }
        };
        sink(n.arg1, a * partials[0]);
        if (ar == 2) sink(n.arg2, a * partials[1]);
    };
    propagate(g.root, 1.0);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if (adjoint[*it] != 0.0) propagate(g.hidden[*it], adjoint[*it]);
    }
    return dyhat;
}

}  // namespace

double elementwise(const LossGraph& g, double y, double yhat) {
    Evaluator ev(g, y, yhat);
    return ev.eval_node(g.root);
}

double loss(const LossGraph& g, std::span<const double> y,
            std::span<const double> yhat) {
    if (y.size() != yhat.size() || y.empty()) {
        throw std::invalid_argument("loss: vector length mismatch");
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) sum += elementwise(g, y[i], yhat[i]);
    return g.sign * sum / static_cast<double>(y.size());
}

void loss_gradient(const LossGraph& g, std::span<const double> y,
                   std::span<const double> yhat, std::span<double> out) {
    if (y.size() != yhat.size() || y.empty() || out.size() != y.size()) {
        throw std::invalid_argument("loss_gradient: vector length mismatch");
    }
    const auto order = topo_order(g);
    const double scale = g.sign / static_cast<double>(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
        out[i] = scale * elementwise_grad_yhat(g, order, y[i], yhat[i]);
    }
}

std::vector<double> loss_gradient(const LossGraph& g, std::span<const double> y,
                                  std::span<const double> yhat) {
    std::vector<double> out(y.size(), 0.0);
    loss_gradient(g, y, yhat, out);
    return out;
}

std::vector<NodeRef> active_nodes(const LossGraph& g) {
    std::vector<NodeRef> out;
    std::vector<bool> seen_hidden(g.hidden.size(), false);
    bool seen_input[NodeRef::kNumInputs] = {};
    auto visit = [&](auto&& self, NodeRef r) -> void {
        if (r.is_input()) {
            const int c = (r == NodeRef::y())   ? 0
                          : (r == NodeRef::yhat()) ? 1
                          : (r == NodeRef::one())  ? 2
                                                   : 3;
            if (!seen_input[c]) {
                seen_input[c] = true;
                out.push_back(r);
            }
            return;
        }
        const int i = r.hidden_index();
        if (seen_hidden[i]) return;
        seen_hidden[i] = true;
        out.push_back(r);
        const Node& n = g.hidden[i];
        self(self, n.arg1);
        if (n.arity() == 2) self(self, n.arg2);
    };
    visit(visit, g.root.arg1);
    if (g.root.arity() == 2) visit(visit, g.root.arg2);
    std::sort(out.begin(), out.end());
    return out;
}

bool is_active(const LossGraph& g, NodeRef ref) {
    const auto act = active_nodes(g);
    return std::find(act.begin(), act.end(), ref) != act.end();
}

Phenotype phenotype(const LossGraph& g, const GridSpec& spec) {
    Phenotype ph;
    ph.grid = *spec.points;
    ph.values.reserve(ph.grid.size());
    ph.finite = true;
    for (double p : ph.grid) {
        const double y[2] = {1.0, 0.0};
        const double yh[2] = {p, 1.0 - p};
        double v;
        try {
            v = loss(g, y, yh);
        } catch (const std::runtime_error&) {
            v = std::numeric_limits<double>::quiet_NaN();
        }
        if (!std::isfinite(v)) ph.finite = false;
        ph.values.push_back(v);
    }
    return ph;
}

Phenotype normalize_phenotype(const Phenotype& ph) {
    if (!ph.finite) {
        throw std::invalid_argument("normalize_phenotype: non-finite phenotype");
    }
    const auto [mn_it, mx_it] = std::minmax_element(ph.values.begin(), ph.values.end());
    const double mn = *mn_it, mx = *mx_it;
    Phenotype out;
    out.grid = ph.grid;
    out.finite = true;
    out.values.reserve(ph.values.size());
    if (mx == mn) {
        out.values.assign(ph.values.size(), 0.0);
        return out;
    }
    for (double v : ph.values) out.values.push_back((v - mn) / (mx - mn));
    return out;
}

namespace {

json node_to_json(const Node& n) {
    json j;
    j["op"] = std::string(ops::op_id(n.op));
    j["arg1"] = n.arg1.to_string();
    if (n.arity() == 2) j["arg2"] = n.arg2.to_string();
    return j;
}

Node node_from_json(const json& j, int num_hidden, const std::string& where) {
    if (!j.is_object() || !j.contains("op") || !j.contains("arg1")) {
        throw ParseError(where + ": node must have op and arg1");
    }
    const std::string id = j.at("op").get<std::string>();
    const auto kind = ops::parse_op(id);
    if (!kind) throw ParseError(where + ": unknown operation \"" + id + "\"");
    NodeRef a1 = NodeRef::from_string(j.at("arg1").get<std::string>(), num_hidden);
    if (ops::arity(*kind) == 2) {
        if (!j.contains("arg2")) {
            throw ParseError(where + ": binary op \"" + id + "\" needs arg2");
        }
        NodeRef a2 = NodeRef::from_string(j.at("arg2").get<std::string>(), num_hidden);
        return Node{*kind, a1, a2};
    }
    if (j.contains("arg2")) {
        throw ParseError(where + ": unary op \"" + id + "\" must not have arg2");
    }
    return Node{*kind, a1, a1};
}

}  // namespace

std::string serialize(const LossGraph& g) {
    json j;
    j["version"] = 1;
    j["sign"] = g.sign;
    json hidden = json::array();
    for (const Node& n : g.hidden) hidden.push_back(node_to_json(n));
    j["hidden"] = std::move(hidden);
    j["root"] = node_to_json(g.root);
    return j.dump(2);
}

LossGraph parse(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ParseError(std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object() || !j.contains("hidden") || !j.contains("root")) {
        throw ParseError("genotype document must have hidden and root");
    }
    const int sign = j.value("sign", 1);
    if (sign != 1 && sign != -1) throw ParseError("sign must be 1 or -1");
    const json& hid = j.at("hidden");
    if (!hid.is_array() || hid.empty()) {
        throw ParseError("hidden must be a non-empty array");
    }
    const int nh = static_cast<int>(hid.size());
    LossGraph g;
    g.sign = sign;
    for (int i = 0; i < nh; ++i) {
        g.hidden.push_back(node_from_json(hid[i], nh, "hidden[" + std::to_string(i) + "]"));
    }
    g.root = node_from_json(j.at("root"), nh, "root");
    bool root_has_hidden = g.root.arg1.is_hidden() ||
                           (g.root.arity() == 2 && g.root.arg2.is_hidden());
    if (!root_has_hidden) {
        throw ParseError("root must reference at least one hidden node");
    }
    return g;
}

namespace {

struct Rendered {
    std::string text;
    bool atomic;  // safe to embed without parens
};

std::string paren(const Rendered& r) {
    return r.atomic ? r.text : "(" + r.text + ")";
}

Rendered render(const LossGraph& g, NodeRef r);

Rendered render_node(const LossGraph& g, const Node& n) {
    using ops::OpKind;
    const Rendered a = render(g, n.arg1);
    if (n.arity() == 1) {
        switch (n.op) {
            case OpKind::Neg: return {"-" + paren(a), false};
            case OpKind::RecipEps: return {"1/(" + a.text + "+eps)", false};
            case OpKind::Square: return {paren(a) + "^2", false};
            case OpKind::LnAbsEps: return {"ln(abs(" + a.text + ")+eps)", true};
            case OpKind::Log10AbsEps: return {"log10(abs(" + a.text + ")+eps)", true};
            case OpKind::Relu: return {"max(" + a.text + ",0)", true};
            case OpKind::NegRelu: return {"min(" + a.text + ",0)", true};
            default:
                return {std::string(ops::op_id(n.op)) + "(" + a.text + ")", true};
        }
    }
    const Rendered b = render(g, n.arg2);
    switch (n.op) {
        case OpKind::Add: return {paren(a) + "+" + paren(b), false};
        case OpKind::Sub: return {paren(a) + "-" + paren(b), false};
        case OpKind::Mul: return {paren(a) + "*" + paren(b), false};
        case OpKind::DivEps: return {paren(a) + "/(" + b.text + "+eps)", false};
        case OpKind::DivSqrt1p:
            return {paren(a) + "/sqrt(1+" + paren(b) + "^2)", false};
        case OpKind::Max: return {"max(" + a.text + "," + b.text + ")", true};
        case OpKind::Min: return {"min(" + a.text + "," + b.text + ")", true};
        default: return {"?", true};
    }
}

Rendered render(const LossGraph& g, NodeRef r) {
    if (r.is_input()) {
        if (r == NodeRef::y()) return {"y", true};
        if (r == NodeRef::yhat()) return {"yhat", true};
        if (r == NodeRef::one()) return {"1", true};
        return {"-1", false};
    }
    return render_node(g, g.hidden[r.hidden_index()]);
}

}  // namespace

std::string to_expression(const LossGraph& g) {
    const Rendered body = render_node(g, g.root);
    const std::string head = g.sign < 0 ? "-(1/n)*sum(" : "(1/n)*sum(";
    return head + body.text + ")";
}

std::string phenotype_csv(const Phenotype& ph) {
    std::string out = "p,loss\n";
    char buf[96];
    for (std::size_t i = 0; i < ph.grid.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", ph.grid[i], ph.values[i]);
        out += buf;
    }
    return out;
}

}  // namespace lossforge::graph
