#include "lossforge/ops.hpp"

#include <cassert>
#include <cmath>
#include <unordered_map>

namespace lossforge::ops {

namespace {

constexpr double kPi = 3.14159265358979323846;

double sign0(double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); }

double sigmoid(double x) {
    if (x >= 0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double softplus(double x) {
    // max(x,0) + log1p(exp(-|x|)) avoids overflow on both tails
    return std::fmax(x, 0.0) + std::log1p(std::exp(-std::fabs(x)));
}

double clamp_atanh_arg(double x) {
    constexpr double lim = 1.0 - kEpsilon;
    return std::fmin(std::fmax(x, -lim), lim);
}

}  // namespace

// Abramowitz & Stegun 9.8.1-9.8.4.
double bessel_i0(double x) {
    const double ax = std::fabs(x);
    if (ax < 3.75) {
        const double t = (x / 3.75) * (x / 3.75);
        return 1.0 +
               t * (3.5156229 +
                    t * (3.0899424 +
                         t * (1.2067492 +
                              t * (0.2659732 + t * (0.0360768 + t * 0.0045813)))));
    }
    const double t = 3.75 / ax;
    const double poly =
        0.39894228 +
        t * (0.01328592 +
             t * (0.00225319 +
                  t * (-0.00157565 +
                       t * (0.00916281 +
                            t * (-0.02057706 +
                                 t * (0.02635537 +
                                      t * (-0.01647633 + t * 0.00392377)))))));
    return std::exp(ax) / std::sqrt(ax) * poly;
}

double bessel_i1(double x) {
    const double ax = std::fabs(x);
    double v;
    if (ax < 3.75) {
        const double t = (x / 3.75) * (x / 3.75);
        v = ax * (0.5 +
                  t * (0.87890594 +
                       t * (0.51498869 +
                            t * (0.15084934 +
                                 t * (0.02658733 +
                                      t * (0.00301532 + t * 0.00032411))))));
    } else {
        const double t = 3.75 / ax;
        const double poly =
            0.39894228 +
            t * (-0.03988024 +
                 t * (-0.00362018 +
                      t * (0.00163801 +
                           t * (-0.01031555 +
                                t * (0.02282967 +
                                     t * (-0.02895312 +
                                          t * (0.01787654 - t * 0.00420059)))))));
        v = std::exp(ax) / std::sqrt(ax) * poly;
    }
    return x >= 0 ? v : -v;
}

double bessel_i0e(double x) { return bessel_i0(x) * std::exp(-std::fabs(x)); }

double bessel_i1e(double x) { return bessel_i1(x) * std::exp(-std::fabs(x)); }

namespace {

// d/dx I1(x) = I0(x) - I1(x)/x, with limit 1/2 at x = 0.
double bessel_i1_prime(double x) {
    if (std::fabs(x) < 1e-8) return 0.5;
    return bessel_i0(x) - bessel_i1(x) / x;
}

}  // namespace

const std::array<OpKind, kNumOps>& catalog() {
    static const std::array<OpKind, kNumOps> all = [] {
        std::array<OpKind, kNumOps> a{};
        for (int i = 0; i < kNumOps; ++i) a[i] = static_cast<OpKind>(i);
        return a;
    }();
    return all;
}

std::string_view op_id(OpKind k) {
    switch (k) {
        case OpKind::Neg: return "neg";
        case OpKind::Exp: return "exp";
        case OpKind::Sigmoid: return "sigmoid";
        case OpKind::DSigmoid: return "d_sigmoid";
        case OpKind::Softsign: return "softsign";
        case OpKind::DSoftsign: return "d_softsign";
        case OpKind::Softplus: return "softplus";
        case OpKind::Erf: return "erf";
        case OpKind::Erfc: return "erfc";
        case OpKind::Sin: return "sin";
        case OpKind::Sinh: return "sinh";
        case OpKind::Arcsinh: return "arcsinh";
        case OpKind::Tanh: return "tanh";
        case OpKind::DTanh: return "d_tanh";
        case OpKind::Arctanh: return "arctanh";
        case OpKind::RecipEps: return "recip_eps";
        case OpKind::Abs: return "abs";
        case OpKind::Square: return "square";
        case OpKind::Sqrt: return "sqrt";
        case OpKind::LnAbsEps: return "ln_abs_eps";
        case OpKind::Log10AbsEps: return "log10_abs_eps";
        case OpKind::BesselI0: return "bessel_i0";
        case OpKind::BesselI1: return "bessel_i1";
        case OpKind::BesselI0e: return "bessel_i0e";
        case OpKind::BesselI1e: return "bessel_i1e";
        case OpKind::Relu: return "relu";
        case OpKind::NegRelu: return "neg_relu";
        case OpKind::Add: return "add";
        case OpKind::Sub: return "sub";
        case OpKind::Mul: return "mul";
        case OpKind::DivEps: return "div_eps";
        case OpKind::DivSqrt1p: return "div_sqrt1p";
        case OpKind::Max: return "max";
        case OpKind::Min: return "min";
    }
    return "?";
}

std::optional<OpKind> parse_op(std::string_view id) {
    static const std::unordered_map<std::string_view, OpKind> table = [] {
        std::unordered_map<std::string_view, OpKind> m;
        for (OpKind k : catalog()) m.emplace(op_id(k), k);
        return m;
    }();
    auto it = table.find(id);
    if (it == table.end()) return std::nullopt;
    return it->second;
}

double eval_op(OpKind kind, std::span<const double> args) {
    assert(static_cast<int>(args.size()) == arity(kind));
    const double x = args[0];
    switch (kind) {
        case OpKind::Neg: return -x;
        case OpKind::Exp: return std::exp(x);
        case OpKind::Sigmoid: return sigmoid(x);
        case OpKind::DSigmoid: {
            const double s = sigmoid(x);
            return s * (1.0 - s);
        }
        case OpKind::Softsign: return x / (1.0 + std::fabs(x));
        case OpKind::DSoftsign: {
            const double d = 1.0 + std::fabs(x);
            return 1.0 / (d * d);
        }
        case OpKind::Softplus: return softplus(x);
        case OpKind::Erf: return std::erf(x);
        case OpKind::Erfc: return std::erfc(x);
        case OpKind::Sin: return std::sin(x);
        case OpKind::Sinh: return std::sinh(x);
        case OpKind::Arcsinh: return std::asinh(x);
        case OpKind::Tanh: return std::tanh(x);
        case OpKind::DTanh: {
            const double t = std::tanh(x);
            return 1.0 - t * t;
        }
        case OpKind::Arctanh: return std::atanh(clamp_atanh_arg(x));
        case OpKind::RecipEps: return 1.0 / (x + kEpsilon);
        case OpKind::Abs: return std::fabs(x);
        case OpKind::Square: return x * x;
        case OpKind::Sqrt: return std::sqrt(x);  // NaN on x < 0, by design
        case OpKind::LnAbsEps: return std::log(std::fabs(x) + kEpsilon);
        case OpKind::Log10AbsEps: return std::log10(std::fabs(x) + kEpsilon);
        case OpKind::BesselI0: return bessel_i0(x);
        case OpKind::BesselI1: return bessel_i1(x);
        case OpKind::BesselI0e: return bessel_i0e(x);
        case OpKind::BesselI1e: return bessel_i1e(x);
        case OpKind::Relu: return std::fmax(x, 0.0);
        case OpKind::NegRelu: return std::fmin(x, 0.0);
        case OpKind::Add: return x + args[1];
        case OpKind::Sub: return x - args[1];
        case OpKind::Mul: return x * args[1];
        case OpKind::DivEps: return x / (args[1] + kEpsilon);
        case OpKind::DivSqrt1p: return x / std::sqrt(1.0 + args[1] * args[1]);
        case OpKind::Max: return x >= args[1] ? x : args[1];
        case OpKind::Min: return x <= args[1] ? x : args[1];
    }
    return std::nan("");
}

void grad_op(OpKind kind, std::span<const double> args, std::span<double> out) {
    assert(static_cast<int>(args.size()) == arity(kind));
    assert(out.size() == args.size());
    const double x = args[0];
    switch (kind) {
        case OpKind::Neg: out[0] = -1.0; return;
        case OpKind::Exp: out[0] = std::exp(x); return;
        case OpKind::Sigmoid: {
            const double s = sigmoid(x);
            out[0] = s * (1.0 - s);
            return;
        }
        case OpKind::DSigmoid: {
            // second derivative of sigmoid: s'(1 - 2s)
            const double s = sigmoid(x);
            out[0] = s * (1.0 - s) * (1.0 - 2.0 * s);
            return;
        }
        case OpKind::Softsign: {
            const double d = 1.0 + std::fabs(x);
            out[0] = 1.0 / (d * d);
            return;
        }
        case OpKind::DSoftsign: {
            const double d = 1.0 + std::fabs(x);
            out[0] = -2.0 * sign0(x) / (d * d * d);
            return;
        }
        case OpKind::Softplus: out[0] = sigmoid(x); return;
        case OpKind::Erf: out[0] = 2.0 / std::sqrt(kPi) * std::exp(-x * x); return;
        case OpKind::Erfc: out[0] = -2.0 / std::sqrt(kPi) * std::exp(-x * x); return;
        case OpKind::Sin: out[0] = std::cos(x); return;
        case OpKind::Sinh: out[0] = std::cosh(x); return;
        case OpKind::Arcsinh: out[0] = 1.0 / std::sqrt(1.0 + x * x); return;
        case OpKind::Tanh: {
            const double t = std::tanh(x);
            out[0] = 1.0 - t * t;
            return;
        }
        case OpKind::DTanh: {
            const double t = std::tanh(x);
            out[0] = -2.0 * t * (1.0 - t * t);
            return;
        }
        case OpKind::Arctanh: {
            // the eval clamps its argument, so the function is flat outside
            // the open interval and the consistent subgradient there is zero
            constexpr double lim = 1.0 - kEpsilon;
            out[0] = std::fabs(x) >= lim ? 0.0 : 1.0 / (1.0 - x * x);
            return;
        }
        case OpKind::RecipEps: {
            const double d = x + kEpsilon;
            out[0] = -1.0 / (d * d);
            return;
        }
        case OpKind::Abs: out[0] = sign0(x); return;
        case OpKind::Square: out[0] = 2.0 * x; return;
        case OpKind::Sqrt: out[0] = 0.5 / std::sqrt(x); return;
        case OpKind::LnAbsEps: out[0] = sign0(x) / (std::fabs(x) + kEpsilon); return;
        case OpKind::Log10AbsEps:
            out[0] = sign0(x) / ((std::fabs(x) + kEpsilon) * std::log(10.0));
            return;
        case OpKind::BesselI0: out[0] = bessel_i1(x); return;
        case OpKind::BesselI1: out[0] = bessel_i1_prime(x); return;
        case OpKind::BesselI0e: {
            // product rule with d/dx e^{-|x|} = -sign(x) e^{-|x|}
            out[0] = bessel_i1e(x) - sign0(x) * bessel_i0e(x);
            return;
        }
        case OpKind::BesselI1e: {
            const double e = std::exp(-std::fabs(x));
            out[0] = e * bessel_i1_prime(x) - sign0(x) * bessel_i1e(x);
            return;
        }
        case OpKind::Relu: out[0] = x >= 0 ? 1.0 : 0.0; return;
        case OpKind::NegRelu: out[0] = x <= 0 ? 1.0 : 0.0; return;
        case OpKind::Add: out[0] = 1.0; out[1] = 1.0; return;
        case OpKind::Sub: out[0] = 1.0; out[1] = -1.0; return;
        case OpKind::Mul: out[0] = args[1]; out[1] = x; return;
        case OpKind::DivEps: {
            const double d = args[1] + kEpsilon;
            out[0] = 1.0 / d;
            out[1] = -x / (d * d);
            return;
        }
        case OpKind::DivSqrt1p: {
            const double s = 1.0 + args[1] * args[1];
            const double r = std::sqrt(s);
            out[0] = 1.0 / r;
            out[1] = -x * args[1] / (s * r);
            return;
        }
        case OpKind::Max:
            // ties route the full gradient to the first argument
            out[0] = x >= args[1] ? 1.0 : 0.0;
            out[1] = x >= args[1] ? 0.0 : 1.0;
            return;
        case OpKind::Min:
            out[0] = x <= args[1] ? 1.0 : 0.0;
            out[1] = x <= args[1] ? 0.0 : 1.0;
            return;
    }
}

}  // namespace lossforge::ops
