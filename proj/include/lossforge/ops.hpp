#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>

namespace lossforge::ops {

/// Numerical-stability constant used by every epsilon-bearing operation.
inline constexpr double kEpsilon = 1e-7;

/// The closed catalog of elementwise operations: 27 unary followed by
/// 7 binary, in stable order. Serialized genotypes refer to these by id
/// string; sampling code relies on the enumeration order being fixed.
enum class OpKind : std::uint8_t {
    // unary
    Neg,
    Exp,
    Sigmoid,
    DSigmoid,
    Softsign,
    DSoftsign,
    Softplus,
    Erf,
    Erfc,
    Sin,
    Sinh,
    Arcsinh,
    Tanh,
    DTanh,
    Arctanh,
    RecipEps,
    Abs,
    Square,
    Sqrt,
    LnAbsEps,
    Log10AbsEps,
    BesselI0,
    BesselI1,
    BesselI0e,
    BesselI1e,
    Relu,
    NegRelu,
    // binary
    Add,
    Sub,
    Mul,
    DivEps,
    DivSqrt1p,
    Max,
    Min,
};

inline constexpr int kNumOps = 34;
inline constexpr int kNumUnary = 27;
inline constexpr int kNumBinary = 7;

constexpr int arity(OpKind k) {
    return static_cast<int>(k) < kNumUnary ? 1 : 2;
}

/// All 34 kinds in catalog order (unary block, then binary block).
const std::array<OpKind, kNumOps>& catalog();

/// Stable lowercase id, e.g. "ln_abs_eps". Inverse of parse_op.
std::string_view op_id(OpKind k);
std::optional<OpKind> parse_op(std::string_view id);

/// Evaluates one operation. Non-finite results propagate; nothing traps.
/// args.size() must equal arity(kind).
double eval_op(OpKind kind, std::span<const double> args);

/// Analytic partial derivatives, one per argument, using the declared
/// subgradient conventions (|x|' at 0 is 0; max/min ties route to the
/// first argument).
void grad_op(OpKind kind, std::span<const double> args, std::span<double> out);

/// Modified Bessel functions of the first kind, polynomial/asymptotic
/// approximations good to ~3e-7 relative error on |x| <= 50.
double bessel_i0(double x);
double bessel_i1(double x);
double bessel_i0e(double x);
double bessel_i1e(double x);

}  // namespace lossforge::ops
