#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>
#include <vector>

#include "lossforge/ops.hpp"

using namespace lossforge::ops;

namespace {

double call1(OpKind k, double x) {
    const double args[] = {x};
    return eval_op(k, args);
}

double call2(OpKind k, double a, double b) {
    const double args[] = {a, b};
    return eval_op(k, args);
}

std::vector<double> grad(OpKind k, std::vector<double> args) {
    std::vector<double> out(args.size());
    grad_op(k, args, out);
    return out;
}

// Central finite difference of one argument slot.
double fd(OpKind k, std::vector<double> args, std::size_t slot, double h) {
    auto hi = args, lo = args;
    hi[slot] += h;
    lo[slot] -= h;
    return (eval_op(k, hi) - eval_op(k, lo)) / (2.0 * h);
}

// Operations where the finite-difference probe must stay away from a
// kink, branch point, or approximation seam near the given values.
bool near_singularity(OpKind k, const std::vector<double>& args) {
    const double x = args[0];
    switch (k) {
        case OpKind::Abs:
        case OpKind::Relu:
        case OpKind::NegRelu:
        case OpKind::Softsign:
        case OpKind::DSoftsign:
        case OpKind::LnAbsEps:
        case OpKind::Log10AbsEps:
            return std::fabs(x) < 1e-3;
        case OpKind::Sqrt:
            return x < 1e-3;
        case OpKind::RecipEps:
            return std::fabs(x + kEpsilon) < 1e-3;
        case OpKind::Arctanh:
            return std::fabs(x) > 1.0 - 1e-3;
        case OpKind::BesselI0:
        case OpKind::BesselI1:
        case OpKind::BesselI0e:
        case OpKind::BesselI1e:
            // the small/large-argument polynomials meet at |x| = 3.75
            return std::fabs(std::fabs(x) - 3.75) < 1e-2 || std::fabs(x) < 1e-3;
        case OpKind::DivEps:
            return std::fabs(args[1] + kEpsilon) < 1e-2;
        case OpKind::Max:
        case OpKind::Min:
            return std::fabs(args[0] - args[1]) < 1e-3;
        default:
            return false;
    }
}

}  // namespace

TEST_CASE("catalog has 27 unary then 7 binary operations in stable order") {
    const auto& all = catalog();
    REQUIRE(all.size() == 34);
    int unary = 0, binary = 0;
    for (std::size_t i = 0; i < all.size(); ++i) {
        CHECK(static_cast<int>(all[i]) == static_cast<int>(i));
        if (arity(all[i]) == 1) {
            ++unary;
            CHECK(binary == 0);  // unary block comes first
        } else {
            ++binary;
        }
    }
    CHECK(unary == kNumUnary);
    CHECK(binary == kNumBinary);
}

TEST_CASE("op ids round-trip through parse_op") {
    for (OpKind k : catalog()) {
        auto back = parse_op(op_id(k));
        REQUIRE(back.has_value());
        CHECK(*back == k);
    }
    CHECK(!parse_op("cosh").has_value());
    CHECK(!parse_op("").has_value());
    CHECK(!parse_op("ADD").has_value());
}

TEST_CASE("unary evaluation fixtures") {
    CHECK(call1(OpKind::Neg, 2.5) == -2.5);
    CHECK(call1(OpKind::Exp, 0.0) == 1.0);
    CHECK(call1(OpKind::Sigmoid, 0.0) == doctest::Approx(0.5));
    CHECK(call1(OpKind::DSigmoid, 0.0) == doctest::Approx(0.25));
    CHECK(call1(OpKind::Softsign, 1.0) == doctest::Approx(0.5));
    CHECK(call1(OpKind::Softsign, -3.0) == doctest::Approx(-0.75));
    CHECK(call1(OpKind::DSoftsign, 1.0) == doctest::Approx(0.25));
    CHECK(call1(OpKind::Softplus, 0.0) == doctest::Approx(std::log(2.0)));
    CHECK(call1(OpKind::Erf, 0.0) == 0.0);
    CHECK(call1(OpKind::Erfc, 0.0) == 1.0);
    CHECK(call1(OpKind::Sin, 0.5) == doctest::Approx(std::sin(0.5)));
    CHECK(call1(OpKind::Sinh, 0.5) == doctest::Approx(std::sinh(0.5)));
    CHECK(call1(OpKind::Arcsinh, 0.5) == doctest::Approx(std::asinh(0.5)));
    CHECK(call1(OpKind::Tanh, 0.5) == doctest::Approx(std::tanh(0.5)));
    CHECK(call1(OpKind::DTanh, 0.0) == doctest::Approx(1.0));
    CHECK(call1(OpKind::Arctanh, 0.5) == doctest::Approx(std::atanh(0.5)));
    CHECK(call1(OpKind::RecipEps, 1.0) == doctest::Approx(1.0 / (1.0 + kEpsilon)));
    CHECK(call1(OpKind::Abs, -4.0) == 4.0);
    CHECK(call1(OpKind::Square, -3.0) == 9.0);
    CHECK(call1(OpKind::Sqrt, 9.0) == 3.0);
    CHECK(call1(OpKind::LnAbsEps, -1.0) == doctest::Approx(std::log(1.0 + kEpsilon)));
    CHECK(call1(OpKind::Log10AbsEps, 100.0) ==
          doctest::Approx(std::log10(100.0 + kEpsilon)));
    CHECK(call1(OpKind::Relu, -2.0) == 0.0);
    CHECK(call1(OpKind::Relu, 2.0) == 2.0);
    CHECK(call1(OpKind::NegRelu, -2.0) == -2.0);
    CHECK(call1(OpKind::NegRelu, 2.0) == 0.0);
}

TEST_CASE("binary evaluation fixtures") {
    CHECK(call2(OpKind::Add, 2.0, 3.0) == 5.0);
    CHECK(call2(OpKind::Sub, 2.0, 3.0) == -1.0);
    CHECK(call2(OpKind::Mul, 2.0, 3.0) == 6.0);
    CHECK(call2(OpKind::DivEps, 1.0, 2.0) == doctest::Approx(1.0 / (2.0 + kEpsilon)));
    CHECK(call2(OpKind::DivSqrt1p, 3.0, 0.0) == doctest::Approx(3.0));
    CHECK(call2(OpKind::DivSqrt1p, 2.0, 2.0) ==
          doctest::Approx(2.0 / std::sqrt(5.0)));
    CHECK(call2(OpKind::Max, 2.0, 3.0) == 3.0);
    CHECK(call2(OpKind::Min, 2.0, 3.0) == 2.0);
}

TEST_CASE("epsilon-guarded operations stay finite at their raw singularity") {
    CHECK(std::isfinite(call1(OpKind::RecipEps, 0.0)));
    CHECK(std::isfinite(call1(OpKind::LnAbsEps, 0.0)));
    CHECK(std::isfinite(call1(OpKind::Log10AbsEps, 0.0)));
    CHECK(std::isfinite(call1(OpKind::Arctanh, 1.0)));
    CHECK(std::isfinite(call1(OpKind::Arctanh, -5.0)));
    CHECK(std::isfinite(call2(OpKind::DivEps, 1.0, 0.0)));
    CHECK(std::isfinite(call2(OpKind::DivSqrt1p, 1.0, 0.0)));
    // sqrt of a negative is NaN by design: that propagates, nothing traps
    CHECK(std::isnan(call1(OpKind::Sqrt, -1.0)));
}

TEST_CASE("Bessel functions match frozen reference values to 5e-7 relative") {
    struct Row {
        double x, i0, i1, i0e, i1e;
    };
    // scipy.special i0/i1/i0e/i1e
    const Row rows[] = {
        {0.0, 1.0, 0.0, 1.0, 0.0},
        {0.5, 1.0634833707e+00, 2.5789430539e-01, 6.4503527045e-01, 1.5642080318e-01},
        {1.0, 1.2660658778e+00, 5.6515910399e-01, 4.6575960759e-01, 2.0791041535e-01},
        {2.0, 2.2795853023e+00, 1.5906368546e+00, 3.0850832255e-01, 2.1526928925e-01},
        {3.75, 9.1189458608e+00, 7.7800152298e+00, 2.1445705123e-01, 1.8296842093e-01},
        {5.0, 2.7239871824e+01, 2.4335642142e+01, 1.8354081261e-01, 1.6397226694e-01},
        {10.0, 2.8157166285e+03, 2.6709883037e+03, 1.2783333716e-01, 1.2126268138e-01},
        {20.0, 4.3558282560e+07, 4.2454973385e+07, 8.9780311885e-02, 8.7506222183e-02},
        {50.0, 2.9325537838e+20, 2.9030785901e+20, 5.6561626647e-02, 5.5993123893e-02},
        {-1.5, 1.6467231898e+00, -9.8166642858e-01, 3.6743360905e-01, -2.1903938742e-01},
        {-4.0, 1.1301921952e+01, -9.7594651537e+00, 2.0700192122e-01, -1.7875083950e-01},
    };
    const double tol = 5e-7;
    for (const Row& r : rows) {
        CAPTURE(r.x);
        CHECK(bessel_i0(r.x) == doctest::Approx(r.i0).epsilon(tol));
        CHECK(bessel_i0e(r.x) == doctest::Approx(r.i0e).epsilon(tol));
        if (r.i1 == 0.0) {
            CHECK(bessel_i1(r.x) == 0.0);
            CHECK(bessel_i1e(r.x) == 0.0);
        } else {
            CHECK(bessel_i1(r.x) == doctest::Approx(r.i1).epsilon(tol));
            CHECK(bessel_i1e(r.x) == doctest::Approx(r.i1e).epsilon(tol));
        }
    }
}

TEST_CASE("Bessel symmetry: I0 even, I1 odd") {
    for (double x : {0.1, 0.9, 2.5, 3.75, 7.0, 30.0}) {
        CHECK(bessel_i0(-x) == bessel_i0(x));
        CHECK(bessel_i1(-x) == -bessel_i1(x));
        CHECK(bessel_i0e(-x) == bessel_i0e(x));
        CHECK(bessel_i1e(-x) == -bessel_i1e(x));
    }
}

TEST_CASE("analytic gradients match central differences at 100 random points") {
    std::mt19937_64 rng(20260826);
    std::uniform_real_distribution<double> u(-4.0, 4.0);
    const double h = 1e-5;
    int checked = 0;
    for (OpKind k : catalog()) {
        int done = 0;
        while (done < 100) {
            std::vector<double> args(arity(k));
            for (double& a : args) a = u(rng);
            if (k == OpKind::Sqrt) args[0] = std::fabs(args[0]);
            if (near_singularity(k, args)) continue;
            const auto g = grad(k, args);
            for (std::size_t slot = 0; slot < args.size(); ++slot) {
                const double num = fd(k, args, slot, h);
                const double scale =
                    std::max({1.0, std::fabs(num), std::fabs(g[slot])});
                CAPTURE(op_id(k));
                CAPTURE(args[0]);
                CHECK(std::fabs(g[slot] - num) / scale < 1e-4);
            }
            ++done;
            ++checked;
        }
    }
    CHECK(checked == 100 * kNumOps);
}

TEST_CASE("declared subgradient conventions at the kinks") {
    CHECK(grad(OpKind::Abs, {0.0})[0] == 0.0);
    CHECK(grad(OpKind::Relu, {0.0})[0] == 1.0);
    CHECK(grad(OpKind::NegRelu, {0.0})[0] == 1.0);
    // ties route the full derivative to the first argument
    auto gmax = grad(OpKind::Max, {1.5, 1.5});
    CHECK(gmax[0] == 1.0);
    CHECK(gmax[1] == 0.0);
    auto gmin = grad(OpKind::Min, {-2.0, -2.0});
    CHECK(gmin[0] == 1.0);
    CHECK(gmin[1] == 0.0);
}

TEST_CASE("derivative identities: I1 is I0's derivative, d_tanh is tanh's") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    for (int i = 0; i < 20; ++i) {
        const double x = u(rng);
        CHECK(grad(OpKind::BesselI0, {x})[0] ==
              doctest::Approx(bessel_i1(x)).epsilon(1e-6));
        const double t = std::tanh(x);
        CHECK(call1(OpKind::DTanh, x) == doctest::Approx(1.0 - t * t).epsilon(1e-6));
        const double s = call1(OpKind::Sigmoid, x);
        CHECK(call1(OpKind::DSigmoid, x) ==
              doctest::Approx(s * (1.0 - s)).epsilon(1e-6));
    }
    // I1'(0) = 1/2 exactly by the declared limit
    CHECK(grad(OpKind::BesselI1, {0.0})[0] == 0.5);
}

TEST_CASE("evaluation is deterministic") {
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> u(-5.0, 5.0);
    for (OpKind k : catalog()) {
        std::vector<double> args(arity(k));
        for (double& a : args) a = u(rng);
        const double first = eval_op(k, args);
        const double again = eval_op(k, args);
        if (std::isnan(first)) {
            CHECK(std::isnan(again));
        } else {
            CHECK(first == again);
        }
    }
}
