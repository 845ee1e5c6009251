#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "ipcal/nn_core.hpp"
#include "ipcal/precision.hpp"

using namespace ipcal;

namespace {

double rel_err(double a, double b) {
    const double s = std::max(std::abs(a), std::abs(b));
    return s == 0.0 ? 0.0 : std::abs(a - b) / s;
}

NetParams random_net(std::mt19937_64& rng, std::vector<std::size_t> sizes, double scale = 1.0) {
    NetSpec spec(std::move(sizes));
    std::uniform_real_distribution<double> w(-scale, scale);
    std::vector<double> v(spec.param_count());
    for (double& x : v) x = w(rng);
    return {spec, v};
}

std::vector<std::size_t> random_shape(std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> width(1, 5), depth(2, 4);
    std::vector<std::size_t> s(depth(rng));
    for (auto& n : s) n = width(rng);
    return s;
}

// Network output in 113-bit arithmetic; the oracle side of every
// finite-difference check below.
std::vector<Quad> quad_eval(const NetSpec& spec, const std::vector<Quad>& w, const std::vector<Quad>& x) {
    BasicNetEvalTrace<Quad> trace;
    return detail::forward<Quad>(spec, w, x, trace);
}

std::vector<Quad> to_quad(std::span<const double> v) { return {v.begin(), v.end()}; }

} // namespace

TEST(Softplus, ReferenceValues) {
    EXPECT_NEAR(softplus(0.0), std::log(2.0), 1e-15);
    EXPECT_NEAR(softplus(1000.0), 1000.0, 1000.0 * 1e-12);
    EXPECT_NEAR(softplus(1.0), 1.3132617, 5e-8);
    EXPECT_NEAR(softplus(1.0), std::log1p(std::exp(1.0)), 1e-15);
}

TEST(Softplus, PositiveAndIncreasing) {
    double prev = softplus(-800.0);
    EXPECT_GE(prev, 0.0);
    for (double x = -799.0; x <= 800.0; x += 1.0) {
        const double v = softplus(x);
        EXPECT_TRUE(std::isfinite(v));
        EXPECT_GE(v, prev);
        prev = v;
    }
    EXPECT_GT(softplus(-30.0), 0.0);
}

TEST(NetSpec, CountsBiasWeights) {
    EXPECT_EQ(NetSpec({1, 1, 1}).param_count(), 4u);
    EXPECT_EQ(NetSpec({4, 4, 2}).param_count(), 30u);
    EXPECT_EQ(NetSpec({1, 10, 1}).param_count(), 31u);
    EXPECT_THROW(NetSpec({3}), ValidationError);
    EXPECT_THROW(NetSpec({3, 0, 1}), ValidationError);
}

TEST(NetParams, RejectsBadValues) {
    EXPECT_THROW(NetParams(NetSpec({1, 1, 1}), std::vector<double>(3, 0.0)), ValidationError);
    EXPECT_THROW(NetParams(NetSpec({1, 1, 1}), std::vector<double>{0, 0, 0, std::nan("")}), ValidationError);
}

TEST(Forward, ZeroWeightsGiveZeroOutput) {
    const auto p = NetParams::zeros(NetSpec({4, 5, 2}));
    const double x[4] = {3.0, -1.0, 0.5, 7.0};
    const auto [out, trace] = forward(p, x);
    ASSERT_EQ(out.size(), 2u);
    EXPECT_EQ(out[0], 0.0);
    EXPECT_EQ(out[1], 0.0);
}

TEST(Forward, HandEvaluatedTinyNet) {
    const NetParams p(NetSpec({1, 1, 1}), {1.0, 1.0, 1.0, 1.0});
    const double x = 0.0;
    const auto [out, trace] = forward(p, std::span<const double>(&x, 1));
    const double hidden = std::log1p(std::exp(1.0));
    EXPECT_NEAR(trace.activations[1][1], 1.3132617, 5e-8);
    EXPECT_NEAR(out[0], 1.0 + hidden, 1e-15);
    EXPECT_NEAR(out[0], 2.3132617, 5e-8);
}

TEST(Forward, TraceCarriesBiasUnits) {
    std::mt19937_64 rng(1);
    const auto p = random_net(rng, {4, 5, 3, 2});
    const double x[4] = {0.1, 0.2, 0.3, 0.4};
    const auto [out, trace] = forward(p, x);
    ASSERT_EQ(out.size(), 2u);
    ASSERT_EQ(trace.activations.size(), 4u);
    for (std::size_t l = 0; l + 1 < trace.activations.size(); ++l) EXPECT_EQ(trace.activations[l][0], 1.0);
}

TEST(Forward, RejectsWrongInputLength) {
    const auto p = NetParams::zeros(NetSpec({4, 5, 2}));
    const double x[3] = {0, 0, 0};
    EXPECT_THROW(forward(p, x), ValidationError);
}

TEST(Forward, BitIdenticalOnRepeat) {
    std::mt19937_64 rng(2);
    const auto p = random_net(rng, {4, 4, 2});
    const double x[4] = {0.3, -0.7, 1.1, 0.05};
    const auto a = forward(p, x).first;
    const auto b = forward(p, x).first;
    EXPECT_EQ(a, b);
}

TEST(JacInput, ZeroWeightsGiveZeroMatrix) {
    const auto p = NetParams::zeros(NetSpec({3, 4, 2}));
    const double x[3] = {1, 2, 3};
    const auto trace = forward(p, x).second;
    for (double v : jac_input(p, trace)) EXPECT_EQ(v, 0.0);
}

TEST(JacInput, HandEvaluatedTinyNet) {
    const NetParams p(NetSpec({1, 1, 1}), {1.0, 1.0, 1.0, 1.0});
    const double x = 0.0;
    const auto trace = forward(p, std::span<const double>(&x, 1)).second;
    const auto j = jac_input(p, trace);
    ASSERT_EQ(j.size(), 1u);
    EXPECT_NEAR(j[0], 1.0 / (1.0 + std::exp(-1.0)), 1e-15);
    EXPECT_NEAR(j[0], 0.7310586, 5e-8);
}

TEST(JacInput, RejectsStaleTrace) {
    std::mt19937_64 rng(3);
    const auto p = random_net(rng, {2, 3, 1});
    const auto q = random_net(rng, {3, 3, 1});
    const double x[3] = {0, 0, 0};
    const auto trace = forward(q, x).second;
    EXPECT_THROW(jac_input(p, trace), ValidationError);
}

TEST(JacInput, MatchesCentralDifferences) {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> in(-3.0, 3.0);
    const Quad h = 1e-6;
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const auto p = random_net(rng, random_shape(rng));
        const auto& spec = p.spec();
        std::vector<double> x(spec.inputs());
        for (double& v : x) v = in(rng);
        const auto j = jac_input(p, forward(p, x).second);
        const auto w = to_quad(p.values());
        for (std::size_t c = 0; c < spec.inputs(); ++c) {
            auto xp = to_quad(x), xm = to_quad(x);
            xp[c] += h;
            xm[c] -= h;
            const auto fp = quad_eval(spec, w, xp), fm = quad_eval(spec, w, xm);
            for (std::size_t r = 0; r < spec.outputs(); ++r) {
                const double fd = static_cast<double>((fp[r] - fm[r]) / (2 * h));
                worst = std::max(worst, rel_err(j[r * spec.inputs() + c], fd));
            }
        }
    }
    EXPECT_LE(worst, 1e-6);
}

TEST(GradParams, ZeroCotangentGivesZero) {
    std::mt19937_64 rng(5);
    const auto p = random_net(rng, {2, 3, 2});
    const double x[2] = {0.5, -0.5};
    const auto trace = forward(p, x).second;
    const double cot[2] = {0.0, 0.0};
    for (double v : grad_params_transposed(p, trace, cot)) EXPECT_EQ(v, 0.0);
}

TEST(GradParams, HandEvaluatedTinyNet) {
    const NetParams p(NetSpec({1, 1, 1}), {1.0, 1.0, 1.0, 1.0});
    const double x = 0.0, cot = 1.0;
    const auto trace = forward(p, std::span<const double>(&x, 1)).second;
    const auto g = grad_params_transposed(p, trace, std::span<const double>(&cot, 1));
    ASSERT_EQ(g.size(), p.spec().param_count());
    const double a = std::log1p(std::exp(1.0));
    const double s = 1.0 / (1.0 + std::exp(-1.0));
    // Layer 0: (bias, x) into the hidden neuron; layer 1: (bias, hidden) into the output.
    EXPECT_NEAR(g[p.spec().weight_index(0, 0, 0)], s, 1e-15);
    EXPECT_NEAR(g[p.spec().weight_index(0, 0, 1)], 0.0, 1e-15);
    EXPECT_NEAR(g[p.spec().weight_index(1, 0, 0)], 1.0, 1e-15);
    EXPECT_NEAR(g[p.spec().weight_index(1, 0, 1)], a, 1e-15);
    EXPECT_NEAR(g[p.spec().weight_index(1, 0, 1)], 1.3132617, 5e-8);
}

TEST(GradParams, RejectsWrongCotangentLength) {
    std::mt19937_64 rng(6);
    const auto p = random_net(rng, {2, 3, 2});
    const double x[2] = {0.5, -0.5};
    const auto trace = forward(p, x).second;
    const double cot[1] = {1.0};
    EXPECT_THROW(grad_params_transposed(p, trace, cot), ValidationError);
}

TEST(GradParams, DirectionalDerivative) {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> in(-3.0, 3.0), unit(-1.0, 1.0);
    const Quad eps = 1e-6;
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const auto p = random_net(rng, random_shape(rng));
        const auto& spec = p.spec();
        std::vector<double> x(spec.inputs()), cot(spec.outputs()), dir(spec.param_count());
        for (double& v : x) v = in(rng);
        for (double& v : cot) v = unit(rng);
        for (double& v : dir) v = unit(rng);
        const auto g = grad_params_transposed(p, forward(p, x).second, cot);
        double analytic = 0.0;
        for (std::size_t k = 0; k < g.size(); ++k) analytic += g[k] * dir[k];

        // Symmetric difference along the direction; the one-sided quotient
        // carries an O(eps) bias that is not a property of the backward pass.
        auto wp = to_quad(p.values()), wm = wp;
        for (std::size_t k = 0; k < wp.size(); ++k) {
            wp[k] += eps * Quad(dir[k]);
            wm[k] -= eps * Quad(dir[k]);
        }
        const auto f1 = quad_eval(spec, wp, to_quad(x));
        const auto f0 = quad_eval(spec, wm, to_quad(x));
        Quad fd = 0;
        for (std::size_t r = 0; r < cot.size(); ++r) fd += Quad(cot[r]) * (f1[r] - f0[r]) / (2 * eps);
        worst = std::max(worst, rel_err(analytic, static_cast<double>(fd)));
    }
    EXPECT_LE(worst, 1e-5);
}

TEST(GradParams, MatchesCentralDifferencesPerWeight) {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> in(-3.0, 3.0), unit(-1.0, 1.0);
    const Quad h = 1e-6;
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const auto p = random_net(rng, random_shape(rng));
        const auto& spec = p.spec();
        std::vector<double> x(spec.inputs()), cot(spec.outputs());
        for (double& v : x) v = in(rng);
        for (double& v : cot) v = unit(rng);
        const auto g = grad_params_transposed(p, forward(p, x).second, cot);
        const auto xq = to_quad(x);
        for (std::size_t k = 0; k < g.size(); ++k) {
            auto wp = to_quad(p.values()), wm = wp;
            wp[k] += h;
            wm[k] -= h;
            const auto fp = quad_eval(spec, wp, xq), fm = quad_eval(spec, wm, xq);
            Quad fd = 0;
            for (std::size_t r = 0; r < cot.size(); ++r) fd += Quad(cot[r]) * (fp[r] - fm[r]) / (2 * h);
            worst = std::max(worst, rel_err(g[k], static_cast<double>(fd)));
        }
    }
    EXPECT_LE(worst, 1e-5);
}

// Softplus is 1-Lipschitz, so the product of the weight-matrix spectral norms
// (bounded here by Frobenius norms, bias columns excluded) bounds the
// Lipschitz constant of the whole network.
TEST(Forward, GlobalLipschitzBound) {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> pt(-100.0, 100.0);
    for (const auto& sizes : {std::vector<std::size_t>{1, 4, 1}, std::vector<std::size_t>{4, 4, 2},
                              std::vector<std::size_t>{1, 10, 1}}) {
        const auto p = random_net(rng, sizes);
        const auto& spec = p.spec();
        double C = 1.0;
        for (std::size_t l = 0; l + 1 < spec.depth(); ++l) {
            double f2 = 0.0;
            for (std::size_t dst = 0; dst < sizes[l + 1]; ++dst) {
                for (std::size_t src = 1; src <= sizes[l]; ++src) f2 += std::pow(p.weight(l, dst, src), 2);
            }
            C *= std::sqrt(f2);
        }
        for (int s = 0; s < 2000; ++s) {
            std::vector<double> x(spec.inputs()), y(spec.inputs());
            for (double& v : x) v = pt(rng);
            for (double& v : y) v = pt(rng);
            const auto fx = forward(p, x).first, fy = forward(p, y).first;
            double num = 0.0, den = 0.0;
            for (std::size_t r = 0; r < fx.size(); ++r) num += std::pow(fx[r] - fy[r], 2);
            for (std::size_t c = 0; c < x.size(); ++c) den += std::pow(x[c] - y[c], 2);
            EXPECT_LE(std::sqrt(num), C * std::sqrt(den) * (1.0 + 1e-12));
        }
    }
}
