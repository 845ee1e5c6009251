#pragma once

// Adjoint-versus-finite-difference comparison on random small instances of
// every model family.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "ipcal/dynamics.hpp"
#include "ipcal/error.hpp"
#include "ipcal/model.hpp"
#include "ipcal/precision.hpp"
#include "ipcal/sequence.hpp"

namespace ipcal {

struct GradcheckOptions {
    std::size_t instances = 20; // per family
    std::size_t max_agents = 4;
    std::size_t max_steps = 25; // data intervals
    double fd_step = 1e-6;
    double tolerance = 1e-5;
    double traffic_dt_data = 0.2;
    double crowd_dt_data = 0.04;
    std::size_t stride = 1; // Euler steps per data interval
    /// Run the finite-difference forward maps in 113-bit arithmetic. Double
    /// precision cannot resolve components driven by saturated neurons.
    bool quad_reference = true;
    std::uint64_t seed = 0;
    /// Scales ∂F/∂y inside the adjoint sweep only; 1 leaves it exact.
    double state_jacobian_scale = 1.0;
};

struct GradcheckFamily {
    std::string name;
    ModelSpec model;
};

/// LWR log/linear, traffic NN with 2, 4 and 10 hidden neurons, crowd SF and
/// crowd NN 4-4-2.
inline std::vector<GradcheckFamily> gradcheck_families() {
    std::vector<GradcheckFamily> out;
    auto add = [&](std::string name, ModelFamily f, std::vector<std::size_t> hidden = {4}) {
        ModelSpec m;
        m.family = f;
        m.traffic_hidden = std::move(hidden);
        out.push_back({std::move(name), std::move(m)});
    };
    add("traffic_lwr_log", ModelFamily::traffic_lwr_log);
    add("traffic_lwr_linear", ModelFamily::traffic_lwr_linear);
    add("traffic_nn2", ModelFamily::traffic_nn, {2});
    add("traffic_nn4", ModelFamily::traffic_nn, {4});
    add("traffic_nn10", ModelFamily::traffic_nn, {10});
    add("crowd_sf", ModelFamily::crowd_sf);
    add("crowd_nn", ModelFamily::crowd_nn);
    return out;
}

struct GradcheckInstance {
    ModelSpec model;
    SequenceSample seq;
    std::vector<double> params;
};

namespace detail {

template <class Rng>
std::size_t uniform_count(Rng& rng, std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, std::max(lo, hi))(rng);
}

template <class Rng>
std::vector<double> random_params(const ModelSpec& model, Rng& rng) {
    std::uniform_real_distribution<double> w(-1.0, 1.0);
    std::vector<double> u;
    switch (model.family) {
    case ModelFamily::traffic_lwr_log:
    case ModelFamily::traffic_lwr_linear:
        return {std::uniform_real_distribution<double>(15.0, 35.0)(rng),
                std::uniform_real_distribution<double>(3.0, 7.0)(rng)};
    case ModelFamily::traffic_nn:
        u.push_back(std::uniform_real_distribution<double>(15.0, 35.0)(rng));
        for (std::size_t i = 1; i < model.param_count(); ++i) u.push_back(w(rng));
        return u;
    case ModelFamily::crowd_sf:
        return {std::uniform_real_distribution<double>(0.5, 2.0)(rng),
                std::uniform_real_distribution<double>(5.0, 35.0)(rng),
                std::uniform_real_distribution<double>(1.0, 10.0)(rng)};
    case ModelFamily::crowd_nn:
        for (std::size_t i = 0; i < model.param_count(); ++i) u.push_back(w(rng));
        return u;
    }
    return u;
}

} // namespace detail

/// Random initial state, random parameters, and a reference produced by a
/// different random parameter vector plus Gaussian position noise, so that
/// the cost is well away from its minimum. Crowd instances are packed
/// tightly and carry a few nearby wall points so that the contact terms
/// are active.
template <class Rng>
GradcheckInstance random_gradcheck_instance(const ModelSpec& family, const GradcheckOptions& opt, Rng& rng) {
    const bool traffic = is_traffic(family.family);
    const std::size_t max_agents = std::max<std::size_t>(2, opt.max_agents);
    const std::size_t max_steps = std::max<std::size_t>(2, opt.max_steps);
    for (int attempt = 0; attempt < 50; ++attempt) {
        GradcheckInstance inst;
        inst.model = family;
        const double dt_data = traffic ? opt.traffic_dt_data : opt.crowd_dt_data;
        inst.model.sim_dt = dt_data / static_cast<double>(opt.stride);
        const std::size_t n = detail::uniform_count(rng, 2, max_agents);
        const std::size_t steps = detail::uniform_count(rng, 2, max_steps);
        SequenceSample& seq = inst.seq;
        seq.source = "random";
        seq.ref.layout = traffic ? StateLayout{n, 1, false} : StateLayout{n, 2, true};
        seq.ref.dt = dt_data;
        for (std::size_t k = 0; k <= steps; ++k) seq.ref.times.push_back(static_cast<double>(k) * dt_data);

        std::normal_distribution<double> noise(0.0, traffic ? 0.5 : 0.05);
        if (traffic) {
            std::uniform_real_distribution<double> gap(8.0, 25.0);
            double x = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                seq.initial_state.push_back(x);
                x += gap(rng);
            }
        } else {
            std::uniform_real_distribution<double> p(-0.6, 0.6), v(-1.2, 1.2), d(-6.0, 6.0);
            CrowdState cs;
            for (std::size_t i = 0; i < n; ++i) {
                Vec2 c;
                for (int t = 0; t < 100; ++t) {
                    c = {p(rng), p(rng)};
                    bool clear = true;
                    for (const auto& q : cs.positions) clear = clear && norm(c - q) > 0.2;
                    if (clear) break;
                }
                cs.positions.push_back(c);
                cs.velocities.push_back({v(rng), v(rng)});
                cs.destinations.push_back({d(rng), d(rng)});
            }
            seq.destinations = cs.destinations;
            seq.initial_state = flatten(cs);
            auto walls = std::make_shared<WallGeometry>();
            std::uniform_real_distribution<double> angle(0.0, 6.283185307179586);
            std::uniform_real_distribution<double> wp(-0.8, 0.8);
            for (int k = 0; k < 4; ++k) {
                const double a = angle(rng);
                walls->points.push_back({{wp(rng), wp(rng)}, {std::cos(a), std::sin(a)}});
            }
            inst.model.walls = walls;
        }
        inst.params = detail::random_params(inst.model, rng);
        const auto ref_params = detail::random_params(inst.model, rng);
        try {
            seq.ref.states.assign(steps + 1, std::vector<double>(seq.ref.layout.size(), 0.0));
            const Trajectory sim = subsample(simulate_sequence(inst.model, seq, ref_params), opt.stride);
            seq.ref.states = sim.states;
            for (auto& s : seq.ref.states) {
                for (std::size_t k = 0; k < seq.ref.layout.position_size(); ++k) s[k] += noise(rng);
            }
            // The instance itself must also integrate cleanly.
            sequence_cost(inst.model, seq, inst.params);
            return inst;
        } catch (const NumericalError&) {
        }
    }
    throw NumericalError("could not draw a well-posed " + std::string(to_string(family.family)) + " instance");
}

struct GradcheckRow {
    std::string family;
    std::size_t instance = 0;
    std::size_t param_index = 0;
    double adjoint_grad = 0.0;
    double fd_grad = 0.0;
    double rel_err = 0.0;
};

/// |a − f| / max(|a|, |f|); zero when both vanish.
inline double relative_error(double a, double f) {
    const double scale = std::max(std::abs(a), std::abs(f));
    if (scale == 0.0) return 0.0;
    return std::abs(a - f) / scale;
}

/// One row per parameter for each instance; deterministic in opt.seed.
inline std::vector<GradcheckRow> run_gradcheck(std::span<const GradcheckFamily> families, const GradcheckOptions& opt) {
    std::vector<GradcheckRow> rows;
    for (std::size_t f = 0; f < families.size(); ++f) {
        std::seed_seq seed{opt.seed, static_cast<std::uint64_t>(f)};
        std::mt19937_64 rng(seed);
        for (std::size_t i = 0; i < opt.instances; ++i) {
            const auto inst = random_gradcheck_instance(families[f].model, opt, rng);
            const auto adj = sequence_gradient(inst.model, inst.seq, inst.params, opt.state_jacobian_scale);
            const auto fd = opt.quad_reference
                                ? sequence_fd_gradient<Quad>(inst.model, inst.seq, inst.params, opt.fd_step)
                                : sequence_fd_gradient<double>(inst.model, inst.seq, inst.params, opt.fd_step);
            for (std::size_t k = 0; k < inst.params.size(); ++k) {
                rows.push_back({families[f].name, i, k, adj.grad[k], fd[k], relative_error(adj.grad[k], fd[k])});
            }
        }
    }
    return rows;
}

} // namespace ipcal
