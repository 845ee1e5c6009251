#pragma once

// Model families and per-sequence evaluation: builds the dynamical system for
// a SequenceSample and evaluates cost and reduced gradient on it.

#include <cmath>
#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "ipcal/adjoint.hpp"
#include "ipcal/dynamics.hpp"
#include "ipcal/error.hpp"
#include "ipcal/force_models.hpp"
#include "ipcal/nn_core.hpp"
#include "ipcal/sequence.hpp"

namespace ipcal {

enum class ModelFamily { traffic_lwr_log, traffic_lwr_linear, traffic_nn, crowd_sf, crowd_nn };

inline std::string_view to_string(ModelFamily f) {
    switch (f) {
    case ModelFamily::traffic_lwr_log: return "traffic_lwr_log";
    case ModelFamily::traffic_lwr_linear: return "traffic_lwr_linear";
    case ModelFamily::traffic_nn: return "traffic_nn";
    case ModelFamily::crowd_sf: return "crowd_sf";
    case ModelFamily::crowd_nn: return "crowd_nn";
    }
    return "?";
}

inline ModelFamily parse_model_family(std::string_view s) {
    for (auto f : {ModelFamily::traffic_lwr_log, ModelFamily::traffic_lwr_linear, ModelFamily::traffic_nn,
                   ModelFamily::crowd_sf, ModelFamily::crowd_nn}) {
        if (to_string(f) == s) return f;
    }
    throw ValidationError("unknown model family '" + std::string(s) + "'");
}

inline bool is_traffic(ModelFamily f) {
    return f == ModelFamily::traffic_lwr_log || f == ModelFamily::traffic_lwr_linear || f == ModelFamily::traffic_nn;
}

inline ModelKind kind_of(ModelFamily f) {
    switch (f) {
    case ModelFamily::traffic_lwr_log:
    case ModelFamily::traffic_lwr_linear: return ModelKind::traffic_lwr;
    case ModelFamily::traffic_nn: return ModelKind::traffic_nn;
    case ModelFamily::crowd_sf: return ModelKind::crowd_sf;
    case ModelFamily::crowd_nn: return ModelKind::crowd_nn;
    }
    return ModelKind::traffic_lwr;
}

/// Everything needed to turn a parameter vector into dynamics, apart from
/// the per-sequence data.
struct ModelSpec {
    ModelFamily family = ModelFamily::traffic_lwr_linear;
    std::vector<std::size_t> traffic_hidden{4};
    CrowdNets crowd_nets;
    SocialForceParams fixed;
    double l_min = kDefaultMinCarLength;
    std::shared_ptr<const WallGeometry> walls = std::make_shared<const WallGeometry>();
    double sim_dt = 0.002;

    NetSpec traffic_net() const {
        std::vector<std::size_t> sizes{1};
        sizes.insert(sizes.end(), traffic_hidden.begin(), traffic_hidden.end());
        sizes.push_back(1);
        return NetSpec(sizes);
    }

    std::size_t param_count() const {
        switch (family) {
        case ModelFamily::traffic_lwr_log:
        case ModelFamily::traffic_lwr_linear: return 2;
        case ModelFamily::traffic_nn: return 1 + traffic_net().param_count();
        case ModelFamily::crowd_sf: return 3;
        case ModelFamily::crowd_nn: return crowd_nets.interaction.param_count() + crowd_nets.wall.param_count();
        }
        return 0;
    }

    std::vector<std::string> param_names() const {
        std::vector<std::string> names;
        switch (family) {
        case ModelFamily::traffic_lwr_log:
        case ModelFamily::traffic_lwr_linear: return {"v0", "L"};
        case ModelFamily::traffic_nn:
            names.push_back("v0");
            for (std::size_t i = 0; i < traffic_net().param_count(); ++i) names.push_back("w" + std::to_string(i));
            return names;
        case ModelFamily::crowd_sf: return {"A", "k", "kappa"};
        case ModelFamily::crowd_nn:
            for (std::size_t i = 0; i < crowd_nets.interaction.param_count(); ++i) {
                names.push_back("int_w" + std::to_string(i));
            }
            for (std::size_t i = 0; i < crowd_nets.wall.param_count(); ++i) names.push_back("wall_w" + std::to_string(i));
            return names;
        }
        return names;
    }
};

using AnySystem = std::variant<TrafficSystem, CrowdSystem>;

inline AnySystem make_system(const ModelSpec& model, const SequenceSample& seq) {
    const std::size_t n = seq.agents();
    switch (model.family) {
    case ModelFamily::traffic_lwr_log: return TrafficSystem(n, TrafficForce::lwr_log);
    case ModelFamily::traffic_lwr_linear: return TrafficSystem(n, TrafficForce::lwr_linear);
    case ModelFamily::traffic_nn: return TrafficSystem(n, TrafficForce::nn, model.traffic_net());
    case ModelFamily::crowd_sf:
        return CrowdSystem(n, CrowdForce::social, seq.destinations, model.walls, model.fixed, model.crowd_nets);
    case ModelFamily::crowd_nn:
        return CrowdSystem(n, CrowdForce::nn, seq.destinations, model.walls, model.fixed, model.crowd_nets);
    }
    throw ValidationError("unknown model family");
}

/// Euler steps per data interval, dt_data / sim_dt, which must be integral.
inline std::size_t stride_for(const ModelSpec& model, const SequenceSample& seq) {
    const double dt_data = detail::data_spacing(seq.ref);
    if (!(model.sim_dt > 0.0)) throw ValidationError("simulation time step must be positive");
    const double ratio = dt_data / model.sim_dt;
    const double rounded = std::round(ratio);
    if (rounded < 1.0 || std::abs(ratio - rounded) > 1e-6 * rounded) {
        throw ValidationError("data spacing " + std::to_string(dt_data) + " is not a multiple of the simulation step " +
                              std::to_string(model.sim_dt));
    }
    return static_cast<std::size_t>(rounded);
}

inline void check_sample(const ModelSpec& model, const SequenceSample& seq) {
    const bool traffic = is_traffic(model.family);
    if (traffic != (seq.ref.layout.dim == 1 && !seq.ref.layout.second_order)) {
        throw ValidationError("sequence '" + seq.source + "' does not match the " +
                              std::string(to_string(model.family)) + " state layout");
    }
}

inline Trajectory simulate_sequence(const ModelSpec& model, const SequenceSample& seq, std::span<const double> u) {
    check_sample(model, seq);
    const std::size_t stride = stride_for(model, seq);
    const SimConfig cfg{model.sim_dt, (seq.ref.nodes() - 1) * stride, kind_of(model.family), seq.ref.times.front()};
    return std::visit(
        [&](const auto& sys) {
            Trajectory t = euler_integrate(sys, u, seq.initial_state, cfg);
            t.agent_ids = seq.ref.agent_ids;
            return t;
        },
        make_system(model, seq));
}

inline double sequence_cost(const ModelSpec& model, const SequenceSample& seq, std::span<const double> u) {
    check_sample(model, seq);
    const std::size_t stride = stride_for(model, seq);
    return std::visit(
        [&](const auto& sys) { return simulate_cost(sys, u, seq.initial_state, seq.ref, model.sim_dt, stride); },
        make_system(model, seq));
}

inline GradientResult sequence_gradient(const ModelSpec& model, const SequenceSample& seq, std::span<const double> u,
                                        double state_jacobian_scale = 1.0) {
    check_sample(model, seq);
    const std::size_t stride = stride_for(model, seq);
    auto sys = make_system(model, seq);
    return std::visit(
        [&](auto& s) {
            s.state_jacobian_scale = state_jacobian_scale;
            return cost_and_gradient(s, u, seq.initial_state, seq.ref, model.sim_dt, stride);
        },
        sys);
}

/// Central differences of the sequence cost with the forward map run in
/// scalar Real.
template <class Real = double>
std::vector<double> sequence_fd_gradient(const ModelSpec& model, const SequenceSample& seq, std::span<const double> u,
                                         double step) {
    check_sample(model, seq);
    const std::size_t stride = stride_for(model, seq);
    return std::visit(
        [&](const auto& sys) {
            return fd_gradient<Real>(sys, u, seq.initial_state, seq.ref, model.sim_dt, stride, step);
        },
        make_system(model, seq));
}

} // namespace ipcal
