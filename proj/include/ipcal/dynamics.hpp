#pragma once

// Forward particle systems (first-order follower-leader traffic, second-order
// crowd) and the explicit Euler integrator.
//
// A DynamicalSystem maps a flattened state y and parameter vector u to
// dy/dt, and provides the vector-Jacobian product used by the adjoint:
//   vjp(y, u, c, y_bar, u_bar):  y_bar += (dF/dy)ᵀ c,  u_bar += (dF/du)ᵀ c.
// Empty y_bar or u_bar skips that half.
//
// State order: traffic (x_1..x_N); crowd (x_1, y_1, .., x_N, y_N, then the
// velocities in the same order).

#include <cmath>
#include <concepts>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include "ipcal/csv.hpp"
#include "ipcal/error.hpp"
#include "ipcal/force_models.hpp"
#include "ipcal/nn_core.hpp"
#include "ipcal/vec2.hpp"

namespace ipcal {

struct StateLayout {
    std::size_t agents = 0;
    std::size_t dim = 1;
    bool second_order = false;

    std::size_t position_size() const noexcept { return agents * dim; }
    std::size_t size() const noexcept { return second_order ? 2 * agents * dim : agents * dim; }
    friend bool operator==(const StateLayout&, const StateLayout&) = default;
};

/// Uniformly sampled states; states[0] is the initial condition.
struct Trajectory {
    StateLayout layout;
    std::vector<double> times;
    std::vector<std::vector<double>> states;
    std::vector<std::string> agent_ids;
    double dt = 0.0; // node spacing

    std::size_t nodes() const noexcept { return states.size(); }
    std::span<const double> positions(std::size_t n) const {
        return std::span<const double>(states[n]).first(layout.position_size());
    }
};

enum class ModelKind { traffic_lwr, traffic_nn, crowd_sf, crowd_nn };

struct SimConfig {
    double dt = 0.002;
    std::size_t steps = 1;
    ModelKind model = ModelKind::traffic_lwr;
    double t0 = 0.0;
};

template <class S>
concept DynamicalSystem = requires(const S& s, std::span<const double> y, std::span<const double> u,
                                   std::span<double> out) {
    { s.layout() } -> std::same_as<StateLayout>;
    { s.param_count() } -> std::convertible_to<std::size_t>;
    s.rhs(y, u, out);
    s.vjp(y, u, y, out, out);
};

// ---------------------------------------------------------------------------
// Traffic
// ---------------------------------------------------------------------------

enum class TrafficForce { lwr_log, lwr_linear, nn };

/// x_i' = W(x_{i+1} − x_i) for followers, x_N' = v0 for the leader.
/// Parameters: LWR (v0, L); NN (v0, network weights).
class TrafficSystem {
public:
    TrafficSystem(std::size_t agents, TrafficForce force, NetSpec net = {})
        : agents_(agents), force_(force), net_(std::move(net)) {
        if (agents_ == 0) throw ValidationError("traffic system needs at least one vehicle");
        if (force_ == TrafficForce::nn && (net_.depth() < 2 || net_.inputs() != 1 || net_.outputs() != 1)) {
            throw ValidationError("traffic network must map 1 input to 1 output");
        }
    }

    StateLayout layout() const noexcept { return {agents_, 1, false}; }
    TrafficForce force() const noexcept { return force_; }
    const NetSpec& net() const noexcept { return net_; }
    std::size_t param_count() const noexcept { return force_ == TrafficForce::nn ? 1 + net_.param_count() : 2; }
    std::size_t clamped_gaps() const noexcept { return diag_.clamped; }

    LwrParams lwr_params(std::span<const double> u) const {
        return {u[0], u[1], force_ == TrafficForce::lwr_log ? LwrVariant::log : LwrVariant::linear};
    }

    /// Generic in the scalar so finite differences can run in extended
    /// precision; the clamp counter only tracks double evaluations.
    template <class T>
    void rhs(std::span<const T> x, std::span<const T> u, std::span<T> out) const {
        check(x.size(), u.size());
        const std::size_t n = agents_;
        if (force_ == TrafficForce::nn) {
            BasicNetEvalTrace<T> trace;
            const auto w = u.subspan(1);
            for (std::size_t i = 0; i + 1 < n; ++i) {
                const T gap = x[i + 1] - x[i];
                out[i] = detail::forward<T>(net_, w, std::span<const T>(&gap, 1), trace)[0];
            }
        } else {
            const LwrVariant variant = force_ == TrafficForce::lwr_log ? LwrVariant::log : LwrVariant::linear;
            LwrDiagnostics* diag = std::is_same_v<T, double> ? &diag_ : nullptr;
            for (std::size_t i = 0; i + 1 < n; ++i) out[i] = lwr_velocity<T>(x[i + 1] - x[i], u[0], u[1], variant, diag);
        }
        out[n - 1] = u[0];
    }

    void vjp(std::span<const double> x, std::span<const double> u, std::span<const double> cot,
             std::span<double> x_bar, std::span<double> u_bar) const {
        check(x.size(), u.size());
        const std::size_t n = agents_;
        const bool want_x = !x_bar.empty();
        const bool want_u = !u_bar.empty();
        if (want_u) u_bar[0] += cot[n - 1];
        if (force_ == TrafficForce::nn) {
            NetEvalTrace trace;
            const auto w = u.subspan(1);
            auto w_bar = want_u ? u_bar.subspan(1) : std::span<double>{};
            for (std::size_t i = 0; i + 1 < n; ++i) {
                if (cot[i] == 0.0) continue;
                const double gap = x[i + 1] - x[i];
                detail::forward(net_, w, std::span<const double>(&gap, 1), trace);
                double gap_bar = 0.0;
                detail::backward(net_, w, trace, cot.subspan(i, 1),
                                 want_x ? std::span<double>(&gap_bar, 1) : std::span<double>{}, w_bar);
                if (want_x) {
                    gap_bar *= state_jacobian_scale;
                    x_bar[i + 1] += gap_bar;
                    x_bar[i] -= gap_bar;
                }
            }
        } else {
            const LwrParams p = lwr_params(u);
            for (std::size_t i = 0; i + 1 < n; ++i) {
                const LwrPartials d = lwr_derivatives(x[i + 1] - x[i], p);
                if (want_x) {
                    const double g = state_jacobian_scale * cot[i] * d.d_gap;
                    x_bar[i + 1] += g;
                    x_bar[i] -= g;
                }
                if (want_u) {
                    u_bar[0] += cot[i] * d.d_v0;
                    u_bar[1] += cot[i] * d.d_L;
                }
            }
        }
    }

    /// Test hook: scales the state Jacobian in vjp so gradient checks can be
    /// shown to fail. Must stay 1 in production use.
    double state_jacobian_scale = 1.0;

private:
    void check(std::size_t x_size, std::size_t u_size) const {
        if (x_size != agents_) throw ValidationError("traffic state has the wrong length");
        if (u_size != param_count()) throw ValidationError("traffic parameter vector has the wrong length");
    }

    std::size_t agents_;
    TrafficForce force_;
    NetSpec net_;
    mutable LwrDiagnostics diag_;
};

/// Positions ordered so that index i+1 is the vehicle ahead of i.
struct TrafficState {
    std::vector<double> positions;
};

using TrafficForceModel = std::variant<LwrParams, NetParams>;

/// Velocities of all vehicles; the leader moves at v0_lead.
inline std::vector<double> traffic_rhs(const TrafficState& state, const TrafficForceModel& force, double v0_lead) {
    const std::size_t n = state.positions.size();
    if (n == 0) throw ValidationError("traffic state is empty");
    std::vector<double> out(n);
    if (const auto* lwr = std::get_if<LwrParams>(&force)) {
        TrafficSystem sys(n, lwr->variant == LwrVariant::log ? TrafficForce::lwr_log : TrafficForce::lwr_linear);
        const double u[2] = {lwr->v0, lwr->L};
        sys.rhs<double>(state.positions, u, out);
        // The LWR v0 doubles as the leader speed inside the system; honour
        // the explicitly requested leader speed here.
        out[n - 1] = v0_lead;
    } else {
        const auto& net = std::get<NetParams>(force);
        TrafficSystem sys(n, TrafficForce::nn, net.spec());
        std::vector<double> u{v0_lead};
        u.insert(u.end(), net.values().begin(), net.values().end());
        sys.rhs<double>(state.positions, u, out);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Crowd
// ---------------------------------------------------------------------------

enum class CrowdForce { social, nn };

/// Interaction and wall networks of the crowd NN model; both consume
/// (dx, dy, dvx, dvy) and emit a 2D force.
struct CrowdNets {
    NetSpec interaction{std::vector<std::size_t>{4, 4, 2}};
    NetSpec wall{std::vector<std::size_t>{4, 4, 2}};
};

struct CrowdState {
    std::vector<Vec2> positions;
    std::vector<Vec2> velocities;
    std::vector<Vec2> destinations;
};

/// x_i' = v_i,
/// v_i' = relax_i + 1/(N m) Σ_{j≠i} F(x_i − x_j, v_i − v_j) + 1/(N_wall m) Σ_k F_w(x_i − x_k, v_i).
/// Parameters: social force (A, k, κ); NN (interaction weights, wall weights).
class CrowdSystem {
public:
    CrowdSystem(std::size_t agents, CrowdForce force, std::vector<Vec2> destinations,
                std::shared_ptr<const WallGeometry> walls, SocialForceParams fixed = {}, CrowdNets nets = {})
        : agents_(agents), force_(force), destinations_(std::move(destinations)),
          walls_(walls ? std::move(walls) : std::make_shared<const WallGeometry>()), fixed_(fixed),
          nets_(std::move(nets)) {
        if (agents_ == 0) throw ValidationError("crowd system needs at least one pedestrian");
        if (destinations_.size() != agents_) throw ValidationError("one destination per pedestrian required");
        if (force_ == CrowdForce::nn) {
            for (const NetSpec* s : {&nets_.interaction, &nets_.wall}) {
                if (s->depth() < 2 || s->inputs() != 4 || s->outputs() != 2) {
                    throw ValidationError("crowd networks must map 4 inputs to 2 outputs");
                }
            }
        }
    }

    StateLayout layout() const noexcept { return {agents_, 2, true}; }
    CrowdForce force() const noexcept { return force_; }
    const CrowdNets& nets() const noexcept { return nets_; }
    const WallGeometry& walls() const noexcept { return *walls_; }
    const SocialForceParams& fixed() const noexcept { return fixed_; }
    const std::vector<Vec2>& destinations() const noexcept { return destinations_; }

    std::size_t param_count() const noexcept {
        return force_ == CrowdForce::nn ? nets_.interaction.param_count() + nets_.wall.param_count() : 3;
    }

    SocialForceParams social_params(std::span<const double> u) const {
        SocialForceParams p = fixed_;
        p.A = u[0];
        p.k = u[1];
        p.kappa = u[2];
        return p;
    }

    template <class T>
    void rhs(std::span<const T> y, std::span<const T> u, std::span<T> out) const {
        check(y.size(), u.size());
        const std::size_t n = agents_;
        const T pair_scale = T(1) / (T(static_cast<double>(n)) * T(fixed_.m));
        const T wall_scale = walls_->empty() ? T(0) : T(1) / (T(static_cast<double>(walls_->count())) * T(fixed_.m));
        const bool social = force_ == CrowdForce::social;
        const T A = social ? u[0] : T(0);
        const T k = social ? u[1] : T(0);
        const T kappa = social ? u[2] : T(0);
        BasicNetEvalTrace<T> trace;

        for (std::size_t i = 0; i < n; ++i) {
            out[2 * i] = y[2 * n + 2 * i];
            out[2 * i + 1] = y[2 * n + 2 * i + 1];
        }
        for (std::size_t i = 0; i < n; ++i) {
            const BasicVec2<T> xi = pair_at(y, 2 * i);
            const BasicVec2<T> vi = pair_at(y, 2 * n + 2 * i);
            BasicVec2<T> acc = relaxation_force<T>(xi, vi, lift<T>(destinations_[i]), fixed_.tau);
            BasicVec2<T> pair_sum;
            for (std::size_t j = 0; j < n; ++j) {
                if (j == i) continue;
                const BasicVec2<T> dx = xi - pair_at(y, 2 * j);
                const BasicVec2<T> dv = vi - pair_at(y, 2 * n + 2 * j);
                if (social) {
                    pair_sum += social_pair_force<T>(dx, dv, A, k, kappa, fixed_.B, 2.0 * fixed_.r);
                } else {
                    pair_sum += eval_net<T>(nets_.interaction, interaction_weights(u), dx, dv, trace);
                }
            }
            BasicVec2<T> wall_sum;
            for (const auto& w : walls_->points) {
                if (social) {
                    wall_sum += social_wall_point_force<T>(xi, vi, w, A, k, kappa, fixed_.r, fixed_.B);
                } else {
                    wall_sum += eval_net<T>(nets_.wall, wall_weights(u), xi - lift<T>(w.position), vi, trace);
                }
            }
            acc += pair_scale * pair_sum + wall_scale * wall_sum;
            out[2 * n + 2 * i] = acc.x;
            out[2 * n + 2 * i + 1] = acc.y;
        }
    }

    void vjp(std::span<const double> y, std::span<const double> u, std::span<const double> cot,
             std::span<double> y_bar, std::span<double> u_bar) const {
        check(y.size(), u.size());
        const std::size_t n = agents_;
        const bool want_y = !y_bar.empty();
        const bool want_u = !u_bar.empty();
        const double pair_scale = 1.0 / (static_cast<double>(n) * fixed_.m);
        const double wall_scale = walls_->empty() ? 0.0 : 1.0 / (static_cast<double>(walls_->count()) * fixed_.m);
        const double js = state_jacobian_scale;
        const SocialForceParams sp = force_ == CrowdForce::social ? social_params(u) : fixed_;
        NetEvalTrace trace;

        auto add = [&](std::size_t idx, Vec2 g) {
            y_bar[idx] += g.x;
            y_bar[idx + 1] += g.y;
        };
        const std::size_t vo = 2 * n; // velocity block offset

        if (want_y) {
            for (std::size_t i = 0; i < n; ++i) {
                y_bar[vo + 2 * i] += cot[2 * i];
                y_bar[vo + 2 * i + 1] += cot[2 * i + 1];
            }
        }
        for (std::size_t i = 0; i < n; ++i) {
            const Vec2 c{cot[vo + 2 * i], cot[vo + 2 * i + 1]};
            if (c.x == 0.0 && c.y == 0.0) continue;
            const Vec2 xi = pos(y, i);
            const Vec2 vi = vel(y, i);
            if (want_y) {
                const RelaxationPartials rp = relaxation_derivatives(xi, vi, destinations_[i], fixed_);
                add(2 * i, js * transpose_apply(rp.d_position, c));
                add(vo + 2 * i, js * transpose_apply(rp.d_velocity, c));
            }
            const Vec2 cp = pair_scale * c;
            for (std::size_t j = 0; j < n; ++j) {
                if (j == i) continue;
                const PairKinematics kin{xi - pos(y, j), vi - vel(y, j)};
                Vec2 g_dx, g_dv;
                if (force_ == CrowdForce::social) {
                    const SocialForcePartials d = social_force_derivatives(kin, sp, 2.0 * fixed_.r);
                    g_dx = transpose_apply(d.d_dx, cp);
                    g_dv = transpose_apply(d.d_dv, cp);
                    if (want_u) {
                        u_bar[0] += dot(d.dA, cp);
                        u_bar[1] += dot(d.dk, cp);
                        u_bar[2] += dot(d.dkappa, cp);
                    }
                } else {
                    const auto in = net_backward(nets_.interaction, interaction_weights(u), kin, cp, trace,
                                                 want_u ? interaction_bar(u_bar) : std::span<double>{});
                    g_dx = in.first;
                    g_dv = in.second;
                }
                if (want_y) {
                    add(2 * i, js * g_dx);
                    add(2 * j, -js * g_dx);
                    add(vo + 2 * i, js * g_dv);
                    add(vo + 2 * j, -js * g_dv);
                }
            }
            if (walls_->empty()) continue;
            const Vec2 cw = wall_scale * c;
            for (const auto& w : walls_->points) {
                Vec2 g_x, g_v;
                if (force_ == CrowdForce::social) {
                    const WallForcePartials d = social_wall_point_force(xi, vi, w, sp);
                    g_x = transpose_apply(d.d_position, cw);
                    g_v = transpose_apply(d.d_velocity, cw);
                    if (want_u) {
                        u_bar[0] += dot(d.dA, cw);
                        u_bar[1] += dot(d.dk, cw);
                        u_bar[2] += dot(d.dkappa, cw);
                    }
                } else {
                    const auto in = net_backward(nets_.wall, wall_weights(u), wall_kinematics(xi, vi, w), cw, trace,
                                                 want_u ? wall_bar(u_bar) : std::span<double>{});
                    g_x = in.first;
                    g_v = in.second;
                }
                if (want_y) {
                    add(2 * i, js * g_x);
                    add(vo + 2 * i, js * g_v);
                }
            }
        }
    }

    /// Test hook, see TrafficSystem::state_jacobian_scale.
    double state_jacobian_scale = 1.0;

private:
    static Vec2 pos(std::span<const double> y, std::size_t i) { return {y[2 * i], y[2 * i + 1]}; }
    Vec2 vel(std::span<const double> y, std::size_t i) const {
        return {y[2 * agents_ + 2 * i], y[2 * agents_ + 2 * i + 1]};
    }

    static PairKinematics wall_kinematics(Vec2 xi, Vec2 vi, const WallPoint& w) {
        return {xi - w.position, vi}; // wall points are at rest
    }

    template <class T>
    static BasicVec2<T> pair_at(std::span<const T> y, std::size_t idx) {
        return {y[idx], y[idx + 1]};
    }

    template <class T>
    std::span<const T> interaction_weights(std::span<const T> u) const {
        return u.first(nets_.interaction.param_count());
    }
    template <class T>
    std::span<const T> wall_weights(std::span<const T> u) const {
        return u.subspan(nets_.interaction.param_count());
    }
    std::span<double> interaction_bar(std::span<double> u_bar) const {
        return u_bar.first(nets_.interaction.param_count());
    }
    std::span<double> wall_bar(std::span<double> u_bar) const { return u_bar.subspan(nets_.interaction.param_count()); }

    template <class T>
    static BasicVec2<T> eval_net(const NetSpec& spec, std::span<const T> w, BasicVec2<T> dx, BasicVec2<T> dv,
                                 BasicNetEvalTrace<T>& trace) {
        const T in[4] = {dx.x, dx.y, dv.x, dv.y};
        const auto& out = detail::forward<T>(spec, w, in, trace);
        return {out[0], out[1]};
    }

    static std::pair<Vec2, Vec2> net_backward(const NetSpec& spec, std::span<const double> w,
                                              const PairKinematics& kin, Vec2 cot, NetEvalTrace& trace,
                                              std::span<double> w_bar) {
        const double in[4] = {kin.dx.x, kin.dx.y, kin.dv.x, kin.dv.y};
        detail::forward<double>(spec, w, in, trace);
        const double c[2] = {cot.x, cot.y};
        double in_bar[4] = {0.0, 0.0, 0.0, 0.0};
        detail::backward(spec, w, trace, c, in_bar, w_bar);
        return {{in_bar[0], in_bar[1]}, {in_bar[2], in_bar[3]}};
    }

    void check(std::size_t y_size, std::size_t u_size) const {
        if (y_size != 4 * agents_) throw ValidationError("crowd state has the wrong length");
        if (u_size != param_count()) throw ValidationError("crowd parameter vector has the wrong length");
    }

    std::size_t agents_;
    CrowdForce force_;
    std::vector<Vec2> destinations_;
    std::shared_ptr<const WallGeometry> walls_;
    SocialForceParams fixed_;
    CrowdNets nets_;
};

struct CrowdNetParams {
    NetParams interaction;
    NetParams wall;
};

using CrowdForceModel = std::variant<SocialForceParams, CrowdNetParams>;

inline std::vector<double> flatten(const CrowdState& s) {
    const std::size_t n = s.positions.size();
    std::vector<double> y(4 * n);
    for (std::size_t i = 0; i < n; ++i) {
        y[2 * i] = s.positions[i].x;
        y[2 * i + 1] = s.positions[i].y;
        y[2 * n + 2 * i] = s.velocities[i].x;
        y[2 * n + 2 * i + 1] = s.velocities[i].y;
    }
    return y;
}

/// Time derivative of a crowd state: (dx, dv), one Vec2 per pedestrian.
/// For the social force model `fixed` supplies m, r, τ, B; for the NN model
/// only m and τ are used.
inline std::pair<std::vector<Vec2>, std::vector<Vec2>> crowd_rhs(const CrowdState& state, const CrowdForceModel& force,
                                                                 std::shared_ptr<const WallGeometry> walls,
                                                                 const SocialForceParams& fixed = {}) {
    const std::size_t n = state.positions.size();
    if (state.velocities.size() != n) throw ValidationError("crowd state: positions and velocities differ in length");
    std::vector<double> u;
    std::unique_ptr<CrowdSystem> sys;
    if (const auto* sf = std::get_if<SocialForceParams>(&force)) {
        sys = std::make_unique<CrowdSystem>(n, CrowdForce::social, state.destinations, std::move(walls), fixed);
        u = {sf->A, sf->k, sf->kappa};
    } else {
        const auto& nn = std::get<CrowdNetParams>(force);
        sys = std::make_unique<CrowdSystem>(n, CrowdForce::nn, state.destinations, std::move(walls), fixed,
                                            CrowdNets{nn.interaction.spec(), nn.wall.spec()});
        u.assign(nn.interaction.values().begin(), nn.interaction.values().end());
        u.insert(u.end(), nn.wall.values().begin(), nn.wall.values().end());
    }
    const auto y = flatten(state);
    std::vector<double> dy(y.size());
    sys->rhs<double>(y, u, dy);
    std::pair<std::vector<Vec2>, std::vector<Vec2>> out;
    out.first.resize(n);
    out.second.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        out.first[i] = {dy[2 * i], dy[2 * i + 1]};
        out.second[i] = {dy[2 * n + 2 * i], dy[2 * n + 2 * i + 1]};
    }
    return out;
}

// ---------------------------------------------------------------------------
// Integration
// ---------------------------------------------------------------------------

/// y_{n+1} = y_n + dt F(y_n) for n = 0..steps−1; every step is stored.
template <class Rhs>
    requires std::invocable<Rhs&, std::span<const double>, std::span<double>>
Trajectory euler_integrate(std::span<const double> y0, Rhs&& rhs, const SimConfig& cfg, StateLayout layout) {
    if (!(cfg.dt > 0.0)) throw ValidationError("time step must be positive");
    if (cfg.steps < 1) throw ValidationError("at least one step is required");
    if (y0.size() != layout.size()) throw ValidationError("initial state does not match the state layout");
    Trajectory traj;
    traj.layout = layout;
    traj.dt = cfg.dt;
    traj.times.resize(cfg.steps + 1);
    traj.states.resize(cfg.steps + 1);
    for (std::size_t n = 0; n <= cfg.steps; ++n) traj.times[n] = cfg.t0 + static_cast<double>(n) * cfg.dt;
    traj.states[0].assign(y0.begin(), y0.end());
    std::vector<double> f(y0.size());
    for (std::size_t n = 0; n < cfg.steps; ++n) {
        const auto& y = traj.states[n];
        rhs(std::span<const double>(y), std::span<double>(f));
        auto& next = traj.states[n + 1];
        next.resize(y.size());
        for (std::size_t k = 0; k < y.size(); ++k) {
            next[k] = y[k] + cfg.dt * f[k];
            if (!std::isfinite(next[k])) throw NumericalError("non-finite state during integration", static_cast<std::ptrdiff_t>(n + 1));
        }
    }
    return traj;
}

template <DynamicalSystem S>
Trajectory euler_integrate(const S& sys, std::span<const double> u, std::span<const double> y0, const SimConfig& cfg) {
    return euler_integrate(
        y0, [&](std::span<const double> y, std::span<double> out) { sys.rhs(y, u, out); }, cfg, sys.layout());
}

/// Every `stride`-th node, starting at node 0.
inline Trajectory subsample(const Trajectory& traj, std::size_t stride) {
    if (stride == 0) throw ValidationError("subsample stride must be positive");
    Trajectory out;
    out.layout = traj.layout;
    out.agent_ids = traj.agent_ids;
    out.dt = traj.dt * static_cast<double>(stride);
    for (std::size_t n = 0; n < traj.nodes(); n += stride) {
        out.times.push_back(traj.times[n]);
        out.states.push_back(traj.states[n]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Trajectory CSV: t,agent_id,x  or  t,agent_id,x,y,vx,vy
// ---------------------------------------------------------------------------

inline std::string agent_label(const Trajectory& traj, std::size_t i) {
    return i < traj.agent_ids.size() ? traj.agent_ids[i] : std::to_string(i);
}

inline void write_trajectory(std::ostream& out, const Trajectory& traj) {
    const auto& lay = traj.layout;
    const bool crowd = lay.dim == 2 && lay.second_order;
    if (!(lay.dim == 1 && !lay.second_order) && !crowd) {
        throw ValidationError("trajectory export supports 1D first-order and 2D second-order states");
    }
    out << (crowd ? "t,agent_id,x,y,vx,vy\n" : "t,agent_id,x\n");
    const std::size_t n = lay.agents;
    for (std::size_t k = 0; k < traj.nodes(); ++k) {
        const auto& s = traj.states[k];
        for (std::size_t i = 0; i < n; ++i) {
            out << format_double(traj.times[k]) << ',' << agent_label(traj, i);
            if (crowd) {
                out << ',' << format_double(s[2 * i]) << ',' << format_double(s[2 * i + 1]) << ','
                    << format_double(s[2 * n + 2 * i]) << ',' << format_double(s[2 * n + 2 * i + 1]);
            } else {
                out << ',' << format_double(s[i]);
            }
            out << '\n';
        }
    }
}

inline void save_trajectory(const std::filesystem::path& path, const Trajectory& traj) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write trajectory file " + path.string());
    write_trajectory(out, traj);
}

/// Inverse of write_trajectory. Agents keep their first-appearance order.
inline Trajectory read_trajectory(std::istream& in, const std::string& source = "<trajectory>") {
    CsvReader reader(in, source);
    Trajectory traj;
    const auto& h = reader.header();
    bool crowd = false;
    if (h == std::vector<std::string>{"t", "agent_id", "x", "y", "vx", "vy"}) {
        crowd = true;
    } else {
        reader.expect_header({"t", "agent_id", "x"});
    }
    std::map<std::string, std::size_t> index;
    std::vector<double> times;
    std::vector<std::vector<std::vector<double>>> rows; // [node][agent] -> values
    std::vector<std::string_view> f;
    while (reader.next(f)) {
        if (f.size() != (crowd ? 6u : 3u)) reader.fail("wrong number of fields");
        const double t = reader.number(f[0]);
        if (times.empty() || t != times.back()) {
            if (!times.empty() && !(t > times.back())) reader.fail("times must be nondecreasing");
            times.push_back(t);
            rows.emplace_back();
        }
        const std::string id(f[1]);
        auto [it, inserted] = index.try_emplace(id, traj.agent_ids.size());
        if (inserted) {
            if (times.size() > 1) reader.fail("agent '" + id + "' missing from earlier nodes");
            traj.agent_ids.push_back(id);
        }
        std::vector<double> vals;
        for (std::size_t c = 2; c < f.size(); ++c) vals.push_back(reader.number(f[c]));
        auto& node = rows.back();
        if (node.size() != it->second) reader.fail("agent rows must appear in a fixed order at every node");
        node.push_back(std::move(vals));
    }
    const std::size_t n = traj.agent_ids.size();
    traj.layout = crowd ? StateLayout{n, 2, true} : StateLayout{n, 1, false};
    traj.times = times;
    if (times.size() > 1) traj.dt = times[1] - times[0];
    for (const auto& node : rows) {
        if (node.size() != n) throw ValidationError(source + ": every node must list every agent");
        std::vector<double> s(traj.layout.size());
        for (std::size_t i = 0; i < n; ++i) {
            if (crowd) {
                s[2 * i] = node[i][0];
                s[2 * i + 1] = node[i][1];
                s[2 * n + 2 * i] = node[i][2];
                s[2 * n + 2 * i + 1] = node[i][3];
            } else {
                s[i] = node[i][0];
            }
        }
        traj.states.push_back(std::move(s));
    }
    return traj;
}

inline Trajectory load_trajectory(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open trajectory file " + path.string());
    return read_trajectory(in, path.string());
}

} // namespace ipcal
