#pragma once

// Tracking cost, discrete adjoint of the explicit Euler map and the reduced
// gradient.
//
// The forward map is y_{n+1} = y_n + dt F(y_n, u) on a fine grid with
// `stride` Euler steps per data interval. The cost is the rectangle rule
//   J = ½ Σ_{m=0}^{M−1} dt_data ‖x(t_m) − z_m‖²
// over data nodes (positions only). Its exact gradient follows from
//   λ_S = 0,
//   λ_n = λ_{n+1} + dt (∂_y F(y_n))ᵀ λ_{n+1} + s_n,
//   ∇J  = Σ_{n=0}^{S−1} dt (∂_u F(y_n))ᵀ λ_{n+1},
// where s_n = dt_data (x_n − z_m) on the position rows when fine step n
// coincides with data node m < M, and 0 otherwise. λ_n is ∂J/∂y_n; the
// continuous costate p with terminal value p(T) = 0 corresponds to −λ.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "ipcal/dynamics.hpp"
#include "ipcal/error.hpp"

namespace ipcal {

struct CostReport {
    double value = 0.0;
    std::vector<double> per_agent;
};

struct AdjointTrace {
    std::vector<std::vector<double>> lambdas; // λ_0..λ_S
};

struct GradientResult {
    std::vector<double> grad;
    CostReport cost;
};

namespace detail {

inline void check_same_grid(const Trajectory& a, const Trajectory& b) {
    if (a.nodes() != b.nodes()) {
        throw ValidationError("trajectory grids differ: " + std::to_string(a.nodes()) + " vs " +
                              std::to_string(b.nodes()) + " nodes");
    }
    if (a.layout.position_size() != b.layout.position_size()) {
        throw ValidationError("trajectories carry different agent counts");
    }
    for (std::size_t n = 0; n < a.nodes(); ++n) {
        const double ta = a.times[n], tb = b.times[n];
        if (std::abs(ta - tb) > 1e-9 * std::max(1.0, std::abs(tb))) {
            throw ValidationError("trajectory grids differ at node " + std::to_string(n));
        }
    }
}

inline double data_spacing(const Trajectory& ref) {
    if (ref.dt > 0.0) return ref.dt;
    if (ref.nodes() > 1) return ref.times[1] - ref.times[0];
    return 0.0;
}

inline std::size_t fine_steps(const Trajectory& ref, std::size_t stride) {
    if (stride == 0) throw ValidationError("stride must be positive");
    if (ref.nodes() < 2) throw ValidationError("reference needs at least two nodes");
    return (ref.nodes() - 1) * stride;
}

} // namespace detail

/// ½ Σ_{n=0}^{M−1} dt ‖x_n − z_n‖² over positions; both trajectories on the
/// data grid.
inline CostReport tracking_cost(const Trajectory& traj, const Trajectory& ref) {
    detail::check_same_grid(traj, ref);
    const double dt = detail::data_spacing(ref);
    const std::size_t agents = ref.layout.agents;
    const std::size_t dim = ref.layout.dim;
    CostReport rep;
    rep.per_agent.assign(agents, 0.0);
    for (std::size_t n = 0; n + 1 < ref.nodes(); ++n) {
        const auto x = traj.positions(n);
        const auto z = ref.positions(n);
        for (std::size_t i = 0; i < agents; ++i) {
            double s = 0.0;
            for (std::size_t d = 0; d < dim; ++d) {
                const double e = x[i * dim + d] - z[i * dim + d];
                s += e * e;
            }
            rep.per_agent[i] += 0.5 * dt * s;
        }
    }
    for (double v : rep.per_agent) rep.value += v;
    return rep;
}

/// Costates λ_0..λ_S for a fine trajectory produced by euler_integrate.
template <DynamicalSystem S>
AdjointTrace backward_sweep(const S& sys, std::span<const double> u, const Trajectory& traj, const Trajectory& ref,
                            std::size_t stride) {
    const std::size_t steps = detail::fine_steps(ref, stride);
    if (traj.nodes() != steps + 1) throw ValidationError("trajectory length does not match reference and stride");
    const std::size_t dim = traj.layout.size();
    const std::size_t npos = traj.layout.position_size();
    const std::size_t data_intervals = ref.nodes() - 1;
    const double dt = traj.dt;
    const double dt_data = detail::data_spacing(ref);

    AdjointTrace tr;
    tr.lambdas.assign(steps + 1, std::vector<double>(dim, 0.0));
    std::vector<double> jt(dim);
    for (std::size_t n = steps; n-- > 0;) {
        const auto& next = tr.lambdas[n + 1];
        auto& cur = tr.lambdas[n];
        std::fill(jt.begin(), jt.end(), 0.0);
        sys.vjp(traj.states[n], u, next, jt, {});
        for (std::size_t k = 0; k < dim; ++k) cur[k] = next[k] + dt * jt[k];
        if (n % stride == 0 && n / stride < data_intervals) {
            const auto x = traj.positions(n);
            const auto z = ref.positions(n / stride);
            for (std::size_t k = 0; k < npos; ++k) cur[k] += dt_data * (x[k] - z[k]);
        }
        for (double v : cur) {
            if (!std::isfinite(v)) throw NumericalError("non-finite costate in backward sweep", static_cast<std::ptrdiff_t>(n));
        }
    }
    return tr;
}

/// Σ dt (∂_u F(y_n))ᵀ λ_{n+1}, plus the tracking cost of the trajectory.
template <DynamicalSystem S>
GradientResult reduced_gradient(const S& sys, std::span<const double> u, const Trajectory& traj, const Trajectory& ref,
                                const AdjointTrace& adj, std::size_t stride) {
    const std::size_t steps = detail::fine_steps(ref, stride);
    if (adj.lambdas.size() != steps + 1 || traj.nodes() != steps + 1) {
        throw ValidationError("adjoint trace does not match the trajectory");
    }
    GradientResult res;
    std::vector<double> g(u.size(), 0.0);
    std::vector<double> step_bar(u.size());
    for (std::size_t n = 0; n < steps; ++n) {
        std::fill(step_bar.begin(), step_bar.end(), 0.0);
        sys.vjp(traj.states[n], u, adj.lambdas[n + 1], {}, step_bar);
        for (std::size_t k = 0; k < g.size(); ++k) g[k] += traj.dt * step_bar[k];
    }
    res.grad = std::move(g);
    res.cost = tracking_cost(subsample(traj, stride), ref);
    return res;
}

/// Integrate from y0, sweep back and assemble the gradient.
template <DynamicalSystem S>
GradientResult cost_and_gradient(const S& sys, std::span<const double> u, std::span<const double> y0,
                                 const Trajectory& ref, double dt, std::size_t stride) {
    const SimConfig cfg{dt, detail::fine_steps(ref, stride), ModelKind::traffic_lwr, ref.times.front()};
    const Trajectory traj = euler_integrate(sys, u, y0, cfg);
    const AdjointTrace adj = backward_sweep(sys, u, traj, ref, stride);
    return reduced_gradient(sys, u, traj, ref, adj, stride);
}

/// Tracking cost of the discrete forward map (no adjoint).
template <DynamicalSystem S>
double simulate_cost(const S& sys, std::span<const double> u, std::span<const double> y0, const Trajectory& ref,
                     double dt, std::size_t stride) {
    const SimConfig cfg{dt, detail::fine_steps(ref, stride), ModelKind::traffic_lwr, ref.times.front()};
    return tracking_cost(subsample(euler_integrate(sys, u, y0, cfg), stride), ref).value;
}

/// Tracking cost of the discrete forward map with every operation carried
/// out in scalar T. Nothing is stored; the cost is accumulated at data nodes.
template <class T, DynamicalSystem S>
T simulate_cost_in(const S& sys, std::span<const T> u, std::span<const double> y0, const Trajectory& ref, double dt,
                   std::size_t stride) {
    using std::isfinite;
    const std::size_t steps = detail::fine_steps(ref, stride);
    const std::size_t npos = ref.layout.position_size();
    const std::size_t data_intervals = ref.nodes() - 1;
    const T half_dt_data = T(0.5) * T(detail::data_spacing(ref));
    const T h = T(dt);
    std::vector<T> y(y0.begin(), y0.end());
    std::vector<T> f(y.size());
    T cost = T(0);
    for (std::size_t n = 0;; ++n) {
        if (n % stride == 0 && n / stride < data_intervals) {
            const auto z = ref.positions(n / stride);
            T s = T(0);
            for (std::size_t k = 0; k < npos; ++k) {
                const T e = y[k] - T(z[k]);
                s += e * e;
            }
            cost += half_dt_data * s;
        }
        if (n == steps) break;
        sys.template rhs<T>(y, u, f);
        for (std::size_t k = 0; k < y.size(); ++k) {
            y[k] += h * f[k];
            if (!isfinite(y[k])) throw NumericalError("non-finite state during integration", static_cast<std::ptrdiff_t>(n + 1));
        }
    }
    return cost;
}

/// Central finite differences of the discrete reduced cost, coordinate by
/// coordinate, evaluated in scalar Real. Independent of the adjoint path.
/// The divisor is the realised step (u+h) − (u−h).
template <class Real = double, DynamicalSystem S>
std::vector<double> fd_gradient(const S& sys, std::span<const double> u, std::span<const double> y0,
                                const Trajectory& ref, double dt, std::size_t stride, double step) {
    if (!(step > 0.0)) throw ValidationError("finite-difference step must be positive");
    std::vector<double> g(u.size());
    std::vector<Real> w(u.begin(), u.end());
    for (std::size_t i = 0; i < u.size(); ++i) {
        const Real up = Real(u[i]) + Real(step);
        const Real um = Real(u[i]) - Real(step);
        w[i] = up;
        const Real jp = simulate_cost_in<Real>(sys, std::span<const Real>(w), y0, ref, dt, stride);
        w[i] = um;
        const Real jm = simulate_cost_in<Real>(sys, std::span<const Real>(w), y0, ref, dt, stride);
        w[i] = Real(u[i]);
        g[i] = static_cast<double>((jp - jm) / (up - um));
    }
    return g;
}

} // namespace ipcal
