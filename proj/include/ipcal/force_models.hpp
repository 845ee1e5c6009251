#pragma once

// Closed-form interaction forces: microscopic LWR velocity laws for traffic
// and the Helbing-Molnar social force (pair, wall, relaxation) for crowds,
// each with exact derivatives for the adjoint.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ipcal/csv.hpp"
#include "ipcal/error.hpp"
#include "ipcal/vec2.hpp"

namespace ipcal {

// ---------------------------------------------------------------------------
// LWR follower velocity
// ---------------------------------------------------------------------------

enum class LwrVariant { log, linear };

inline constexpr double kLwrScaledGapFloor = 1e-6;
inline constexpr double kDefaultMinCarLength = 2.0;

struct LwrParams {
    double v0 = 30.0; // m/s
    double L = 5.0;   // m
    LwrVariant variant = LwrVariant::linear;
};

/// Counts evaluations where gap / L fell to the clamp floor.
struct LwrDiagnostics {
    std::size_t clamped = 0;
};

struct LwrPartials {
    double d_gap = 0.0;
    double d_v0 = 0.0;
    double d_L = 0.0;
};

/// v0·log(gap/L) or v0·(1 − L/gap). The scaled gap is clamped at
/// kLwrScaledGapFloor; clamped calls bump `diag` when one is supplied.
template <class T>
T lwr_velocity(T gap, T v0, T L, LwrVariant variant, LwrDiagnostics* diag = nullptr) {
    using std::log;
    T z = gap / L;
    if (!(z > T(kLwrScaledGapFloor))) {
        z = T(kLwrScaledGapFloor);
        if (diag) ++diag->clamped;
    }
    return variant == LwrVariant::log ? v0 * T(log(z)) : v0 * (T(1) - T(1) / z);
}

inline double lwr_velocity(double gap, const LwrParams& p, LwrDiagnostics* diag = nullptr) {
    return lwr_velocity<double>(gap, p.v0, p.L, p.variant, diag);
}

inline LwrPartials lwr_derivatives(double gap, const LwrParams& p) {
    const double z = gap / p.L;
    if (!(z > kLwrScaledGapFloor)) {
        // Constant branch: only the v0 prefactor survives.
        const double zf = kLwrScaledGapFloor;
        return {0.0, p.variant == LwrVariant::log ? std::log(zf) : 1.0 - 1.0 / zf, 0.0};
    }
    if (p.variant == LwrVariant::log) {
        return {p.v0 / gap, std::log(z), -p.v0 / p.L};
    }
    return {p.v0 * p.L / (gap * gap), 1.0 - p.L / gap, -p.v0 / gap};
}

// ---------------------------------------------------------------------------
// Social force
// ---------------------------------------------------------------------------

/// A, k, kappa are calibrated; m, r, tau, B stay fixed.
struct SocialForceParams {
    double A = 0.0;     // N
    double k = 0.0;     // N/m
    double kappa = 0.0; // kg/(m s)
    double m = 1.0;     // kg
    double r = 0.25;    // m
    double tau = 0.5;   // s
    double B = 0.1;     // m
};

struct WallPoint {
    Vec2 position;
    Vec2 tangent; // unit
};

/// Stationary wall discretisation points with per-point unit tangents.
struct WallGeometry {
    std::vector<WallPoint> points;

    std::size_t count() const noexcept { return points.size(); }
    bool empty() const noexcept { return points.empty(); }
};

/// Relative state of agent i with respect to j: dx = x_i − x_j, dv = v_i − v_j.
struct PairKinematics {
    Vec2 dx;
    Vec2 dv;
};

struct SocialForcePartials {
    Vec2 dA;
    Vec2 dk;
    Vec2 dkappa;
    Mat2 d_dx; // dF/d(dx)
    Mat2 d_dv; // dF/d(dv)
};

namespace detail {

inline double ramp(double y) { return y > 0.0 ? y : 0.0; }
// Subgradient 0 at the contact kink.
inline double ramp_slope(double y) { return y > 0.0 ? 1.0 : 0.0; }

inline constexpr Mat2 kQuarterTurn{0.0, -1.0, 1.0, 0.0};

} // namespace detail

/// Force on i from j: (A e^{(R−d)/B} + k h(R−d)) n + κ h(R−d) Δv_t t, with
/// n = dx/d, t = (−n_y, n_x) and Δv_t = (v_j − v_i)·t.
template <class T>
BasicVec2<T> social_pair_force(BasicVec2<T> dx, BasicVec2<T> dv, T A, T k, T kappa, double B, double contact_radius) {
    using std::exp;
    const T d = norm(dx);
    if (!(d > T(0))) {
        throw DegeneratePairError("social force: coincident positions");
    }
    const BasicVec2<T> n = (T(1) / d) * dx;
    const BasicVec2<T> t = perp(n);
    const T y = T(contact_radius) - d;
    const T h = y > T(0) ? y : T(0);
    const T tangential_dv = dot(-dv, t);
    return (A * T(exp(y / T(B))) + k * h) * n + (kappa * h * tangential_dv) * t;
}

inline Vec2 social_pair_force(const PairKinematics& kin, const SocialForceParams& p, double contact_radius) {
    return social_pair_force<double>(kin.dx, kin.dv, p.A, p.k, p.kappa, p.B, contact_radius);
}

inline SocialForcePartials social_force_derivatives(const PairKinematics& kin, const SocialForceParams& p,
                                                    double contact_radius) {
    const double d = norm(kin.dx);
    if (!(d > 0.0)) {
        throw DegeneratePairError("social force: coincident positions");
    }
    const Vec2 n = (1.0 / d) * kin.dx;
    const Vec2 t = perp(n);
    const double y = contact_radius - d;
    const double e = std::exp(y / p.B);
    const double h = detail::ramp(y);
    const double H = detail::ramp_slope(y);
    const double s = dot(-kin.dv, t);

    SocialForcePartials out;
    out.dA = e * n;
    out.dk = h * n;
    out.dkappa = (h * s) * t;

    const double phi = p.A * e + p.k * h;
    const double dphi_dd = -(p.A / p.B) * e - p.k * H;
    const Mat2 proj = (1.0 / d) * (Mat2::identity() - Mat2::outer(n, n)); // dn/d(dx)
    const Mat2 dt_ddx = detail::kQuarterTurn * proj;
    // ds/d(dx) = −dvᵀ dt/d(dx)
    const Vec2 ds_ddx = -transpose_apply(dt_ddx, kin.dv);

    out.d_dx = dphi_dd * Mat2::outer(n, n) + phi * proj + (-p.kappa * H * s) * Mat2::outer(t, n) +
               (p.kappa * h) * (Mat2::outer(t, ds_ddx) + s * dt_ddx);
    out.d_dv = (-p.kappa * h) * Mat2::outer(t, t);
    return out;
}

struct WallForcePartials {
    Vec2 force;
    Vec2 dA;
    Vec2 dk;
    Vec2 dkappa;
    Mat2 d_position;
    Mat2 d_velocity;
};

/// Force of a single wall point on an agent (contact radius r). The
/// tangential term is κ h(r − d) (v·t_w) t_w with the point's stored tangent.
inline WallForcePartials social_wall_point_force(Vec2 position, Vec2 velocity, const WallPoint& w,
                                                 const SocialForceParams& p) {
    const Vec2 dx = position - w.position;
    const double d = norm(dx);
    if (!(d > 0.0)) {
        throw DegeneratePairError("wall force: agent coincides with a wall point");
    }
    const Vec2 n = (1.0 / d) * dx;
    const Vec2 tw = w.tangent;
    const double y = p.r - d;
    const double e = std::exp(y / p.B);
    const double h = detail::ramp(y);
    const double H = detail::ramp_slope(y);
    const double s = dot(velocity, tw);
    const double phi = p.A * e + p.k * h;

    WallForcePartials out;
    out.force = phi * n + (p.kappa * h * s) * tw;
    out.dA = e * n;
    out.dk = h * n;
    out.dkappa = (h * s) * tw;
    const double dphi_dd = -(p.A / p.B) * e - p.k * H;
    const Mat2 proj = (1.0 / d) * (Mat2::identity() - Mat2::outer(n, n));
    out.d_position = dphi_dd * Mat2::outer(n, n) + phi * proj + (-p.kappa * H * s) * Mat2::outer(tw, n);
    out.d_velocity = (p.kappa * h) * Mat2::outer(tw, tw);
    return out;
}

/// Force-only evaluation of social_wall_point_force.
template <class T>
BasicVec2<T> social_wall_point_force(BasicVec2<T> position, BasicVec2<T> velocity, const WallPoint& w, T A, T k,
                                     T kappa, double r, double B) {
    using std::exp;
    const BasicVec2<T> dx = position - lift<T>(w.position);
    const T d = norm(dx);
    if (!(d > T(0))) {
        throw DegeneratePairError("wall force: agent coincides with a wall point");
    }
    const BasicVec2<T> n = (T(1) / d) * dx;
    const BasicVec2<T> tw = lift<T>(w.tangent);
    const T y = T(r) - d;
    const T h = y > T(0) ? y : T(0);
    return (A * T(exp(y / T(B))) + k * h) * n + (kappa * h * dot(velocity, tw)) * tw;
}

/// Unscaled sum of wall-point forces; the 1/(N_wall m) factor belongs to the
/// dynamics.
inline Vec2 social_wall_force(Vec2 position, Vec2 velocity, const WallGeometry& wall, const SocialForceParams& p) {
    Vec2 total;
    for (const auto& w : wall.points) {
        total += social_wall_point_force(position, velocity, w, p).force;
    }
    return total;
}

/// Desired direction towards the destination, scaled to the current speed.
template <class T>
BasicVec2<T> desired_velocity(BasicVec2<T> position, BasicVec2<T> velocity, BasicVec2<T> destination) {
    const BasicVec2<T> e = destination - position;
    const T dist = norm(e);
    const T speed = norm(velocity);
    if (dist == T(0) || speed == T(0)) return {};
    return (speed / dist) * e;
}

/// (v_des − v) / τ.
template <class T>
BasicVec2<T> relaxation_force(BasicVec2<T> position, BasicVec2<T> velocity, BasicVec2<T> destination, double tau) {
    return (T(1) / T(tau)) * (desired_velocity(position, velocity, destination) - velocity);
}

inline Vec2 relaxation_force(Vec2 position, Vec2 velocity, Vec2 destination, const SocialForceParams& p) {
    return relaxation_force<double>(position, velocity, destination, p.tau);
}

struct RelaxationPartials {
    Mat2 d_position;
    Mat2 d_velocity;
};

inline RelaxationPartials relaxation_derivatives(Vec2 position, Vec2 velocity, Vec2 destination,
                                                 const SocialForceParams& p) {
    const Vec2 e = destination - position;
    const double dist = norm(e);
    const double speed = norm(velocity);
    const double inv_tau = 1.0 / p.tau;
    RelaxationPartials out;
    out.d_velocity = (-inv_tau) * Mat2::identity();
    if (dist == 0.0 || speed == 0.0) return out;
    const Vec2 dir = (1.0 / dist) * e;
    // v_des = speed · e / |e|
    out.d_position = (-inv_tau * speed / dist) * (Mat2::identity() - Mat2::outer(dir, dir));
    out.d_velocity += inv_tau * Mat2::outer(dir, (1.0 / speed) * velocity);
    return out;
}

// ---------------------------------------------------------------------------
// Wall files
// ---------------------------------------------------------------------------

/// Reads `x,y,tx,ty` records. Tangents are normalised on load.
inline WallGeometry load_walls(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open wall file " + path.string());
    WallGeometry wall;
    CsvReader reader(in, path.string());
    reader.expect_header({"x", "y", "tx", "ty"});
    std::vector<std::string_view> fields;
    while (reader.next(fields)) {
        if (fields.size() != 4) reader.fail("expected 4 fields");
        const Vec2 pos{reader.number(fields[0]), reader.number(fields[1])};
        Vec2 tan{reader.number(fields[2]), reader.number(fields[3])};
        const double len = norm(tan);
        if (!(len > 0.0) || !std::isfinite(len)) reader.fail("wall tangent must be a nonzero finite vector");
        wall.points.push_back({pos, (1.0 / len) * tan});
    }
    return wall;
}

inline void save_walls(const std::filesystem::path& path, const WallGeometry& wall) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write wall file " + path.string());
    out << "x,y,tx,ty\n";
    for (const auto& w : wall.points) {
        out << format_double(w.position.x) << ',' << format_double(w.position.y) << ','
            << format_double(w.tangent.x) << ',' << format_double(w.tangent.y) << '\n';
    }
}

/// Two horizontal walls y = y_bottom and y = y_top between x_min and x_max,
/// sampled every `spacing` metres, tangents along +x.
inline WallGeometry corridor_walls(double x_min = -10.0, double x_max = 10.0, double y_bottom = -5.0,
                                   double y_top = 5.0, double spacing = 0.5) {
    if (!(x_max > x_min) || !(spacing > 0.0)) {
        throw ValidationError("corridor preset needs x_max > x_min and spacing > 0");
    }
    const auto count = static_cast<std::size_t>(std::floor((x_max - x_min) / spacing + 1e-9)) + 1;
    WallGeometry wall;
    wall.points.reserve(2 * count);
    for (double yw : {y_bottom, y_top}) {
        for (std::size_t i = 0; i < count; ++i) {
            wall.points.push_back({{x_min + static_cast<double>(i) * spacing, yw}, {1.0, 0.0}});
        }
    }
    return wall;
}

} // namespace ipcal
