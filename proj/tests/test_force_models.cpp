#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "ipcal/force_models.hpp"

using namespace ipcal;

namespace {

double rel_err(double a, double b) {
    const double s = std::max(std::abs(a), std::abs(b));
    return s == 0.0 ? 0.0 : std::abs(a - b) / s;
}

SocialForceParams optimum_params() {
    SocialForceParams p;
    p.A = 0.0044;
    p.k = 34.9539;
    p.kappa = 9.8894;
    return p;
}

Vec2 rotate(Vec2 v, double th) {
    return {std::cos(th) * v.x - std::sin(th) * v.y, std::sin(th) * v.x + std::cos(th) * v.y};
}

} // namespace

// --- LWR -------------------------------------------------------------------

TEST(Lwr, ZeroAtCarLength) {
    for (auto variant : {LwrVariant::log, LwrVariant::linear}) {
        EXPECT_EQ(lwr_velocity(5.0, LwrParams{30.0, 5.0, variant}), 0.0);
    }
}

TEST(Lwr, HandValues) {
    EXPECT_DOUBLE_EQ(lwr_velocity(10.0, LwrParams{30.0, 5.0, LwrVariant::linear}), 15.0);
    EXPECT_NEAR(lwr_velocity(10.0, LwrParams{30.0, 5.0, LwrVariant::log}), 30.0 * std::numbers::ln2, 1e-13);
    EXPECT_NEAR(lwr_velocity(10.0, LwrParams{30.0, 5.0, LwrVariant::log}), 20.7944, 5e-5);
}

TEST(Lwr, LogGapDerivative) {
    EXPECT_DOUBLE_EQ(lwr_derivatives(10.0, LwrParams{30.0, 5.0, LwrVariant::log}).d_gap, 3.0);
    EXPECT_EQ(lwr_derivatives(5.0, LwrParams{30.0, 5.0, LwrVariant::linear}).d_v0, 0.0);
}

TEST(Lwr, DerivativesMatchCentralDifferences) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> gap(3.0, 60.0), v0(10.0, 40.0), L(2.0, 8.0);
    double worst = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        for (auto variant : {LwrVariant::log, LwrVariant::linear}) {
            const LwrParams p{v0(rng), L(rng), variant};
            const double g = gap(rng);
            const auto d = lwr_derivatives(g, p);
            const double hg = 1e-6 * g, hv = 1e-6 * p.v0, hl = 1e-6 * p.L;
            const double fd_gap = (lwr_velocity(g + hg, p) - lwr_velocity(g - hg, p)) / (2 * hg);
            const double fd_v0 = (lwr_velocity(g, {p.v0 + hv, p.L, variant}) -
                                  lwr_velocity(g, {p.v0 - hv, p.L, variant})) / (2 * hv);
            const double fd_L = (lwr_velocity(g, {p.v0, p.L + hl, variant}) -
                                 lwr_velocity(g, {p.v0, p.L - hl, variant})) / (2 * hl);
            // Skip components that vanish identically at z = 1.
            if (std::abs(d.d_gap) > 1e-9) worst = std::max(worst, rel_err(d.d_gap, fd_gap));
            if (std::abs(d.d_v0) > 1e-3) worst = std::max(worst, rel_err(d.d_v0, fd_v0));
            if (std::abs(d.d_L) > 1e-9) worst = std::max(worst, rel_err(d.d_L, fd_L));
        }
    }
    EXPECT_LE(worst, 1e-7);
}

TEST(Lwr, ClampCountsAndFlattens) {
    LwrDiagnostics diag;
    const LwrParams p{30.0, 5.0, LwrVariant::log};
    const double v = lwr_velocity(1e-9, p, &diag);
    EXPECT_EQ(diag.clamped, 1u);
    EXPECT_DOUBLE_EQ(v, 30.0 * std::log(kLwrScaledGapFloor));
    lwr_velocity(-2.0, p, &diag);
    EXPECT_EQ(diag.clamped, 2u);
    const auto d = lwr_derivatives(1e-9, p);
    EXPECT_EQ(d.d_gap, 0.0);
    EXPECT_EQ(d.d_L, 0.0);
}

TEST(Lwr, MonotoneInGap) {
    for (auto variant : {LwrVariant::log, LwrVariant::linear}) {
        const LwrParams p{25.0, 4.0, variant};
        double prev = lwr_velocity(4.0 * 2e-6, p);
        for (double g = 1e-4; g < 500.0; g *= 1.05) {
            const double v = lwr_velocity(g, p);
            EXPECT_GT(v, prev) << "gap " << g;
            prev = v;
        }
    }
}

// --- Social force ------------------------------------------------------------

TEST(SocialForce, PairStudyS1NormalForce) {
    const auto p = optimum_params();
    const PairKinematics kin{Vec2{0, 0.22} - Vec2{0, -0.22}, Vec2{0, -1} - Vec2{0, 1}};
    const Vec2 f = social_pair_force(kin, p, 2 * p.r);
    // Hand evaluation: d = 0.44, R − d = 0.06, only the normal (0, 1) survives.
    const double hand = p.A * std::exp(0.06 / p.B) + p.k * 0.06;
    EXPECT_NEAR(f.x, 0.0, 1e-15);
    EXPECT_NEAR(f.y, hand, 1e-12);
    EXPECT_LE(rel_err(f.y, 2.1118), 0.01);
}

TEST(SocialForce, PairStudyS5TangentialForce) {
    const auto p = optimum_params();
    const PairKinematics kin{Vec2{0.22, 0} - Vec2{-0.22, 0}, Vec2{0, -1} - Vec2{0, 1}};
    const Vec2 f = social_pair_force(kin, p, 2 * p.r);
    EXPECT_NEAR(f.y, p.kappa * 0.06 * 2.0, 1e-12);
    EXPECT_LE(rel_err(f.y, 1.1867), 1e-3);
}

TEST(SocialForce, ZeroOutsideContactWithoutExponential) {
    auto p = optimum_params();
    p.A = 0.0;
    const Vec2 f = social_pair_force(PairKinematics{{0.3, 0.41}, {1.0, -2.0}}, p, 2 * p.r);
    EXPECT_EQ(f.x, 0.0);
    EXPECT_EQ(f.y, 0.0);
}

TEST(SocialForce, CoincidentPairRejected) {
    const auto p = optimum_params();
    EXPECT_THROW(social_pair_force(PairKinematics{{0, 0}, {1, 0}}, p, 0.5), DegeneratePairError);
    EXPECT_THROW(social_force_derivatives(PairKinematics{{0, 0}, {1, 0}}, p, 0.5), DegeneratePairError);
}

TEST(SocialForce, AntisymmetricUnderSwap) {
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> pos(-0.6, 0.6), vel(-2.0, 2.0), par(0.0, 40.0);
    for (int trial = 0; trial < 500; ++trial) {
        SocialForceParams p;
        p.A = par(rng) / 20.0;
        p.k = par(rng);
        p.kappa = par(rng);
        const Vec2 xi{pos(rng), pos(rng)}, xj{pos(rng), pos(rng)}, vi{vel(rng), vel(rng)}, vj{vel(rng), vel(rng)};
        const Vec2 fij = social_pair_force(PairKinematics{xi - xj, vi - vj}, p, 2 * p.r);
        const Vec2 fji = social_pair_force(PairKinematics{xj - xi, vj - vi}, p, 2 * p.r);
        EXPECT_NEAR(fij.x, -fji.x, 1e-12 * (1 + std::abs(fij.x)));
        EXPECT_NEAR(fij.y, -fji.y, 1e-12 * (1 + std::abs(fij.y)));
    }
}

TEST(SocialForce, RotationEquivariant) {
    std::mt19937_64 rng(13);
    std::uniform_real_distribution<double> pos(-0.6, 0.6), vel(-2.0, 2.0), ang(0.0, 2 * std::numbers::pi);
    const auto p = optimum_params();
    for (int trial = 0; trial < 500; ++trial) {
        const Vec2 dx{pos(rng), pos(rng)}, dv{vel(rng), vel(rng)};
        const double th = ang(rng);
        const Vec2 f = social_pair_force(PairKinematics{dx, dv}, p, 2 * p.r);
        const Vec2 g = social_pair_force(PairKinematics{rotate(dx, th), rotate(dv, th)}, p, 2 * p.r);
        const Vec2 rf = rotate(f, th);
        EXPECT_NEAR(g.x, rf.x, 1e-12 * (1 + norm(f)));
        EXPECT_NEAR(g.y, rf.y, 1e-12 * (1 + norm(f)));
    }
}

TEST(SocialForceDerivatives, AmplitudePartialAtS1) {
    const auto p = optimum_params();
    const PairKinematics kin{{0, 0.44}, {0, -2}};
    const auto d = social_force_derivatives(kin, p, 2 * p.r);
    EXPECT_NEAR(d.dA.x, 0.0, 1e-15);
    EXPECT_NEAR(d.dA.y, std::exp(0.6), 1e-14);
    EXPECT_NEAR(d.dA.y, 1.8221, 5e-5);
}

TEST(SocialForceDerivatives, FrictionPartialVanishesWithoutTangentialMotion) {
    const auto p = optimum_params();
    const auto d = social_force_derivatives(PairKinematics{{0, 0.3}, {0, -2}}, p, 2 * p.r);
    EXPECT_EQ(d.dkappa.x, 0.0);
    EXPECT_EQ(d.dkappa.y, 0.0);
}

TEST(SocialForceDerivatives, ParameterPartialsAreExactSlopes) {
    const auto p = optimum_params();
    const PairKinematics kin{{0.1, 0.3}, {0.7, -1.3}};
    const auto d = social_force_derivatives(kin, p, 2 * p.r);
    auto with = [&](double A, double k, double kappa) {
        auto q = p;
        q.A = A;
        q.k = k;
        q.kappa = kappa;
        return social_pair_force(kin, q, 2 * p.r);
    };
    const Vec2 f0 = with(0, 0, 0);
    const Vec2 fA = with(1, 0, 0) - f0, fk = with(0, 1, 0) - f0, fkap = with(0, 0, 1) - f0;
    EXPECT_NEAR(d.dA.x, fA.x, 1e-14);
    EXPECT_NEAR(d.dA.y, fA.y, 1e-14);
    EXPECT_NEAR(d.dk.x, fk.x, 1e-14);
    EXPECT_NEAR(d.dk.y, fk.y, 1e-14);
    EXPECT_NEAR(d.dkappa.x, fkap.x, 1e-14);
    EXPECT_NEAR(d.dkappa.y, fkap.y, 1e-14);
}

TEST(SocialForceDerivatives, StatePartialsMatchCentralDifferences) {
    std::mt19937_64 rng(14);
    std::uniform_real_distribution<double> pos(-0.7, 0.7), vel(-2.0, 2.0);
    const auto p = optimum_params();
    const double R = 2 * p.r;
    const double h = 1e-6;
    double worst = 0.0;
    int checked = 0;
    while (checked < 300) {
        const Vec2 dx{pos(rng), pos(rng)}, dv{vel(rng), vel(rng)};
        if (std::abs(norm(dx) - R) <= 1e-3 || norm(dx) < 0.05) continue;
        ++checked;
        const auto d = social_force_derivatives(PairKinematics{dx, dv}, p, R);
        auto F = [&](Vec2 a, Vec2 b) { return social_pair_force(PairKinematics{a, b}, p, R); };
        const Vec2 e[2] = {{1, 0}, {0, 1}};
        for (int c = 0; c < 2; ++c) {
            const Vec2 fx = (1.0 / (2 * h)) * (F(dx + h * e[c], dv) - F(dx - h * e[c], dv));
            const Vec2 fv = (1.0 / (2 * h)) * (F(dx, dv + h * e[c]) - F(dx, dv - h * e[c]));
            const Vec2 ax = c == 0 ? Vec2{d.d_dx.a, d.d_dx.c} : Vec2{d.d_dx.b, d.d_dx.d};
            const Vec2 av = c == 0 ? Vec2{d.d_dv.a, d.d_dv.c} : Vec2{d.d_dv.b, d.d_dv.d};
            // Components below 1e-8 are exactly zero analytically (outside contact, A-term only).
            for (auto [a, f] : {std::pair{ax.x, fx.x}, {ax.y, fx.y}, {av.x, fv.x}, {av.y, fv.y}}) {
                if (std::max(std::abs(a), std::abs(f)) > 1e-8) worst = std::max(worst, rel_err(a, f));
            }
        }
    }
    EXPECT_LE(worst, 1e-5);
}

// --- Walls -----------------------------------------------------------------

TEST(WallForce, ZeroWhenFarAndNoExponential) {
    auto p = optimum_params();
    p.A = 0.0;
    const WallGeometry wall{{{{0, -1}, {1, 0}}, {{0.5, -1}, {1, 0}}}};
    const Vec2 f = social_wall_force({0, 0}, {1, 1}, wall, p);
    EXPECT_EQ(f.x, 0.0);
    EXPECT_EQ(f.y, 0.0);
}

TEST(WallForce, SinglePointBelowAtHalfRadius) {
    const auto p = optimum_params();
    const WallGeometry wall{{{{0, -p.r / 2}, {1, 0}}}};
    const Vec2 f = social_wall_force({0, 0}, {0, 0}, wall, p);
    // d = r/2, n = (0, 1), no tangential term at rest.
    const double hand = p.A * std::exp((p.r - p.r / 2) / p.B) + p.k * (p.r / 2);
    EXPECT_NEAR(f.x, 0.0, 1e-15);
    EXPECT_NEAR(f.y, hand, 1e-13);
}

TEST(WallForce, TangentialTermVanishesForNormalVelocity) {
    auto p = optimum_params();
    p.A = 0.0;
    p.k = 0.0;
    const WallGeometry wall{{{{0, -0.1}, {1, 0}}}};
    const Vec2 f = social_wall_force({0, 0}, {0, 3}, wall, p);
    EXPECT_EQ(f.x, 0.0);
    EXPECT_EQ(f.y, 0.0);
    const Vec2 g = social_wall_force({0, 0}, {3, 0}, wall, p);
    EXPECT_NEAR(g.x, p.kappa * (p.r - 0.1) * 3.0, 1e-13);
}

TEST(WallForce, CoincidentPointRejected) {
    const auto p = optimum_params();
    const WallGeometry wall{{{{0, 0}, {1, 0}}}};
    EXPECT_THROW(social_wall_force({0, 0}, {0, 0}, wall, p), DegeneratePairError);
}

TEST(WallForce, FileRoundTrip) {
    const auto wall = corridor_walls();
    ASSERT_FALSE(wall.empty());
    const auto path = std::filesystem::temp_directory_path() / "ipcal_walls_roundtrip.csv";
    save_walls(path, wall);
    const auto back = load_walls(path);
    ASSERT_EQ(back.count(), wall.count());
    for (std::size_t i = 0; i < wall.count(); ++i) {
        EXPECT_EQ(back.points[i].position, wall.points[i].position);
        EXPECT_NEAR(back.points[i].tangent.x, wall.points[i].tangent.x, 1e-15);
        EXPECT_NEAR(back.points[i].tangent.y, wall.points[i].tangent.y, 1e-15);
    }
    std::filesystem::remove(path);
}

TEST(WallForce, MalformedFileReportsLine) {
    const auto path = std::filesystem::temp_directory_path() / "ipcal_walls_bad.csv";
    std::ofstream(path) << "x,y,tx,ty\n0,0,1,0\n1,oops,1,0\n";
    try {
        load_walls(path);
        FAIL() << "expected a validation error";
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find(":3:"), std::string::npos) << e.what();
    }
    std::filesystem::remove(path);
}

// --- Relaxation --------------------------------------------------------------

TEST(Relaxation, ZeroWhenHeadingToDestination) {
    SocialForceParams p;
    const Vec2 f = relaxation_force({1, 1}, {3, 3}, {5, 5}, p);
    EXPECT_NEAR(f.x, 0.0, 1e-14);
    EXPECT_NEAR(f.y, 0.0, 1e-14);
}

TEST(Relaxation, HandExample) {
    SocialForceParams p;
    p.tau = 0.5;
    const Vec2 f = relaxation_force({0, 0}, {0, 2}, {1, 0}, p);
    EXPECT_NEAR(f.x, 4.0, 1e-14);
    EXPECT_NEAR(f.y, -4.0, 1e-14);
}

TEST(Relaxation, AtRestOrArrived) {
    SocialForceParams p;
    const Vec2 rest = relaxation_force({0, 0}, {0, 0}, {1, 0}, p);
    EXPECT_EQ(rest.x, 0.0);
    EXPECT_EQ(rest.y, 0.0);
    const Vec2 arrived = relaxation_force({1, 0}, {0, 1}, {1, 0}, p);
    EXPECT_DOUBLE_EQ(arrived.y, -1.0 / p.tau);
}
