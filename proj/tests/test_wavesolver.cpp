#include "kgconn/oneparticle.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace kgconn;
using namespace kgtest;

namespace {

PerturbationSpec bump(PerturbationKind k, double amp, BumpShape s) {
    PerturbationSpec p;
    p.kind = k;
    p.amplitude = amp;
    p.shape = s;
    return p;
}

}  // namespace

TEST(Evolution, FlatMapIsSymplecticAndMatchesRotations) {
    GridSpec g = small_grid();
    auto modes = std::make_shared<ModeSet>(ModeSet::full(g));
    auto V = evolution_map(flat_metric(g), -1.0, 1.0, EvolutionConfig{}, modes);
    EXPECT_LT(symplectic_defect(V), 1e-10);
    const int M = modes->size();
    for (int i = 0; i < M; ++i) {
        double w = modes->omega(i), T = 2.0;
        EXPECT_NEAR(V.matrix(i, i), std::cos(w * T), 1e-8);
        EXPECT_NEAR(V.matrix(i, M + i), std::sin(w * T) / w, 1e-8);
        EXPECT_NEAR(V.matrix(M + i, i), -w * std::sin(w * T), 1e-8);
        EXPECT_NEAR(V.matrix(M + i, M + i), std::cos(w * T), 1e-8);
    }
    // The grid propagator agrees with the modal one on flat data.
    auto Vg = evolution_map(flat_metric(g), -1.0, 1.0, EvolutionConfig{});
    Mat P = Mat::Zero(2 * M, 2 * M), E = Mat::Zero(2 * M, 2 * M);
    P.topLeftCorner(M, M) = P.bottomRightCorner(M, M) = g.dx() * modes->basis.transpose();
    E.topLeftCorner(M, M) = E.bottomRightCorner(M, M) = modes->basis;
    EXPECT_LT(max_abs(Mat(P * Vg.matrix * E - V.matrix)), 1e-9);
}

TEST(Evolution, BumpMapsAreSymplectic) {
    GridSpec g = small_grid();
    BumpShape s{0.0, 0.0, 1.0, 3.0, Profile::smooth, 1.0};
    for (auto k : {PerturbationKind::conformal_bump, PerturbationKind::lapse_bump, PerturbationKind::shift_bump}) {
        auto m = build_metric(g, {bump(k, 0.1, s)});
        auto V = evolution_map(m, -0.5, 0.5, EvolutionConfig{});  // curved end slices
        EXPECT_LT(symplectic_defect(V), 1e-7) << to_string(k);
        auto W = scattering_map(m, flat_metric(g), -1.25, 1.25, EvolutionConfig{});
        EXPECT_LT(symplectic_defect(W), 1e-7) << to_string(k);
    }
}

TEST(Evolution, GroupoidAndIdentity) {
    GridSpec g = small_grid();
    auto m = build_metric(g, {bump(PerturbationKind::conformal_bump, 0.1, {0.0, 0.0, 1.0, 3.0, Profile::smooth, 1.0})});
    EvolutionConfig cfg;
    auto a = evolution_map(m, -1.5, 0.25, cfg), b = evolution_map(m, 0.25, 1.5, cfg), ab = evolution_map(m, -1.5, 1.5, cfg);
    EXPECT_LT(max_abs(Mat(compose(b, a).matrix - ab.matrix)), 1e-12);
    auto id = evolution_map(m, 0.25, 0.25, cfg);
    EXPECT_EQ(id.matrix, Mat::Identity(2 * g.n_x, 2 * g.n_x));
    auto back = evolution_map(m, 1.5, -1.5, cfg);
    EXPECT_LT(max_abs(Mat(back.matrix * ab.matrix - Mat::Identity(2 * g.n_x, 2 * g.n_x))), 1e-9);
    auto W = scattering_map(flat_metric(g), flat_metric(g), -1.0, 1.0, cfg);
    EXPECT_EQ(W.matrix, Mat::Identity(2 * g.n_x, 2 * g.n_x));
}

TEST(Evolution, ErrorPaths) {
    GridSpec g = small_grid();
    auto flat = flat_metric(g);
    EvolutionConfig cfg;
    EXPECT_THROW(evolution_map(flat, 0.0, 1.0 / 3.0, cfg), ConfigError);
    GridSpec coarse = g;
    coarse.dt = 0.5;
    EvolutionConfig one;
    one.substeps_per_dt = 1;
    EXPECT_THROW(evolution_map(flat_metric(coarse), 0.0, 1.0, one), NumericalError);
    EvolutionConfig bad;
    bad.substeps_per_dt = 0;
    EXPECT_THROW(bad.check(), ConfigError);
    auto m = build_metric(g, {bump(PerturbationKind::conformal_bump, 0.1, {0.0, 0.0, 1.0, 3.0, Profile::smooth, 1.0})});
    EXPECT_THROW(scattering_map(m, flat, -0.5, 1.5, cfg), ConfigError);
}

TEST(Evolution, StepCauchyMatchesMap) {
    GridSpec g = small_grid();
    auto m = build_metric(g, {bump(PerturbationKind::shift_bump, 0.1, {0.0, 0.0, 1.0, 3.0, Profile::smooth, 1.0})});
    EvolutionConfig cfg;
    std::mt19937_64 rng(5);
    CauchyData d{random_vec(g.n_x, rng), random_vec(g.n_x, rng), -0.5};
    auto out = step_cauchy(m, d, -0.5, 0.5, cfg);
    auto V = evolution_map(m, -0.5, 0.5, cfg);
    Vec y(2 * g.n_x);
    y << d.u, d.nu;
    Vec z = V.matrix * y;
    EXPECT_LT(max_abs(Vec(z.head(g.n_x) - out.u)), 1e-12);
    EXPECT_LT(max_abs(Vec(z.tail(g.n_x) - out.nu)), 1e-12);
    // sigma is conserved between curved slices.
    CauchyData e{random_vec(g.n_x, rng), random_vec(g.n_x, rng), -0.5};
    auto oe = step_cauchy(m, e, -0.5, 0.5, cfg);
    EXPECT_NEAR(symplectic_form(d, e, m), symplectic_form(out, oe, m), 1e-9);
}

TEST(Locality, LeakageOutsideShadowIsSmall) {
    GridSpec g;
    g.t_min = -3.0;
    g.t_max = 3.0;
    BumpShape s{0.0, 0.0, 2.0, 6.0, Profile::smooth, 30.0};
    auto m = build_metric(g, {bump(PerturbationKind::conformal_bump, 0.1, s)});
    auto W = scattering_map(m, flat_metric(g), -2.25, 2.25, EvolutionConfig{});
    auto rep = support_profile(W, s.box(), g);
    EXPECT_FALSE(rep.vacuous);
    EXPECT_GT(rep.max_entry_inside_shadow, 1e-3);
    EXPECT_LT(rep.max_entry_outside_shadow, 1e-6);
}
