#include "kgconn/connection.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace kgconn;
using namespace kgtest;

namespace {

PerturbationSpec conformal(double t0, double x0, double r_t, double r_x, double amp, double a = 1.0) {
    PerturbationSpec p;
    p.amplitude = amp;
    p.shape = {t0, x0, r_t, r_x, Profile::smooth, a};
    return p;
}

FockSetting small_setting(int n_max = 6) { return FockSetting::make(GridSpec{}, EvolutionConfig{}, 3, n_max); }

}  // namespace

TEST(PhaseDistance, RecoversGlobalPhase) {
    std::mt19937_64 rng(3);
    std::vector<CVec> A, B;
    const Complex ph = std::polar(1.0, 0.7);
    for (int j = 0; j < 4; ++j) {
        CVec b = random_vec(6, rng).cast<Complex>() + Complex(0, 1) * random_vec(6, rng).cast<Complex>();
        B.push_back(b);
        A.push_back(ph * b);
    }
    auto d = phase_aligned_distance(A, B);
    EXPECT_LT(d.value, 1e-15);
    EXPECT_LT(std::abs(d.optimal_phase - ph), 1e-15);
    // Negated columns are phase -1, still distance zero; orthogonal ones are not.
    for (auto& a : A) a = -a;
    EXPECT_LT(phase_aligned_distance(A, B).value, 1e-15);
    std::vector<CVec> X{CVec::Unit(2, 0)}, Y{CVec::Unit(2, 1)};
    EXPECT_NEAR(phase_aligned_distance(X, Y).value, std::sqrt(2.0), 1e-15);
}

TEST(Transport, ConstantPathIsIdentity) {
    FockSetting s = small_setting();
    ScatteringCache cache(s);
    MetricField g = build_metric(s.grid, {conformal(0, 0, 1, 2, 0.1)});
    MetricPath p{flat_metric(s.grid), {g, g, g}, 2};
    auto r = transport(p, cache);
    for (const auto& v : interior_test_vectors(s.basis, 2)) EXPECT_LT((r.S.apply(v) - v).norm(), 1e-15);
    // U U* = I only up to Fock truncation at this n_max.
    EXPECT_LT(r.endpoint_distance, 1e-7);
}

TEST(Transport, ReverseConcatenationAndEndpoints) {
    FockSetting s = small_setting();
    ScatteringCache cache(s);
    MetricField g0 = flat_metric(s.grid);
    MetricField a = build_metric(s.grid, {conformal(-1, 0, 1, 2, 0.1)});
    MetricField b = build_metric(s.grid, {conformal(-1, 0, 1, 2, 0.1), conformal(1, 3, 1, 2, 0.1)});
    MetricPath p1{g0, {g0, a}, 2}, p2{g0, {a, b}, 2};
    auto r1 = transport(p1, cache), r2 = transport(p2, cache);
    auto whole = transport(p1.then(p2), cache);
    EXPECT_LT(operator_distance(as_map(whole.S), as_map(r1.S.then(r2.S)), s).value, 1e-6);
    EXPECT_LT(whole.endpoint_distance, 1e-6);
    auto back = transport(p1.then(p2).reversed(), cache);
    EXPECT_LT(operator_distance(as_map(whole.S.then(back.S)), identity_map_fock(), s).value, 1e-6);
    EXPECT_EQ(whole.segments.size(), 2u);
    for (Complex c : whole.phase_log) EXPECT_NEAR(std::abs(c), 1.0, 1e-12);
}

TEST(Transport, InadmissiblePathIsRejected) {
    FockSetting s = small_setting(2);
    ScatteringCache cache(s);
    MetricField g0 = flat_metric(s.grid);
    MetricField bad = build_metric(s.grid, {conformal(0, 0, 1, 2, -1.5)});
    EXPECT_THROW(transport(MetricPath{g0, {g0, bad}, 2}, cache), AdmissibilityError);
}

TEST(Holonomy, TrivialAndNontrivialLoops) {
    FockSetting s = small_setting();
    ScatteringCache cache(s);
    MetricField g0 = flat_metric(s.grid);
    auto triv = holonomy_centrality(MetricPath{g0, {g0, g0}, 1}, cache);
    EXPECT_LT(std::abs(triv.scalar - 1.0), 1e-15);
    EXPECT_LT(triv.off_scalar_defect, 1e-15);

    MetricField a = build_metric(s.grid, {conformal(-1, 0, 1, 2, 0.1)});
    MetricField b = build_metric(s.grid, {conformal(1, 3, 1, 2, 0.1)});
    MetricField ab = build_metric(s.grid, {conformal(-1, 0, 1, 2, 0.1), conformal(1, 3, 1, 2, 0.1)});
    MetricPath loop{g0, {g0, a, ab, b, g0}, 2};
    auto h = holonomy_centrality(loop, cache);
    EXPECT_NEAR(std::abs(h.scalar), 1.0, 1e-8);
    EXPECT_LT(h.off_scalar_defect, 1e-6);
    EXPECT_LT(std::abs(h.scalar - h.predicted_scalar), 1e-8);
    auto rev = holonomy_centrality(loop.reversed(), cache);
    EXPECT_LT(std::abs(rev.scalar - std::conj(h.scalar)), 1e-8);
    EXPECT_THROW(holonomy_centrality(MetricPath{g0, {g0, a}, 1}, cache), ConfigError);
}

TEST(Causality, SeparationGeometry) {
    SupportBox early{-2, -1, 0, 1}, late{1, 2, 0, 1}, near{-2.5, 0, 3, 1};
    const double C = 8 * pi;
    EXPECT_TRUE(causally_separated(early, late, 1.0, C));
    EXPECT_FALSE(causally_separated(late, early, 1.0, C));
    // Spatial gap 1 against 1.5 of time inside the past cone.
    EXPECT_FALSE(causally_separated(early, near, 1.0, C));
    EXPECT_TRUE(causally_separated(early, near, 0.6, C));
    EXPECT_NEAR(max_light_speed(flat_metric(GridSpec{})), 1.0, 1e-15);
}

TEST(Causality, TrivialTimeOrderedAndRejected) {
    FockSetting s = small_setting();
    ScatteringCache cache(s);
    std::vector<PerturbationSpec> h1{conformal(-1.5, 0, 1, 2, 0.1)}, h2{conformal(0, 2 * pi, 1, 2, 0.1)},
        h3{conformal(1.5, 4 * pi, 1, 2, 0.1)};
    auto triv = causality_check({}, {}, h2, {}, cache);
    EXPECT_LT(triv.map_defect, 1e-12);
    EXPECT_LT(triv.fock_distance, 1e-7);
    auto r = causality_check({}, h1, h2, h3, cache);
    EXPECT_LT(r.map_defect, 1e-6);
    EXPECT_LT(r.fock_distance, 1e-5);
    try {
        causality_check({}, {conformal(0, 0, 1, 2, 0.1)}, h2, {conformal(0.5, 1, 1, 2, 0.1)}, cache);
        FAIL() << "overlapping causal past accepted";
    } catch (const ConfigError& e) {
        EXPECT_EQ(e.code(), "CAUSALITY_PRECONDITION");
    }
}

TEST(Covariance, ZeroFlowIsExactIdentity) {
    FockSetting s = small_setting(2);
    auto r = covariance_check({}, TimeBumpDiffeo{{0, 0, 1.5, 4, Profile::smooth, 8}, 0.0}, s, false);
    EXPECT_EQ(r.map_defect, 0.0);
    EXPECT_EQ(r.grid_defect, 0.0);
    EXPECT_LT(r.fock_distance, 1e-15);
}

TEST(Locality, FockCommutatorOutsideShadow) {
    GridSpec g;
    g.t_min = -3;
    g.t_max = 3;
    auto r = locality_check({conformal(0, 0, 2, 6, 0.1, 30)}, g, EvolutionConfig{}, -2.25, 2.25, 2, 3);
    EXPECT_FALSE(r.map.vacuous);
    EXPECT_LT(r.map.max_entry_outside_shadow, 1e-6);
    EXPECT_GT(r.map.max_entry_inside_shadow, 1e-3);
    EXPECT_GT(r.field_norm, 0.1);
    EXPECT_LT(r.commutator, 1e-6);
}

TEST(StressEnergy, ZeroConformalAndLinearity) {
    FockSetting s = small_setting();
    ScatteringCache cache(s);
    FockVector v = FockVector::basis_state(s.basis, {0, 0, 0, 1, 0, 0, 0});
    auto zero = stress_energy_action({}, {}, v, cache);
    EXPECT_EQ(zero.derivative_norm, 0.0);
    EXPECT_TRUE(zero.converged);

    std::vector<PerturbationSpec> h1{conformal(0, 0, 1, 2, 0.1)}, h2{conformal(0.5, 3, 1, 2, 0.1)};
    auto r = stress_energy_action({}, h1, v, cache);
    EXPECT_GT(r.derivative_norm, 1e-3);
    EXPECT_GE(r.convergence_order, 1.9);
    EXPECT_LT(r.sector_leakage, 1e-4);
    EXPECT_LT(linearity_defect({}, h1, h2, v, cache), 1e-6);
    EXPECT_THROW(stress_energy_action({}, h1, v + FockVector::vacuum(s.basis), cache), ConfigError);
}

TEST(StressEnergy, VanishesOnLieDerivative) {
    FockSetting s = small_setting();
    ScatteringCache cache(s);
    FockVector v = FockVector::basis_state(s.basis, {0, 0, 0, 1, 0, 0, 0});
    PerturbationSpec lz;
    lz.kind = PerturbationKind::lie_derivative;
    lz.amplitude = 1.0;
    lz.shape = {0, 0, 1.5, 4, Profile::smooth, 8};
    EXPECT_LT(stress_energy_action({}, {lz}, v, cache).derivative_norm, 1e-5);
}

TEST(Smoothness, ConstantAndLinearFamilies) {
    FockSetting s = small_setting();
    ScatteringCache cache(s);
    FockVector v = FockVector::vacuum(s.basis);
    auto flat = smoothness_sweep({}, {}, v, cache, 3);
    for (const auto& row : flat.rows) {
        EXPECT_EQ(row.diff1, 0.0);
        EXPECT_EQ(row.diff2, 0.0);
        EXPECT_NEAR(row.norm, 1.0, 1e-15);
    }
    auto lin = smoothness_sweep({}, {conformal(0, 0, 1, 2, 0.1)}, v, cache, 3);
    EXPECT_GE(lin.min_order, 1.9);
    EXPECT_LT(lin.vacuum_chain_defect, 1e-8);
    EXPECT_EQ(lin.csv().substr(0, 34), "s,norm,diff1,diff2,richardson_orde");
}
