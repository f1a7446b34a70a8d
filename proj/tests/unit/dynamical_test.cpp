#include "oracles/heisenberg_oracle.hpp"
#include "oracles/transport_oracle.hpp"
#include "support/fixtures.hpp"

#include "srot/dynamical.hpp"
#include "srot/errors.hpp"

#include <doctest.h>

#include <numbers>
#include <random>
#include <sstream>

using namespace srot;

namespace {

ShootingConfig with_steps(int steps) {
    ShootingConfig cfg;
    cfg.steps = steps;
    return cfg;
}

Plan identity_plan(const DiscreteMeasure& mu) {
    Plan p{mu.size(), mu.size(), {}};
    for (std::size_t i = 0; i < mu.size(); ++i) p.entries.push_back({i, i, mu[i].weight});
    return p;
}

Plan permutation_plan(std::mt19937_64& rng, std::size_t n) {
    std::vector<std::size_t> sigma(n);
    for (std::size_t i = 0; i < n; ++i) sigma[i] = i;
    std::shuffle(sigma.begin(), sigma.end(), rng);
    Plan p{n, n, {}};
    for (std::size_t i = 0; i < n; ++i) p.entries.push_back({i, sigma[i], 1.0 / static_cast<double>(n)});
    return p.normalized();
}

DiscreteMeasure delta(const Point& p) { return DiscreteMeasure({{p, 1.0}}); }

std::array<double, 3> arr(const Point& p) { return {p[0], p[1], p[2]}; }

}  // namespace

TEST_CASE("test functions: support, derivatives and classes") {
    std::mt19937_64 rng(6);
    const DiscreteMeasure mu0 = testing::random_measure(rng, 5, 3, false);
    const DiscreteMeasure mu1 = testing::random_measure(rng, 4, 3, true);
    const auto basis = standard_basis(mu0, mu1);
    REQUIRE(basis.size() == 12);
    const Manifold h = heisenberg();
    std::uniform_real_distribution<double> u(0.0, 1.0);
    int interior = 0;
    for (const auto& phi : basis) {
        if (phi.kind == TestClass::interior) {
            ++interior;
            for (int k = 0; k < 10; ++k) {
                const Point x = testing::random_point(rng, 3, -0.5, 1.5);
                CHECK(phi.value(0.0, x) == 0.0);
                CHECK(phi.value(1.0, x) == 0.0);
            }
        }
        for (int k = 0; k < 20; ++k) {
            const double t = u(rng);
            const Point x = testing::random_point(rng, 3, -0.5, 1.5);

            // time derivative
            const double s = 1e-5;
            const double fd_t = (phi.value(t + s, x) - phi.value(t - s, x)) / (2.0 * s);
            CHECK(std::abs(fd_t - phi.dt(t, x)) <= 1e-6 * std::max(1.0, std::abs(fd_t)));

            // horizontal gradient along frame flows
            const HorizontalVector g = phi.grad_h(h, t, x);
            for (int i = 0; i < 2; ++i) {
                const double step = 1e-4;
                const double ahead = phi.value(t, Point(testing::frame_flow(h, x.coords, i, step)));
                const double behind = phi.value(t, Point(testing::frame_flow(h, x.coords, i, -step)));
                CHECK(std::abs((ahead - behind) / (2.0 * step) - g.frame_coeffs[i]) <= 1e-6);
            }

            // vanishes outside the declared support
            Vector out = phi.support.upper;
            out[k % 3] += 0.01 + u(rng);
            CHECK(phi.value(t, Point(out)) == 0.0);
            CHECK(phi.chart_gradient(t, Point(out)).norm() == 0.0);
        }
    }
    CHECK(interior == 6);

    const Box box{Vector::Zero(3), Vector::Ones(3)};
    const TestFunction x2 = coordinate_test_function(2, box, 0.5);
    CHECK(x2.kind == TestClass::closed);
    CHECK(x2.value(1.0, Point{0.3, 1.2, 0.7}) == doctest::Approx(0.7).epsilon(1e-14));
    CHECK(x2.value(0.0, Point{0.3, 1.2, 0.7}) == 0.0);
    CHECK(x2.value(0.5, Point{0.3, 0.2, 0.7}) == doctest::Approx(0.35).epsilon(1e-14));
}

TEST_CASE("build_from_plan examples") {
    const Manifold h = heisenberg();
    const ShootingConfig cfg;
    const DiscreteMeasure a = delta({0, 0, 0});
    const DiscreteMeasure b = delta({1, 0, 0});
    const TransportMeasure single = build_from_plan(h, Plan{1, 1, {{0, 0, 1.0}}}, a, b, cfg);
    REQUIRE(single.curves().size() == 1);
    CHECK(single.curves()[0].weight == 1.0);
    CHECK(std::abs(relaxed_cost(single) - 1.0) <= 1e-6);
    CHECK(single.steps() == static_cast<std::size_t>(cfg.steps));

    std::mt19937_64 rng(10);
    const DiscreteMeasure mu = testing::random_measure(rng, 4, 3, false);
    const TransportMeasure still = build_from_plan(h, identity_plan(mu), mu, mu, cfg);
    CHECK(relaxed_cost(still) == 0.0);
    CHECK(pair_cost(still) == 0.0);

    const DiscreteMeasure mu0 = testing::random_measure(rng, 3, 3, true);
    const DiscreteMeasure mu1 = testing::random_measure(rng, 3, 3, true);
    const CostMatrix c = cost_matrix(h, mu0, mu1, cfg);
    const KantorovichSolution opt = solve_exact(c, mu0, mu1);
    const TransportMeasure eta = build_from_plan(h, opt.plan, mu0, mu1, cfg);
    REQUIRE(eta.curves().size() == opt.plan.entries.size());
    for (std::size_t k = 0; k < eta.curves().size(); ++k) {
        const auto& e = opt.plan.entries[k];
        const auto& curve = eta.curves()[k].curve.curve;
        double energy = 0.0;
        for (std::size_t s = 0; s < curve.size(); ++s) {
            const double w = (s == 0 || s + 1 == curve.size()) ? 0.5 : 1.0;
            energy += w * curve.velocities[s].squared_norm();
        }
        energy /= static_cast<double>(curve.size() - 1);
        CHECK(std::abs(energy - c(e.i, e.j)) <= 1e-8);
        const double d = oracle::heisenberg_distance(arr(mu0[e.i].point), arr(mu1[e.j].point));
        CHECK(std::abs(energy - d * d) <= 1e-5);
    }

    // endpoint marginals reproduce the measures exactly
    for (auto [k, mu_ref] : {std::pair{std::size_t{0}, &mu0}, std::pair{eta.steps(), &mu1}}) {
        const DiscreteMeasure got = marginal_path(eta, k);
        CHECK(got.size() == mu_ref->size());
        for (const auto& atom : mu_ref->atoms()) {
            const std::size_t idx = got.find(atom.point);
            REQUIRE(idx != DiscreteMeasure::npos);
            CHECK(got[idx].point == atom.point);
            CHECK(std::abs(got[idx].weight - atom.weight) <= 1e-10);
        }
    }

    CHECK_THROWS_AS(build_from_plan(h, Plan{1, 1, {{0, 0, 0.5}}}, a, b, cfg), InputError);

    ShootingConfig poor;
    poor.angular = 1;
    poor.radial = 1;
    poor.vertical = 1;
    poor.refine_seeds = 1;
    poor.max_iterations = 1;
    try {
        build_from_plan(h, Plan{1, 1, {{0, 0, 1.0}}}, a, delta({0, 0, 3}), poor);
        FAIL("expected a connection failure");
    } catch (const ConnectionFailure& e) {
        CHECK(std::string(e.what()).find("(0,0)") != std::string::npos);
    }
}

TEST_CASE("transport cost of any plan equals the relaxed cost of its measure") {
    const Manifold h = heisenberg();
    const ShootingConfig cfg;
    std::mt19937_64 rng(44);
    for (int trial = 0; trial < 4; ++trial) {
        const DiscreteMeasure mu0 = testing::random_measure(rng, 3, 3, trial % 2 == 0);
        const DiscreteMeasure mu1 = testing::random_measure(rng, 4, 3, false);
        const CostMatrix c = cost_matrix(h, mu0, mu1, cfg);
        const Plan plan = testing::random_plan(rng, mu0, mu1);
        const TransportMeasure eta = build_from_plan(h, plan, mu0, mu1, cfg);
        CHECK(std::abs(plan_cost(plan, c) - relaxed_cost(eta)) <= 1e-8);
        CHECK(pair_cost(eta) <= relaxed_cost(eta) + 1e-10);
    }
}

TEST_CASE("extract_plan inverts build_from_plan") {
    const Manifold h = heisenberg();
    const ShootingConfig cfg;
    std::mt19937_64 rng(45);
    for (int trial = 0; trial < 3; ++trial) {
        const DiscreteMeasure mu0 = testing::random_measure(rng, 3, 3, false);
        const DiscreteMeasure mu1 = testing::random_measure(rng, 3, 3, false);
        const Plan plan = testing::random_plan(rng, mu0, mu1);
        const Plan back = extract_plan(build_from_plan(h, plan, mu0, mu1, cfg), mu0, mu1);
        REQUIRE(back.entries.size() == plan.entries.size());
        for (std::size_t k = 0; k < plan.entries.size(); ++k) {
            CHECK(back.entries[k].i == plan.entries[k].i);
            CHECK(back.entries[k].j == plan.entries[k].j);
            CHECK(back.entries[k].weight == plan.entries[k].weight);
        }
    }

    const Point a{0, 0};
    const Point b{1, 2};
    const auto seg = GeneralizedCurve::dirac(testing::euclidean_segment(a, b, 8));
    const Plan one = extract_plan(TransportMeasure({{seg, 1.0}}), delta(a), delta(b));
    REQUIRE(one.entries.size() == 1);
    CHECK(one.entries[0].weight == 1.0);

    const Plan merged = extract_plan(TransportMeasure({{seg, 0.25}, {seg, 0.75}}), delta(a), delta(b));
    REQUIRE(merged.entries.size() == 1);
    CHECK(merged.entries[0].weight == 1.0);

    CHECK_THROWS_AS(extract_plan(TransportMeasure({{seg, 1.0}}), delta(a), delta({1, 2.001})), InputError);
}

TEST_CASE("jensen: the averaged pair never costs more") {
    const Vector v{{0.6, -0.8}};
    const TransportMeasure mixed({{testing::plus_minus_mixture({0.3, 0.3}, v, 16), 1.0}});
    CHECK(relaxed_cost(mixed) == doctest::Approx(v.squaredNorm()).epsilon(1e-14));
    CHECK(pair_cost(mixed) == 0.0);
    CHECK(relaxed_cost(mixed) - pair_cost(mixed) >= 0.9 * v.squaredNorm());

    const int steps = 8;
    const auto up = GeneralizedCurve::dirac(testing::euclidean_segment({0, 0}, {1, 1}, steps));
    const auto down = GeneralizedCurve::dirac(testing::euclidean_segment({1, 1}, {0, 0}, steps));
    const TransportMeasure crossing({{up, 0.5}, {down, 0.5}});
    CHECK(relaxed_cost(crossing) == doctest::Approx(2.0).epsilon(1e-14));
    // the velocities cancel at the single crossing sample
    CHECK(pair_cost(crossing) == doctest::Approx(2.0 - 2.0 / steps).epsilon(1e-14));

    const Manifold h = heisenberg();
    const ShootingConfig cfg;
    std::mt19937_64 rng(46);
    const DiscreteMeasure mu0 = testing::random_measure(rng, 4, 3, true);
    const DiscreteMeasure mu1 = testing::random_measure(rng, 4, 3, true);
    const TransportMeasure perm = build_from_plan(h, permutation_plan(rng, 4), mu0, mu1, cfg);
    CHECK(std::abs(pair_cost(perm) - relaxed_cost(perm)) <= 1e-14 * relaxed_cost(perm));
}

TEST_CASE("continuity residual") {
    const Manifold h = heisenberg();
    std::mt19937_64 rng(47);
    const DiscreteMeasure mu0 = testing::random_measure(rng, 4, 3, false);
    const DiscreteMeasure mu1 = testing::random_measure(rng, 4, 3, false);
    const auto basis = standard_basis(mu0, mu1);
    const Plan plan = testing::random_plan(rng, mu0, mu1);

    const TransportMeasure eta = build_from_plan(h, plan, mu0, mu1, with_steps(256));
    const ContinuityResidual r = continuity_residual(h, eta, mu0, mu1, basis);
    CHECK(r.per_function.size() == basis.size());
    CHECK(r.max_interior <= 1e-8);
    CHECK(r.max_closed <= 1e-6);

    // second-order convergence of the closed class
    const TransportMeasure coarse = build_from_plan(h, plan, mu0, mu1, with_steps(64));
    const ContinuityResidual rc = continuity_residual(h, coarse, mu0, mu1, basis);
    INFO("closed residual 64 steps " << rc.max_closed << ", 256 steps " << r.max_closed);
    CHECK(rc.max_closed > 0.0);
    CHECK(rc.max_closed / r.max_closed >= 12.0);
    CHECK(rc.max_closed / r.max_closed <= 20.0);

    // on a horizontal segment only the time ramp is curved; the defect is fourth order
    const Box wide{Vector::Constant(3, -0.5), Vector::Constant(3, 1.5)};
    const TestFunction x0 = coordinate_test_function(0, wide, 1.0);
    const DiscreteMeasure o = delta({0, 0, 0});
    const DiscreteMeasure e1 = delta({1, 0, 0});
    const TransportMeasure flat = build_from_plan(h, Plan{1, 1, {{0, 0, 1.0}}}, o, e1, with_steps(256));
    CHECK(continuity_residual(h, flat, o, e1, {x0}).max_closed <= 1e-9);

    // a strongly turning geodesic: the trapezoid defect of the z coordinate decays as h^2
    const TestFunction z = coordinate_test_function(2, wide, 1.0);
    const DiscreteMeasure a = delta({0.1, 0.2, 0.3});
    const DiscreteMeasure b = delta({0.7, 0.4, 0.9});
    const double r256 =
        continuity_residual(h, build_from_plan(h, Plan{1, 1, {{0, 0, 1.0}}}, a, b, with_steps(256)), a, b, {z})
            .max_closed;
    const double r1024 =
        continuity_residual(h, build_from_plan(h, Plan{1, 1, {{0, 0, 1.0}}}, a, b, with_steps(1024)), a, b, {z})
            .max_closed;
    INFO("z residual 256 steps " << r256 << ", 1024 steps " << r1024);
    CHECK(r256 / r1024 >= 12.0);
    CHECK(r256 / r1024 <= 20.0);
    CHECK(r1024 <= 1e-6);
}

TEST_CASE("continuity residual detects weight corruption") {
    const Manifold h = heisenberg();
    const DiscreteMeasure mu0({{{0.0, 0.0, 0.0}, 0.5}, {{1.0, 1.0, 0.5}, 0.5}});
    const DiscreteMeasure mu1({{{1.0, 0.0, 0.2}, 0.5}, {{0.0, 1.0, 1.0}, 0.5}});
    const Plan plan{2, 2, {{0, 0, 0.5}, {1, 1, 0.5}}};
    const TransportMeasure eta = build_from_plan(h, plan, mu0, mu1, ShootingConfig{});
    const auto basis = standard_basis(mu0, mu1);
    CHECK(continuity_residual(h, eta, mu0, mu1, basis).max_closed <= 1e-6);

    auto curves = eta.curves();
    curves[0].weight += 1e-3;
    curves[1].weight -= 1e-3;
    const TransportMeasure corrupted(curves);
    CHECK(continuity_residual(h, corrupted, mu0, mu1, basis).max_closed >= 1e-4);
}

TEST_CASE("tighten replaces detours and keeps geodesics") {
    const Manifold h = heisenberg();
    const int steps = 256;
    const ShootingConfig cfg = with_steps(steps);
    const DiscreteMeasure a = delta({0, 0, 0});
    const DiscreteMeasure b = delta({1, 0, 0});

    const double amplitude = 2.0;
    const TransportMeasure detour({{GeneralizedCurve::dirac(testing::heisenberg_detour(amplitude, steps)), 1.0}});
    const double pi = std::numbers::pi;
    CHECK(relaxed_cost(detour) == doctest::Approx(1.0 + 2.0 * pi * pi * amplitude * amplitude).epsilon(1e-9));
    const TightenResult t = tighten(h, detour, a, b, cfg);
    CHECK(t.replaced == std::vector<std::size_t>{0});
    CHECK(t.max_support_distance == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(relaxed_cost(t.measure) < relaxed_cost(detour) - 1.0);
    CHECK(std::abs(relaxed_cost(t.measure) - 1.0) <= 1e-6);
    CHECK(t.measure.curves()[0].curve.curve.points.back() == Point{1, 0, 0});

    // a small wiggle stays inside K and is kept
    const TransportMeasure wiggle({{GeneralizedCurve::dirac(testing::heisenberg_detour(0.05, steps)), 1.0}});
    const TightenResult kept = tighten(h, wiggle, a, b, cfg);
    CHECK(kept.replaced.empty());
    CHECK(relaxed_cost(kept.measure) == relaxed_cost(wiggle));

    std::mt19937_64 rng(48);
    const DiscreteMeasure mu0 = testing::random_measure(rng, 3, 3, false);
    const DiscreteMeasure mu1 = testing::random_measure(rng, 3, 3, false);
    const CostMatrix c = cost_matrix(h, mu0, mu1, cfg);
    const TransportMeasure eta = build_from_plan(h, testing::random_plan(rng, mu0, mu1), mu0, mu1, cfg);
    for (const CostMatrix* costs : {static_cast<const CostMatrix*>(nullptr), &c}) {
        const TightenResult same = tighten(h, eta, mu0, mu1, cfg, costs);
        CHECK(same.replaced.empty());
        CHECK(relaxed_cost(same.measure) <= relaxed_cost(eta) + 1e-12);
        REQUIRE(same.measure.curves().size() == eta.curves().size());
        for (std::size_t k = 0; k < eta.curves().size(); ++k) {
            CHECK(same.measure.curves()[k].weight == eta.curves()[k].weight);
            CHECK(same.measure.curves()[k].curve.curve.points == eta.curves()[k].curve.curve.points);
        }
    }
}

TEST_CASE("moment bound splits into distance and energy terms") {
    const Manifold e = euclidean(2);
    const ShootingConfig cfg = with_steps(16);
    const Point x0{0, 0};
    const TransportMeasure still({{GeneralizedCurve::dirac(testing::euclidean_segment(x0, x0, 16)), 1.0}});
    const MomentBound zero = moment_bound(e, still, x0, cfg);
    CHECK(zero.total == 0.0);
    CHECK(zero.distance_term == 0.0);
    CHECK(zero.energy_term == 0.0);

    const Point b{3, 4};
    const TransportMeasure line({{GeneralizedCurve::dirac(testing::euclidean_segment(x0, b, 16)), 1.0}});
    const MomentBound mb = moment_bound(e, line, x0, cfg);
    CHECK(std::abs(mb.distance_term - 2.5) <= 1e-9);
    CHECK(std::abs(mb.energy_term - 25.0) <= 1e-12);
    CHECK(std::abs(mb.total - (mb.distance_term + mb.energy_term)) <= 1e-12);

    const Manifold h = heisenberg();
    std::mt19937_64 rng(49);
    const DiscreteMeasure mu0 = testing::random_measure(rng, 2, 3, false);
    const DiscreteMeasure mu1 = testing::random_measure(rng, 2, 3, false);
    const TransportMeasure eta = build_from_plan(h, testing::random_plan(rng, mu0, mu1), mu0, mu1, cfg);
    const MomentBound hb = moment_bound(h, eta, Point{0.5, 0.5, 0.5}, cfg);
    CHECK(std::abs(hb.total - (hb.distance_term + hb.energy_term)) <= 1e-12);
    CHECK(hb.energy_term == relaxed_cost(eta));
    CHECK(std::isfinite(hb.total));

    // single geodesic from x0: trapezoid of closed-form distances along the curve
    const Point a{0.1, 0.1, 0.1};
    const TransportMeasure geo = build_from_plan(h, Plan{1, 1, {{0, 0, 1.0}}}, delta(a), delta({0.6, 0.3, 0.4}), cfg);
    const auto& pts = geo.curves()[0].curve.curve.points;
    double expected = 0.0;
    for (std::size_t k = 0; k < pts.size(); ++k) {
        const double w = (k == 0 || k + 1 == pts.size()) ? 0.5 : 1.0;
        expected += w * oracle::heisenberg_distance(arr(a), arr(pts[k]));
    }
    expected /= static_cast<double>(pts.size() - 1);
    CHECK(std::abs(moment_bound(h, geo, a, ShootingConfig{}).distance_term - expected) <= 1e-5);
}

TEST_CASE("verify_equivalence examples") {
    const Manifold h = heisenberg();
    VerifyConfig cfg;

    const EquivalenceReport line = verify_equivalence(h, delta({0, 0, 0}), delta({1, 0, 0}), cfg);
    CHECK(line.passed());
    CHECK(std::abs(line.c_kan - 1.0) <= 1e-6);
    CHECK(std::abs(line.c_bb_star - line.c_kan) <= 1e-12);
    CHECK(std::abs(line.c_bb_pair - line.c_kan) <= 1e-12);

    // tilted pair: costs agree; the closed-class defect is a quadrature error that
    // exceeds the default threshold at 256 steps and clears it at 1024
    const Point a{0, 0, 0};
    const Point b{0.5, 0.5, 0.25};
    const EquivalenceReport two = verify_equivalence(h, delta(a), delta(b), cfg);
    const double d = oracle::heisenberg_distance(arr(a), arr(b));
    CHECK(std::abs(two.c_kan - d * d) <= 1e-5);
    CHECK(std::abs(two.c_bb_star - two.c_kan) <= 1e-8);
    CHECK(std::abs(two.c_bb_pair - two.c_kan) <= 1e-8);
    for (const auto& name : two.failures()) CHECK(name == "continuity_closed");
    VerifyConfig fine = cfg;
    fine.shooting.steps = 1024;
    const EquivalenceReport refined = verify_equivalence(h, delta(a), delta(b), fine);
    CHECK(refined.passed());
    CHECK(refined.residual_con_star * 12.0 <= two.residual_con_star);

    std::mt19937_64 rng(50);
    const DiscreteMeasure mu = testing::random_measure(rng, 4, 3, false);
    const EquivalenceReport same = verify_equivalence(h, mu, mu, cfg);
    CHECK(same.passed());
    CHECK(same.c_kan == 0.0);
    CHECK(same.c_bb_star == 0.0);
    CHECK(same.c_bb_pair == 0.0);
    CHECK(same.plan_entries == mu.size());

    const DiscreteMeasure mu0 = testing::random_measure(rng, 6, 3, false);
    const DiscreteMeasure mu1 = testing::random_measure(rng, 5, 3, true);
    const EquivalenceReport r = verify_equivalence(h, mu0, mu1, cfg);
    CHECK(r.passed());
    CHECK(r.failures().empty());
    CHECK(r.assertions.size() == 9);
    CHECK(r.atoms0 == 6);
    CHECK(r.atoms1 == 5);
    CHECK(r.j_kan_extracted >= r.c_kan - 1e-10);
    CHECK(r.j_kan_extracted <= r.c_bb_star + 1e-8);
    CHECK(r.c_bb_pair <= r.c_bb_star + 1e-10);

    std::ostringstream out;
    write_report(out, r, "heisenberg", std::string("2026-01-01T00:00:00Z"));
    const std::string text = out.str();
    CHECK(text.rfind("srot-report v1\ngenerated = 2026-01-01T00:00:00Z\nmanifold = heisenberg\n", 0) == 0);
    CHECK(text.find("c_kan = " + format_double(r.c_kan) + "\n") != std::string::npos);
    CHECK(text.find("assert.kan_equals_bb_star = PASS") != std::string::npos);
    CHECK(text.find("result = PASS\n") != std::string::npos);
    std::ostringstream plain;
    write_report(plain, r, "heisenberg");
    CHECK(plain.str().find("generated") == std::string::npos);

    // corrupting the plan breaks the cost equality
    VerifyConfig corrupt = cfg;
    corrupt.plan_override = [&](const Plan&) {
        Plan p{mu0.size(), mu1.size(), {}};
        for (std::size_t i = 0; i < mu0.size(); ++i)
            for (std::size_t j = 0; j < mu1.size(); ++j) p.entries.push_back({i, j, mu0[i].weight * mu1[j].weight});
        return p;
    };
    const EquivalenceReport bad = verify_equivalence(h, mu0, mu1, corrupt);
    CHECK_FALSE(bad.passed());
    const auto failed = bad.failures();
    CHECK(std::find(failed.begin(), failed.end(), "kan_equals_bb_star") != failed.end());
}
