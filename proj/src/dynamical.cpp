#include "srot/dynamical.hpp"

#include "srot/errors.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>

namespace srot {

namespace {

double trapezoid_weight(std::size_t k, std::size_t steps) {
    const double h = 1.0 / static_cast<double>(steps);
    return (k == 0 || k == steps) ? 0.5 * h : h;
}

// exp(1 - 1/(1 - q)) for q in [0,1), zero beyond; q is a squared radius.
double bump(double q) { return q < 1.0 ? std::exp(1.0 - 1.0 / (1.0 - q)) : 0.0; }

// d bump / d q
double bump_slope(double q) {
    if (q >= 1.0) return 0.0;
    const double r = 1.0 - q;
    return -bump(q) / (r * r);
}

// C-infinity step from 0 (u <= 0) to 1 (u >= 1).
double smooth_step(double u) {
    if (u <= 0.0) return 0.0;
    if (u >= 1.0) return 1.0;
    const double f = std::exp(-1.0 / u);
    const double g = std::exp(-1.0 / (1.0 - u));
    return f / (f + g);
}

double smooth_step_slope(double u) {
    if (u <= 0.0 || u >= 1.0) return 0.0;
    const double f = std::exp(-1.0 / u);
    const double g = std::exp(-1.0 / (1.0 - u));
    const double s = f + g;
    return f * g * (1.0 / (u * u) + 1.0 / ((1.0 - u) * (1.0 - u))) / (s * s);
}

// Quintic smoothstep: 0 at t = 0, 1 at t = 1, flat to second order at both ends.
double ramp(double t) { return t * t * t * (10.0 - 15.0 * t + 6.0 * t * t); }
double ramp_slope(double t) { return 30.0 * t * t * (1.0 - t) * (1.0 - t); }

double halton(int index, int base) {
    double f = 1.0;
    double r = 0.0;
    for (int i = index; i > 0; i /= base) {
        f /= base;
        r += f * (i % base);
    }
    return r;
}

Box joint_box(const DiscreteMeasure& mu0, const DiscreteMeasure& mu1) {
    return {mu0.box().lower.cwiseMin(mu1.box().lower), mu0.box().upper.cwiseMax(mu1.box().upper)};
}

TestFunction radial_bump(const std::string& name, TestClass kind, const Vector& center, double radius) {
    const double r2 = radius * radius;
    auto spatial = [center, r2](const Point& x) { return bump((x.coords - center).squaredNorm() / r2); };
    auto spatial_grad = [center, r2](const Point& x) -> Vector {
        const Vector d = x.coords - center;
        return (2.0 * bump_slope(d.squaredNorm() / r2) / r2) * d;
    };
    TestFunction f;
    f.name = name;
    f.kind = kind;
    f.support = {center.array() - radius, center.array() + radius};
    if (kind == TestClass::interior) {
        // time bump on (0,1) in u = 2t - 1
        auto time = [](double t) { const double u = 2.0 * t - 1.0; return bump(u * u); };
        auto time_slope = [](double t) { const double u = 2.0 * t - 1.0; return 4.0 * u * bump_slope(u * u); };
        f.value = [=](double t, const Point& x) { return time(t) * spatial(x); };
        f.dt = [=](double t, const Point& x) { return time_slope(t) * spatial(x); };
        f.chart_gradient = [=](double t, const Point& x) -> Vector { return time(t) * spatial_grad(x); };
    } else {
        f.value = [=](double t, const Point& x) { return ramp(t) * spatial(x); };
        f.dt = [=](double t, const Point& x) { return ramp_slope(t) * spatial(x); };
        f.chart_gradient = [=](double t, const Point& x) -> Vector { return ramp(t) * spatial_grad(x); };
    }
    return f;
}

}  // namespace

TestFunction linear_test_function(const Vector& direction, const Vector& center, const Box& box, double margin) {
    const int n = static_cast<int>(box.lower.size());
    if (direction.size() != n || center.size() != n) throw InputError("test function dimension mismatch");
    if (!(margin > 0.0)) throw InputError("cutoff margin must be positive");
    const Vector lo = box.lower.array() - 2.0 * margin;
    const Vector hi = box.upper.array() + 2.0 * margin;
    // cutoff(x) = prod_d rise(x_d) * fall(x_d), equal to 1 on box +- margin
    auto factor = [=](int d, double x) {
        return smooth_step((x - lo[d]) / margin) * smooth_step((hi[d] - x) / margin);
    };
    auto factor_slope = [=](int d, double x) {
        const double a = smooth_step((x - lo[d]) / margin);
        const double b = smooth_step((hi[d] - x) / margin);
        return (smooth_step_slope((x - lo[d]) / margin) * b - a * smooth_step_slope((hi[d] - x) / margin)) / margin;
    };
    auto spatial = [=](const Point& x) {
        double c = direction.dot(x.coords - center);
        for (int d = 0; d < n; ++d) c *= factor(d, x[d]);
        return c;
    };
    auto spatial_grad = [=](const Point& x) -> Vector {
        const double ell = direction.dot(x.coords - center);
        Vector g(n);
        for (int d = 0; d < n; ++d) {
            double v = direction[d] * factor(d, x[d]) + ell * factor_slope(d, x[d]);
            for (int e = 0; e < n; ++e) {
                if (e != d) v *= factor(e, x[e]);
            }
            g[d] = v;
        }
        return g;
    };
    TestFunction f;
    f.name = "linear.closed";
    f.kind = TestClass::closed;
    f.support = {lo, hi};
    f.value = [=](double t, const Point& x) { return ramp(t) * spatial(x); };
    f.dt = [=](double t, const Point& x) { return ramp_slope(t) * spatial(x); };
    f.chart_gradient = [=](double t, const Point& x) -> Vector { return ramp(t) * spatial_grad(x); };
    return f;
}

std::vector<TestFunction> standard_basis(const DiscreteMeasure& mu0, const DiscreteMeasure& mu1) {
    if (mu0.dim() != mu1.dim()) throw InputError("measures live in different dimensions");
    static constexpr int kPrimes[kMaxChartDim] = {2, 3, 5, 7, 11, 13, 17, 19};
    const int n = mu0.dim();
    const Box box = joint_box(mu0, mu1);
    const Vector extent = box.upper - box.lower;
    const double scale = std::max(extent.norm(), 1.0);
    const double radius = std::max(1.5 * extent.norm(), 1.0);
    const Vector lower = box.lower - 0.25 * extent;
    const Vector span = 1.5 * extent;
    const Vector mid = 0.5 * (box.lower + box.upper);

    std::vector<TestFunction> basis;
    for (int c = 1; c <= 6; ++c) {
        Vector center(n);
        Vector direction(n);
        for (int d = 0; d < n; ++d) {
            center[d] = lower[d] + span[d] * halton(c, kPrimes[d]);
            direction[d] = 2.0 * halton(c + 6, kPrimes[d]) - 1.0;
        }
        if (c <= n || direction.norm() == 0.0) direction = Vector::Unit(n, (c - 1) % n);
        direction *= 0.5 / (direction.norm() * scale);
        const std::string tag = std::to_string(c);
        basis.push_back(radial_bump("bump" + tag + ".interior", TestClass::interior, center, radius));
        TestFunction lin = linear_test_function(direction, mid, box, scale);
        lin.name = "linear" + tag + ".closed";
        basis.push_back(std::move(lin));
    }
    return basis;
}

TestFunction coordinate_test_function(int k, const Box& box, double margin) {
    if (k < 0 || k >= box.lower.size()) throw InputError("coordinate index out of range");
    const int n = static_cast<int>(box.lower.size());
    TestFunction f = linear_test_function(Vector::Unit(n, k), Vector::Zero(n), box, margin);
    f.name = "coordinate" + std::to_string(k) + ".closed";
    return f;
}

TransportMeasure build_from_plan(const Manifold& m, const Plan& plan, const DiscreteMeasure& mu0,
                                 const DiscreteMeasure& mu1, const ShootingConfig& cfg) {
    check_admissible(plan, mu0, mu1);
    std::vector<WeightedCurve> curves;
    for (const auto& e : plan.entries) {
        if (e.weight <= 0.0) continue;
        GeodesicPath path;
        try {
            path = connect(m, mu0[e.i].point, mu1[e.j].point, cfg);
        } catch (const ConnectionFailure& err) {
            throw ConnectionFailure("plan entry (" + std::to_string(e.i) + "," + std::to_string(e.j) + "): " +
                                        err.what(),
                                    err.best_residual());
        }
        curves.push_back({GeneralizedCurve::dirac(SampledCurve::from_path(path)), e.weight});
    }
    return TransportMeasure(std::move(curves));
}

double relaxed_cost(const TransportMeasure& eta) {
    const std::size_t steps = eta.steps();
    double total = 0.0;
    for (const auto& wc : eta.curves()) {
        double energy = 0.0;
        for (std::size_t k = 0; k <= steps; ++k) energy += trapezoid_weight(k, steps) * wc.curve.second_moment(k);
        total += wc.weight * energy;
    }
    return total;
}

double pair_cost(const TransportMeasure& eta) {
    const std::size_t steps = eta.steps();
    double total = 0.0;
    for (std::size_t k = 0; k <= steps; ++k) {
        double slice = 0.0;
        for (const auto& s : averaged_field(eta, k)) slice += s.weight * s.velocity.squared_norm();
        total += trapezoid_weight(k, steps) * slice;
    }
    return total;
}

ContinuityResidual continuity_residual(const Manifold& m, const TransportMeasure& eta, const DiscreteMeasure& mu0,
                                       const DiscreteMeasure& mu1, const std::vector<TestFunction>& basis) {
    if (basis.empty()) throw InputError("continuity_residual needs a nonempty test-function basis");
    const std::size_t steps = eta.steps();
    ContinuityResidual out;
    for (const auto& phi : basis) {
        double lhs = 0.0;
        for (const auto& wc : eta.curves()) {
            const auto& g = wc.curve;
            double along = 0.0;
            for (std::size_t k = 0; k <= steps; ++k) {
                const double t = g.curve.times[k];
                const Point& x = g.curve.points[k];
                const Vector grad = phi.grad_h(m, t, x).frame_coeffs;
                double integrand = 0.0;
                for (const auto& a : g.laws[k]) integrand += a.probability * a.v.frame_coeffs.dot(grad);
                along += trapezoid_weight(k, steps) * (phi.dt(t, x) + integrand);
            }
            lhs += wc.weight * along;
        }
        double rhs = 0.0;
        for (const auto& a : mu1.atoms()) rhs += a.weight * phi.value(1.0, a.point);
        for (const auto& a : mu0.atoms()) rhs -= a.weight * phi.value(0.0, a.point);
        const double r = std::abs(lhs - rhs);
        out.per_function.push_back(r);
        if (phi.kind == TestClass::interior) {
            out.max_interior = std::max(out.max_interior, r);
        } else {
            out.max_closed = std::max(out.max_closed, r);
        }
    }
    return out;
}

Plan extract_plan(const TransportMeasure& eta, const DiscreteMeasure& mu0, const DiscreteMeasure& mu1) {
    Plan plan{mu0.size(), mu1.size(), {}};
    for (std::size_t c = 0; c < eta.curves().size(); ++c) {
        const auto& wc = eta.curves()[c];
        const std::size_t i = mu0.find(wc.curve.curve.points.front());
        const std::size_t j = mu1.find(wc.curve.curve.points.back());
        if (i == DiscreteMeasure::npos || j == DiscreteMeasure::npos) {
            throw InputError("curve " + std::to_string(c) + " does not start and end on support atoms");
        }
        plan.entries.push_back({i, j, wc.weight});
    }
    return plan.normalized();
}

TightenResult tighten(const Manifold& m, const TransportMeasure& eta, const DiscreteMeasure& mu0,
                      const DiscreteMeasure& mu1, const ShootingConfig& cfg, const CostMatrix* costs) {
    double radius = 0.0;
    if (costs != nullptr) {
        radius = std::sqrt(costs->values.maxCoeff());
    } else {
        for (const auto& a : mu0.atoms()) {
            for (const auto& b : mu1.atoms()) radius = std::max(radius, distance(m, a.point, b.point, cfg));
        }
    }
    const double slack = 1e-9 * (1.0 + radius);
    const std::size_t steps = eta.steps();

    auto near_support = [&](const Point& p, const DiscreteMeasure& mu) {
        for (const auto& a : mu.atoms()) {
            if (distance(m, p, a.point, cfg) <= radius + slack) return true;
        }
        return false;
    };

    // A curve starting on supp mu0 stays within arc length of its start, and
    // likewise for its end; only samples beyond both bounds need shooting.
    auto leaves_k = [&](const GeneralizedCurve& g) {
        std::vector<double> from_start(steps + 1, 0.0);
        const double h = 1.0 / static_cast<double>(steps);
        for (std::size_t k = 1; k <= steps; ++k) {
            const double s0 = std::sqrt(g.curve.velocities[k - 1].squared_norm());
            const double s1 = std::sqrt(g.curve.velocities[k].squared_norm());
            from_start[k] = from_start[k - 1] + 0.5 * h * (s0 + s1);
        }
        const double length = from_start.back();
        const bool starts_on = mu0.find(g.curve.points.front()) != DiscreteMeasure::npos;
        const bool ends_on = mu1.find(g.curve.points.back()) != DiscreteMeasure::npos;
        for (std::size_t k = 0; k <= steps; ++k) {
            const Point& p = g.curve.points[k];
            const bool in0 = (starts_on && from_start[k] <= radius + slack) || near_support(p, mu0);
            if (!in0) return true;
            const bool in1 = (ends_on && length - from_start[k] <= radius + slack) || near_support(p, mu1);
            if (!in1) return true;
        }
        return false;
    };

    ShootingConfig grid = cfg;
    grid.steps = static_cast<int>(steps);
    std::vector<WeightedCurve> curves;
    std::vector<std::size_t> replaced;
    for (std::size_t c = 0; c < eta.curves().size(); ++c) {
        const auto& wc = eta.curves()[c];
        if (!leaves_k(wc.curve)) {
            curves.push_back(wc);
            continue;
        }
        const GeodesicPath path = connect(m, wc.curve.curve.points.front(), wc.curve.curve.points.back(), grid);
        curves.push_back({GeneralizedCurve::dirac(SampledCurve::from_path(path)), wc.weight});
        replaced.push_back(c);
    }
    return {TransportMeasure(std::move(curves)), std::move(replaced), radius};
}

MomentBound moment_bound(const Manifold& m, const TransportMeasure& eta, const Point& x0, const ShootingConfig& cfg) {
    // distances are cached by exact coordinates so both routes see the same values
    std::map<std::vector<double>, double> cache;
    auto dist = [&](const Point& p) {
        std::vector<double> key(p.coords.data(), p.coords.data() + p.dim());
        auto it = cache.find(key);
        if (it != cache.end()) return it->second;
        const double d = distance(m, x0, p, cfg);
        cache.emplace(std::move(key), d);
        return d;
    };
    const std::size_t steps = eta.steps();
    MomentBound out;
    for (const auto& wc : eta.curves()) {
        double along = 0.0;
        for (std::size_t k = 0; k <= steps; ++k) {
            along += trapezoid_weight(k, steps) * (dist(wc.curve.curve.points[k]) + wc.curve.second_moment(k));
        }
        out.total += wc.weight * along;
    }
    for (std::size_t k = 0; k <= steps; ++k) {
        double slice = 0.0;
        const DiscreteMeasure mu_t = marginal_path(eta, k);
        for (const auto& a : mu_t.atoms()) slice += a.weight * dist(a.point);
        out.distance_term += trapezoid_weight(k, steps) * slice;
    }
    out.energy_term = relaxed_cost(eta);
    return out;
}

bool EquivalenceReport::passed() const {
    return std::all_of(assertions.begin(), assertions.end(), [](const Assertion& a) { return a.passed; });
}

std::vector<std::string> EquivalenceReport::failures() const {
    std::vector<std::string> out;
    for (const auto& a : assertions) {
        if (!a.passed) out.push_back(a.name);
    }
    return out;
}

namespace {

template <typename F>
auto stage(const char* name, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const ConnectionFailure& e) {
        throw ConnectionFailure(std::string(name) + ": " + e.what(), e.best_residual());
    } catch (const NumericalError& e) {
        throw NumericalError(std::string(name) + ": " + e.what());
    } catch (const InputError& e) {
        throw InputError(std::string(name) + ": " + e.what());
    }
}

}  // namespace

EquivalenceReport verify_equivalence(const Manifold& m, const DiscreteMeasure& mu0, const DiscreteMeasure& mu1,
                                     const VerifyConfig& cfg) {
    if (mu0.dim() != m.chart_dim() || mu1.dim() != m.chart_dim()) {
        throw InputError("measure dimension does not match the manifold chart");
    }
    const auto& tol = cfg.tolerances;
    EquivalenceReport r;
    r.atoms0 = mu0.size();
    r.atoms1 = mu1.size();
    r.tolerances = tol;

    const CostMatrix costs = stage("cost_matrix", [&] { return cost_matrix(m, mu0, mu1, cfg.shooting); });
    const KantorovichSolution lp = stage("solve_exact", [&] { return solve_exact(costs, mu0, mu1); });
    const Plan plan = cfg.plan_override ? cfg.plan_override(lp.plan) : lp.plan;
    r.plan_entries = plan.entries.size();
    r.c_kan = lp.cost;
    r.dual_gap = lp.dual_gap;

    const TransportMeasure eta = stage("build_from_plan", [&] { return build_from_plan(m, plan, mu0, mu1, cfg.shooting); });
    r.c_bb_star = relaxed_cost(eta);
    r.c_bb_pair = pair_cost(eta);

    const auto basis = standard_basis(mu0, mu1);
    const ContinuityResidual res = continuity_residual(m, eta, mu0, mu1, basis);
    r.residual_con_t = res.max_interior;
    r.residual_con_star = res.max_closed;

    const TightenResult tight = stage("tighten", [&] { return tighten(m, eta, mu0, mu1, cfg.shooting, &costs); });
    r.tighten_delta = r.c_bb_star - relaxed_cost(tight.measure);
    r.tighten_replaced = tight.replaced.size();

    const Plan extracted = stage("extract_plan", [&] { return extract_plan(tight.measure, mu0, mu1); });
    r.j_kan_extracted = plan_cost(extracted, costs);
    r.extracted_marginal_violation = marginal_violation(extracted, mu0, mu1);

    auto check = [&](const std::string& name, double value, double threshold, bool ok) {
        r.assertions.push_back({name, ok, value, threshold});
    };
    const double gap = std::abs(r.c_kan - r.c_bb_star);
    check("kan_equals_bb_star", gap, tol.equivalence, gap <= tol.equivalence);
    check("extracted_not_below_kan", r.c_kan - r.j_kan_extracted, tol.extracted_lower,
          r.j_kan_extracted >= r.c_kan - tol.extracted_lower);
    check("extracted_not_above_bb_star", r.j_kan_extracted - r.c_bb_star, tol.extracted_upper,
          r.j_kan_extracted <= r.c_bb_star + tol.extracted_upper);
    check("jensen_pair_below_relaxed", r.c_bb_pair - r.c_bb_star, tol.jensen, r.c_bb_pair <= r.c_bb_star + tol.jensen);
    check("continuity_interior", r.residual_con_t, tol.interior, r.residual_con_t <= tol.interior);
    check("continuity_closed", r.residual_con_star, tol.closed, r.residual_con_star <= tol.closed);
    check("tighten_monotone", -r.tighten_delta, tol.tighten, r.tighten_delta >= -tol.tighten);
    check("lp_certificate", r.dual_gap, tol.dual_gap, r.dual_gap <= tol.dual_gap);
    check("extracted_plan_admissible", r.extracted_marginal_violation, tol.marginal,
          r.extracted_marginal_violation <= tol.marginal);
    return r;
}

void write_report(std::ostream& out, const EquivalenceReport& r, const std::string& manifold,
                  const std::optional<std::string>& timestamp) {
    out << "srot-report v1\n";
    if (timestamp) out << "generated = " << *timestamp << '\n';
    out << "manifold = " << manifold << '\n';
    out << "atoms.mu0 = " << r.atoms0 << '\n';
    out << "atoms.mu1 = " << r.atoms1 << '\n';
    out << "plan.entries = " << r.plan_entries << '\n';
    out << "c_kan = " << format_double(r.c_kan) << '\n';
    out << "c_bb_star = " << format_double(r.c_bb_star) << '\n';
    out << "c_bb_pair = " << format_double(r.c_bb_pair) << '\n';
    out << "j_kan_extracted = " << format_double(r.j_kan_extracted) << '\n';
    out << "lp.dual_gap = " << format_double(r.dual_gap) << '\n';
    out << "residual.con_t.detector_family = " << format_double(r.residual_con_t) << '\n';
    out << "residual.con_star.detector_family = " << format_double(r.residual_con_star) << '\n';
    out << "tighten.delta = " << format_double(r.tighten_delta) << '\n';
    out << "tighten.replaced = " << r.tighten_replaced << '\n';
    out << "extracted.marginal_violation = " << format_double(r.extracted_marginal_violation) << '\n';
    for (const auto& a : r.assertions) {
        out << "assert." << a.name << " = " << (a.passed ? "PASS" : "FAIL") << " value=" << format_double(a.value)
            << " threshold=" << format_double(a.threshold) << '\n';
    }
    out << "result = " << (r.passed() ? "PASS" : "FAIL") << '\n';
}

}  // namespace srot
