#pragma once

#include "srot/geodesy.hpp"
#include "srot/kantorovich.hpp"
#include "srot/measures.hpp"

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace srot {

enum class TestClass {
    interior,  ///< vanishes at t = 0 and t = 1
    closed,    ///< may be nonzero at the endpoints
};

/// Smooth compactly supported test function phi(t, x) with analytic
/// derivatives.
struct TestFunction {
    std::string name;
    TestClass kind = TestClass::interior;
    std::function<double(double, const Point&)> value;
    std::function<double(double, const Point&)> dt;
    std::function<Vector(double, const Point&)> chart_gradient;
    Box support;  ///< phi(t, x) = 0 for x outside

    HorizontalVector grad_h(const Manifold& m, double t, const Point& x) const {
        return m.gradient_h(x, chart_gradient(t, x));
    }
};

/// Detector family of 12 functions: six C-infinity radial bumps centered on
/// Halton points of the joint support box with an interior time bump, and six
/// closed-class linear functions (coordinate axes first, then Halton
/// directions) under a flat cutoff, ramped in time.
std::vector<TestFunction> standard_basis(const DiscreteMeasure& mu0, const DiscreteMeasure& mu1);

/// phi(t,x) = ramp(t) * x_k * cutoff(x), with cutoff == 1 on the box grown by
/// `margin`. Closed class.
TestFunction coordinate_test_function(int k, const Box& box, double margin);

/// phi(t,x) = ramp(t) * <direction, x - center> * cutoff(x). Closed class.
TestFunction linear_test_function(const Vector& direction, const Vector& center, const Box& box, double margin);

/// One generalized curve per plan entry: the connecting geodesic with a dirac
/// velocity law, weighted by the entry.
TransportMeasure build_from_plan(const Manifold& m, const Plan& plan, const DiscreteMeasure& mu0,
                                 const DiscreteMeasure& mu1, const ShootingConfig& cfg);

/// integral of |v|^2 d eta, trapezoid rule in time.
double relaxed_cost(const TransportMeasure& eta);

/// Benamou-Brenier cost of the averaged pair (mu_t, v_t).
double pair_cost(const TransportMeasure& eta);

struct ContinuityResidual {
    double max_interior = 0.0;
    double max_closed = 0.0;
    std::vector<double> per_function;  ///< same order as the basis
};

/// Weak continuity-equation defect for each test function:
/// |int d_t phi + <v, grad_H phi> d eta - (int phi(1) d mu1 - int phi(0) d mu0)|.
ContinuityResidual continuity_residual(const Manifold& m, const TransportMeasure& eta, const DiscreteMeasure& mu0,
                                       const DiscreteMeasure& mu1, const std::vector<TestFunction>& basis);

/// Pushes each curve's weight to its (start atom, end atom) pair.
/// Throws InputError when an endpoint is not an atom.
Plan extract_plan(const TransportMeasure& eta, const DiscreteMeasure& mu0, const DiscreteMeasure& mu1);

struct TightenResult {
    TransportMeasure measure;
    std::vector<std::size_t> replaced;  ///< indices of curves that left K
    double max_support_distance = 0.0;  ///< the radius defining K
};

/// Replaces every curve that leaves K = {x : d(x, supp mu0) <= D, d(x, supp mu1) <= D},
/// D the largest distance between the supports, by the geodesic joining its
/// endpoints. `costs`, when given, must be the squared distance matrix of the
/// supports and saves recomputing D.
TightenResult tighten(const Manifold& m, const TransportMeasure& eta, const DiscreteMeasure& mu0,
                      const DiscreteMeasure& mu1, const ShootingConfig& cfg, const CostMatrix* costs = nullptr);

struct MomentBound {
    double total = 0.0;          ///< int d(x0, pi(v)) + |v|^2 d eta, curve by curve
    double distance_term = 0.0;  ///< int int d(x0, x) d mu_t dt, through the marginals
    double energy_term = 0.0;    ///< relaxed_cost
};

MomentBound moment_bound(const Manifold& m, const TransportMeasure& eta, const Point& x0, const ShootingConfig& cfg);

struct VerifyTolerances {
    double equivalence = 1e-8;     ///< |C_Kan - J*_BB(F-built)|
    double extracted_lower = 1e-10;
    double extracted_upper = 1e-8;
    double jensen = 1e-10;
    double interior = 1e-8;
    double closed = 1e-6;
    double tighten = 1e-12;
    double dual_gap = 1e-9;
    double marginal = 1e-10;
};

struct VerifyConfig {
    ShootingConfig shooting;
    VerifyTolerances tolerances;
    /// Debugging hook: replaces the optimal plan before the dynamic stages.
    std::function<Plan(const Plan&)> plan_override;
};

struct Assertion {
    std::string name;
    bool passed = false;
    double value = 0.0;
    double threshold = 0.0;
};

struct EquivalenceReport {
    std::size_t atoms0 = 0;
    std::size_t atoms1 = 0;
    std::size_t plan_entries = 0;
    double c_kan = 0.0;
    double c_bb_star = 0.0;
    double c_bb_pair = 0.0;
    double j_kan_extracted = 0.0;
    double residual_con_t = 0.0;
    double residual_con_star = 0.0;
    double tighten_delta = 0.0;
    double dual_gap = 0.0;
    double extracted_marginal_violation = 0.0;
    std::size_t tighten_replaced = 0;
    VerifyTolerances tolerances;
    std::vector<Assertion> assertions;

    bool passed() const;
    /// Names of the failing assertions.
    std::vector<std::string> failures() const;
};

/// solve_exact -> build_from_plan -> costs, residuals, tighten, extract_plan.
/// Stage failures are rethrown with the stage name prepended.
EquivalenceReport verify_equivalence(const Manifold& m, const DiscreteMeasure& mu0, const DiscreteMeasure& mu1,
                                     const VerifyConfig& cfg);

/// `srot-report v1` followed by `key = value` lines. A `generated = ...` line
/// is written only when a timestamp is supplied.
void write_report(std::ostream& out, const EquivalenceReport& report, const std::string& manifold,
                  const std::optional<std::string>& timestamp = std::nullopt);

}  // namespace srot
