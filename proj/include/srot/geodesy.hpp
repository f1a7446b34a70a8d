#pragma once

#include "srot/srgeom.hpp"

#include <numbers>
#include <optional>
#include <utility>
#include <vector>

namespace srot {

/// Knobs of the multistart shooting solver behind connect().
struct ShootingConfig {
    int steps = 256;            ///< RK4 steps on [0,1]; also the sample count of returned paths
    int angular = 32;           ///< directions on the unit sphere of horizontal momenta
    int radial = 5;             ///< geometric grid of horizontal speeds
    int vertical = 33;          ///< values per vertical momentum direction
    double vertical_span = 4.0 * std::numbers::pi;
    int screen_steps = 16;      ///< coarse RK4 steps used to rank the seed grid
    int refine_seeds = 8;       ///< vertical groups whose best seed is refined
    int max_iterations = 100;
    double bvp_tol = 1e-8;      ///< endpoint residual, chart units
    double energy_tol = 1e-7;   ///< relative window for tie-breaking
    double fd_step = 1e-6;
    double chart_bound = 1e6;
    int threads = 1;            ///< workers for distance matrices

    /// Throws InputError on out-of-range values.
    void validate() const;
};

struct PathSample {
    double t = 0.0;
    Point point;
    HorizontalVector velocity;
};

/// Constant-speed normal geodesic on the unit interval, sampled at steps+1
/// uniform times.
struct GeodesicPath {
    Point start;
    Covector initial;
    std::vector<PathSample> samples;
    double energy = 0.0;                ///< trapezoid integral of |velocity|^2
    double max_hamiltonian_drift = 0.0; ///< max_t |H(l_t) - H(l_0)| / H(l_0)
    double endpoint_residual = 0.0;     ///< shooting miss before the endpoint was set to y

    const Point& end() const { return samples.back().point; }
    int steps() const { return static_cast<int>(samples.size()) - 1; }
};

/// Integrates Hamilton's equations from lambda0 over [0,1] with fixed-step RK4.
/// Throws IntegrationBlowUp if a coordinate exceeds chart_bound.
GeodesicPath exp_map(const Manifold& m, const Covector& lambda0, int steps,
                     double chart_bound = 1e6);

/// Endpoint of the projected flow; no samples are stored. Empty on blow-up.
std::optional<Vector> shoot_endpoint(const FrameField& field, const Vector& x0, const Vector& p0,
                                     int steps, double chart_bound);

/// Minimal-energy geodesic from x to y found by multistart shooting.
///
/// Seeds are a product grid of horizontal directions, speeds and vertical
/// momenta; the best seeds are refined by damped Gauss-Newton on the endpoint
/// residual. Among converged solutions whose energy is within energy_tol of the
/// best, the lexicographically smallest initial momenta win, so the result is
/// a deterministic function of (x, y, cfg). The last sample is set to y.
/// Throws ConnectionFailure when no branch meets bvp_tol.
GeodesicPath connect(const Manifold& m, const Point& x, const Point& y, const ShootingConfig& cfg);

/// sqrt(connect(...).energy); exactly zero for x == y.
double distance(const Manifold& m, const Point& x, const Point& y, const ShootingConfig& cfg);

/// max over shared sample times of distance(a(t), b(t)).
double geodesic_sup_distance(const Manifold& m, const GeodesicPath& a, const GeodesicPath& b,
                             const ShootingConfig& cfg);

struct ChowFailure {
    std::size_t index = 0;
    double residual = 0.0;
};

struct ChowReport {
    std::size_t attempted = 0;
    std::size_t succeeded = 0;
    double worst_residual = 0.0;
    std::vector<ChowFailure> failures;

    double success_rate() const {
        return attempted == 0 ? 1.0 : static_cast<double>(succeeded) / static_cast<double>(attempted);
    }
};

ChowReport chow_connectivity_check(const Manifold& m,
                                   const std::vector<std::pair<Point, Point>>& pairs,
                                   const ShootingConfig& cfg);

}  // namespace srot
