#pragma once

#include "srot/geodesy.hpp"
#include "srot/srgeom.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace srot {

/// Chart distance below which two atoms are the same point.
inline constexpr double kMergeTolerance = 1e-12;

struct Atom {
    Point point;
    double weight = 0.0;
};

struct Box {
    Vector lower;
    Vector upper;

    bool contains(const Point& p) const;
};

/// Finitely supported probability measure on the chart.
class DiscreteMeasure {
public:
    /// Validates: nonempty, positive finite weights summing to 1 (1e-12),
    /// consistent dimension, finite coordinates. The bounding box defaults to
    /// the coordinate hull of the atoms.
    explicit DiscreteMeasure(std::vector<Atom> atoms);
    DiscreteMeasure(std::vector<Atom> atoms, Box box);

    int dim() const { return dim_; }
    std::size_t size() const { return atoms_.size(); }
    const std::vector<Atom>& atoms() const { return atoms_; }
    const Atom& operator[](std::size_t i) const { return atoms_[i]; }
    const Box& box() const { return box_; }

    /// Index of the atom within kMergeTolerance of p, or npos.
    std::size_t find(const Point& p) const;

    static constexpr std::size_t npos = static_cast<std::size_t>(-1);

private:
    std::vector<Atom> atoms_;
    int dim_ = 0;
    Box box_;
};

/// Uniform weights over the given points.
DiscreteMeasure uniform_measure(const std::vector<Point>& points);

struct PlanEntry {
    std::size_t i = 0;
    std::size_t j = 0;
    double weight = 0.0;
};

/// Coupling between two discrete measures, stored sparsely.
struct Plan {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<PlanEntry> entries;

    std::vector<double> row_sums() const;
    std::vector<double> col_sums() const;
    /// Entries sorted by (i, j) with duplicates summed and zeros dropped.
    Plan normalized() const;
};

/// max |row/col sum - marginal weight| over all atoms.
double marginal_violation(const Plan& plan, const DiscreteMeasure& mu0, const DiscreteMeasure& mu1);

/// Throws InputError unless indices are in range, weights are >= 0 and
/// marginals match within tol.
void check_admissible(const Plan& plan, const DiscreteMeasure& mu0, const DiscreteMeasure& mu1,
                      double tol = 1e-10);

/// A curve sampled on the shared time grid with its horizontal velocities.
struct SampledCurve {
    std::vector<double> times;
    std::vector<Point> points;
    std::vector<HorizontalVector> velocities;

    static SampledCurve from_path(const GeodesicPath& path);
    std::size_t size() const { return points.size(); }
};

struct VelocityAtom {
    HorizontalVector v;
    double probability = 1.0;
};

/// A curve with a finite velocity law at every sample time.
struct GeneralizedCurve {
    SampledCurve curve;
    std::vector<std::vector<VelocityAtom>> laws;  ///< one law per sample time

    /// Dirac law on the curve's own velocity at every time.
    static GeneralizedCurve dirac(SampledCurve c);

    /// Probability-weighted mean velocity coefficients at sample k.
    Vector barycenter(std::size_t k) const;
    /// sum_v p(v) |v|^2 at sample k.
    double second_moment(std::size_t k) const;
};

struct WeightedCurve {
    GeneralizedCurve curve;
    double weight = 0.0;
};

/// Young transport measure stored by its decomposition into generalized
/// curves; the measure on I x HM is derived from it.
class TransportMeasure {
public:
    /// Validates weights (positive, sum 1 within 1e-12), a shared uniform grid,
    /// per-time probabilities (sum 1 within 1e-12) and the barycenter property
    /// (mean velocity equals the curve velocity within 1e-6).
    explicit TransportMeasure(std::vector<WeightedCurve> curves);

    const std::vector<WeightedCurve>& curves() const { return curves_; }
    const std::vector<double>& time_grid() const { return times_; }
    std::size_t steps() const { return times_.size() - 1; }
    int dim() const;

private:
    std::vector<WeightedCurve> curves_;
    std::vector<double> times_;
};

/// mu_t: push-forward of the curve weights to their positions at time t_index.
DiscreteMeasure marginal_path(const TransportMeasure& eta, std::size_t t_index);

struct FieldSample {
    Point point;
    HorizontalVector velocity;
    double weight = 0.0;
};

/// Mean velocity over every curve passing through each distinct point at t_index.
std::vector<FieldSample> averaged_field(const TransportMeasure& eta, std::size_t t_index);

/// One (t, point, v) atom of the measure on I x HM, with its mass.
struct YoungSample {
    std::size_t t_index = 0;
    Point point;
    HorizontalVector v;
    double mass = 0.0;
};

/// The measure on I x HM as a flat list of weighted samples.
std::vector<YoungSample> flatten(const TransportMeasure& eta);

// --- text files -----------------------------------------------------------

DiscreteMeasure read_measure(std::istream& in);
DiscreteMeasure read_measure(const std::filesystem::path& path);
void write_measure(std::ostream& out, const DiscreteMeasure& mu);
void write_measure(const std::filesystem::path& path, const DiscreteMeasure& mu);

Plan read_plan(std::istream& in);
Plan read_plan(const std::filesystem::path& path);
void write_plan(std::ostream& out, const Plan& plan);
void write_plan(const std::filesystem::path& path, const Plan& plan);

/// Per-curve weight, energy and endpoints.
void write_transport_summary(std::ostream& out, const TransportMeasure& eta);

/// Shortest round-trip decimal representation.
std::string format_double(double v);

}  // namespace srot
