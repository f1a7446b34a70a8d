#pragma once

#include <Eigen/Core>

#include <memory>
#include <string>
#include <vector>

namespace srot {

/// Largest chart dimension supported. Keeps every small vector on the stack,
/// which matters inside the Hamiltonian integrator.
inline constexpr int kMaxChartDim = 8;

using Vector = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxChartDim, 1>;
using FrameMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxChartDim, kMaxChartDim>;

/// A point of the manifold in chart coordinates.
struct Point {
    Vector coords;

    Point() = default;
    explicit Point(Vector c) : coords(std::move(c)) {}
    Point(std::initializer_list<double> c);

    int dim() const { return static_cast<int>(coords.size()); }
    bool finite() const { return coords.allFinite(); }
    double operator[](int i) const { return coords[i]; }

    friend bool operator==(const Point& a, const Point& b) {
        return a.coords.size() == b.coords.size() && a.coords == b.coords;
    }
};

/// A cotangent vector at `base`; `momenta` are chart components.
struct Covector {
    Point base;
    Vector momenta;
};

/// A horizontal tangent vector, stored by its coefficients in the
/// orthonormal horizontal frame at `base`.
struct HorizontalVector {
    Point base;
    Vector frame_coeffs;

    double squared_norm() const { return frame_coeffs.squaredNorm(); }
};

/// Coordinate description of a sub-Riemannian structure with a global
/// g_SR-orthonormal horizontal frame.
class FrameField {
public:
    virtual ~FrameField() = default;

    virtual int chart_dim() const = 0;
    virtual int horizontal_rank() const = 0;

    /// Columns are X_1..X_m at x.
    virtual FrameMatrix frame(const Vector& x) const = 0;

    /// Partial derivative of the frame columns with respect to coordinate j.
    virtual FrameMatrix frame_partial(const Vector& x, int j) const = 0;

    /// Hamilton's equations for H = 1/2 sum <p, X_i(x)>^2. The default goes
    /// through frame() and frame_partial(); concrete structures may override.
    virtual void hamilton_rhs(const Vector& x, const Vector& p, Vector& dx, Vector& dp) const;
};

class Manifold {
public:
    Manifold(std::string name, std::shared_ptr<const FrameField> field);

    const std::string& name() const { return name_; }
    int chart_dim() const { return field_->chart_dim(); }
    int horizontal_rank() const { return field_->horizontal_rank(); }

    FrameMatrix frame(const Point& x) const { return field_->frame(x.coords); }
    const FrameField& field() const { return *field_; }

    /// Horizontal gradient from an analytic chart gradient: coefficients X_i f.
    HorizontalVector gradient_h(const Point& x, const Vector& chart_gradient) const;

    /// Chart velocity of a horizontal vector.
    Vector to_chart(const HorizontalVector& v) const;

    /// Frame coefficients of the projection of a chart covector onto the frame.
    Vector pair_with_frame(const Point& x, const Vector& momenta) const;

    /// Throws InputError unless x has the chart dimension and is finite.
    void check_point(const Point& x) const;

private:
    std::string name_;
    std::shared_ptr<const FrameField> field_;
};

/// First Heisenberg group on R^3 with X1 = dx - (y/2) dz, X2 = dy + (x/2) dz.
Manifold heisenberg();

/// R^n with the full distribution and the coordinate frame.
Manifold euclidean(int n);

/// H(lambda) = 1/2 sum_i <lambda, X_i(base)>^2.
double hamiltonian(const Manifold& m, const Covector& lambda);

}  // namespace srot
