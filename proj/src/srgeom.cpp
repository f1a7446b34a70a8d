#include "srot/srgeom.hpp"

#include "srot/errors.hpp"

namespace srot {

Point::Point(std::initializer_list<double> c) : coords(static_cast<Eigen::Index>(c.size())) {
    if (c.size() > static_cast<std::size_t>(kMaxChartDim)) {
        throw InputError("point dimension exceeds kMaxChartDim");
    }
    Eigen::Index i = 0;
    for (double v : c) coords[i++] = v;
}

void FrameField::hamilton_rhs(const Vector& x, const Vector& p, Vector& dx, Vector& dp) const {
    const FrameMatrix f = frame(x);
    const Vector h = f.transpose() * p;
    dx = f * h;
    dp.resize(x.size());
    for (int j = 0; j < x.size(); ++j) {
        // dH/dx_j = sum_i h_i <p, d_j X_i>
        dp[j] = -h.dot(frame_partial(x, j).transpose() * p);
    }
}

namespace {

class HeisenbergField final : public FrameField {
public:
    int chart_dim() const override { return 3; }
    int horizontal_rank() const override { return 2; }

    FrameMatrix frame(const Vector& x) const override {
        FrameMatrix f(3, 2);
        f << 1.0, 0.0,
             0.0, 1.0,
             -0.5 * x[1], 0.5 * x[0];
        return f;
    }

    FrameMatrix frame_partial(const Vector& /*x*/, int j) const override {
        FrameMatrix d = FrameMatrix::Zero(3, 2);
        if (j == 0) d(2, 1) = 0.5;
        if (j == 1) d(2, 0) = -0.5;
        return d;
    }

    void hamilton_rhs(const Vector& x, const Vector& p, Vector& dx, Vector& dp) const override {
        const double h1 = p[0] - 0.5 * x[1] * p[2];
        const double h2 = p[1] + 0.5 * x[0] * p[2];
        dx.resize(3);
        dx[0] = h1;
        dx[1] = h2;
        dx[2] = 0.5 * (x[0] * h2 - x[1] * h1);
        dp.resize(3);
        dp[0] = -0.5 * h2 * p[2];
        dp[1] = 0.5 * h1 * p[2];
        dp[2] = 0.0;
    }
};

class EuclideanField final : public FrameField {
public:
    explicit EuclideanField(int n) : n_(n) {}

    int chart_dim() const override { return n_; }
    int horizontal_rank() const override { return n_; }

    FrameMatrix frame(const Vector& /*x*/) const override { return FrameMatrix::Identity(n_, n_); }

    FrameMatrix frame_partial(const Vector& /*x*/, int /*j*/) const override {
        return FrameMatrix::Zero(n_, n_);
    }

    void hamilton_rhs(const Vector& /*x*/, const Vector& p, Vector& dx, Vector& dp) const override {
        dx = p;
        dp = Vector::Zero(n_);
    }

private:
    int n_;
};

}  // namespace

Manifold::Manifold(std::string name, std::shared_ptr<const FrameField> field)
    : name_(std::move(name)), field_(std::move(field)) {}

HorizontalVector Manifold::gradient_h(const Point& x, const Vector& chart_gradient) const {
    return {x, pair_with_frame(x, chart_gradient)};
}

Vector Manifold::to_chart(const HorizontalVector& v) const {
    return frame(v.base) * v.frame_coeffs;
}

Vector Manifold::pair_with_frame(const Point& x, const Vector& momenta) const {
    return frame(x).transpose() * momenta;
}

void Manifold::check_point(const Point& x) const {
    if (x.dim() != chart_dim()) {
        throw InputError("point has dimension " + std::to_string(x.dim()) + ", manifold " + name_ +
                         " expects " + std::to_string(chart_dim()));
    }
    if (!x.finite()) throw InputError("point has non-finite coordinates");
}

Manifold heisenberg() {
    return Manifold("heisenberg", std::make_shared<HeisenbergField>());
}

Manifold euclidean(int n) {
    if (n < 1 || n > kMaxChartDim) {
        throw InputError("euclidean dimension must be in [1, " + std::to_string(kMaxChartDim) +
                         "], got " + std::to_string(n));
    }
    return Manifold("euclidean", std::make_shared<EuclideanField>(n));
}

double hamiltonian(const Manifold& m, const Covector& lambda) {
    return 0.5 * m.pair_with_frame(lambda.base, lambda.momenta).squaredNorm();
}

}  // namespace srot
