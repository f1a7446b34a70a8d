#pragma once

#include "srot/dynamical.hpp"
#include "srot/measures.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

namespace srot::testing {

inline Point random_point(std::mt19937_64& rng, int dim, double lo = 0.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Vector v(dim);
    for (int d = 0; d < dim; ++d) v[d] = u(rng);
    return Point(v);
}

/// Time-s flow of the frame field X_i from x, RK4 with fine substeps.
inline Vector frame_flow(const Manifold& m, Vector x, int i, double s) {
    const int sub = 64;
    const double h = s / sub;
    auto rhs = [&](const Vector& y) -> Vector { return m.frame(Point(y)).col(i); };
    for (int k = 0; k < sub; ++k) {
        const Vector k1 = rhs(x);
        const Vector k2 = rhs(x + 0.5 * h * k1);
        const Vector k3 = rhs(x + 0.5 * h * k2);
        const Vector k4 = rhs(x + h * k3);
        x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    return x;
}

/// Weights normalized so they sum to 1 to the last bit.
inline std::vector<double> random_weights(std::mt19937_64& rng, std::size_t n, bool uniform) {
    std::vector<double> w(n, 1.0);
    if (!uniform) {
        std::uniform_real_distribution<double> u(0.2, 1.0);
        for (auto& x : w) x = u(rng);
    }
    double s = 0.0;
    for (double x : w) s += x;
    for (auto& x : w) x /= s;
    double t = 0.0;
    for (std::size_t i = 0; i + 1 < n; ++i) t += w[i];
    w.back() = 1.0 - t;
    return w;
}

inline DiscreteMeasure random_measure(std::mt19937_64& rng, std::size_t n, int dim, bool uniform) {
    const auto w = random_weights(rng, n, uniform);
    std::vector<Atom> atoms;
    for (std::size_t i = 0; i < n; ++i) atoms.push_back({random_point(rng, dim), w[i]});
    return DiscreteMeasure(std::move(atoms));
}

/// Random admissible plan: a random vertex-like greedy fill in random order,
/// mixed with the product coupling, so plans are generally not optimal.
inline Plan random_plan(std::mt19937_64& rng, const DiscreteMeasure& mu0, const DiscreteMeasure& mu1) {
    const std::size_t m = mu0.size();
    const std::size_t n = mu1.size();
    std::vector<std::size_t> rows(m), cols(n);
    for (std::size_t i = 0; i < m; ++i) rows[i] = i;
    for (std::size_t j = 0; j < n; ++j) cols[j] = j;
    std::shuffle(rows.begin(), rows.end(), rng);
    std::shuffle(cols.begin(), cols.end(), rng);
    std::vector<double> a(m), b(n);
    for (std::size_t i = 0; i < m; ++i) a[i] = mu0[i].weight;
    for (std::size_t j = 0; j < n; ++j) b[j] = mu1[j].weight;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double mix = u(rng);
    Plan p{m, n, {}};
    // northwest corner in shuffled order
    std::size_t r = 0, c = 0;
    while (r < m && c < n) {
        const double v = std::min(a[rows[r]], b[cols[c]]);
        p.entries.push_back({rows[r], cols[c], (1.0 - mix) * v});
        a[rows[r]] -= v;
        b[cols[c]] -= v;
        if (a[rows[r]] <= b[cols[c]]) ++r; else ++c;
    }
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) p.entries.push_back({i, j, mix * mu0[i].weight * mu1[j].weight});
    }
    return p.normalized();
}

/// Horizontal curve on H^1 from the origin to (1,0,0): x = t, y = L sin(2 pi t),
/// z closing the enclosed area to zero. Energy 1 + 2 pi^2 L^2.
inline SampledCurve heisenberg_detour(double amplitude, int steps) {
    const double pi = std::numbers::pi;
    SampledCurve c;
    for (int k = 0; k <= steps; ++k) {
        const double t = static_cast<double>(k) / steps;
        const double x = t;
        const double y = amplitude * std::sin(2.0 * pi * t);
        const double z = 0.5 * amplitude * (t * std::sin(2.0 * pi * t) + (std::cos(2.0 * pi * t) - 1.0) / pi);
        Point p{x, y, z};
        Vector v(2);
        v << 1.0, 2.0 * pi * amplitude * std::cos(2.0 * pi * t);
        c.times.push_back(t);
        c.points.push_back(p);
        c.velocities.push_back({p, v});
    }
    c.points.back() = Point{1.0, 0.0, 0.0};
    c.velocities.back().base = c.points.back();
    return c;
}

/// Constant curve at p carrying the two-point velocity law {(+v, 1/2), (-v, 1/2)}.
inline GeneralizedCurve plus_minus_mixture(const Point& p, const Vector& v, int steps) {
    GeneralizedCurve g;
    for (int k = 0; k <= steps; ++k) {
        const double t = static_cast<double>(k) / steps;
        g.curve.times.push_back(t);
        g.curve.points.push_back(p);
        g.curve.velocities.push_back({p, Vector::Zero(v.size())});
        g.laws.push_back({{{p, v}, 0.5}, {{p, -v}, 0.5}});
    }
    return g;
}

/// Straight Euclidean segment a -> b sampled with its constant velocity.
inline SampledCurve euclidean_segment(const Point& a, const Point& b, int steps) {
    SampledCurve c;
    const Vector v = b.coords - a.coords;
    for (int k = 0; k <= steps; ++k) {
        const double t = static_cast<double>(k) / steps;
        Point p(Vector(a.coords + t * v));
        if (k == steps) p = b;
        c.times.push_back(t);
        c.points.push_back(p);
        c.velocities.push_back({p, v});
    }
    return c;
}

}  // namespace srot::testing
