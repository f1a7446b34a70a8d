#include "srot/geodesy.hpp"

#include "srot/errors.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <string>

namespace srot {

void ShootingConfig::validate() const {
    auto require = [](bool ok, const char* what) {
        if (!ok) throw InputError(std::string("shooting config: ") + what);
    };
    require(steps >= 8, "steps must be >= 8");
    require(angular >= 1, "angular must be >= 1");
    require(radial >= 1, "radial must be >= 1");
    require(vertical >= 1, "vertical must be >= 1");
    require(vertical_span > 0.0, "vertical_span must be > 0");
    require(screen_steps >= 1, "screen_steps must be >= 1");
    require(refine_seeds >= 1, "refine_seeds must be >= 1");
    require(max_iterations >= 1, "max_iterations must be >= 1");
    require(bvp_tol > 0.0, "bvp_tol must be > 0");
    require(energy_tol > 0.0, "energy_tol must be > 0");
    require(fd_step > 0.0, "fd_step must be > 0");
    require(chart_bound > 0.0, "chart_bound must be > 0");
    require(threads >= 1, "threads must be >= 1");
}

namespace {

struct State {
    Vector x;
    Vector p;
};

bool escaped(const Vector& x, double bound) {
    return !x.allFinite() || x.cwiseAbs().maxCoeff() > bound;
}

void rk4_step(const FrameField& field, State& s, double h) {
    Vector k1x, k1p, k2x, k2p, k3x, k3p, k4x, k4p;
    field.hamilton_rhs(s.x, s.p, k1x, k1p);
    field.hamilton_rhs(s.x + 0.5 * h * k1x, s.p + 0.5 * h * k1p, k2x, k2p);
    field.hamilton_rhs(s.x + 0.5 * h * k2x, s.p + 0.5 * h * k2p, k3x, k3p);
    field.hamilton_rhs(s.x + h * k3x, s.p + h * k3p, k4x, k4p);
    s.x += (h / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
    s.p += (h / 6.0) * (k1p + 2.0 * k2p + 2.0 * k3p + k4p);
}

GeodesicPath constant_path(const Manifold& m, const Point& x, int steps) {
    GeodesicPath path;
    path.start = x;
    path.initial = {x, Vector::Zero(m.chart_dim())};
    path.samples.reserve(steps + 1);
    for (int k = 0; k <= steps; ++k) {
        const double t = static_cast<double>(k) / steps;
        path.samples.push_back({t, x, {x, Vector::Zero(m.horizontal_rank())}});
    }
    return path;
}

bool lex_less(const Vector& a, const Vector& b) {
    return std::lexicographical_compare(a.data(), a.data() + a.size(), b.data(), b.data() + b.size());
}

// Orthonormal basis of the annihilator of the horizontal space at x,
// sign-normalized so that the largest entry of each column is positive.
Eigen::MatrixXd vertical_directions(const FrameMatrix& frame) {
    const Eigen::MatrixXd ft = frame.transpose();
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(ft, Eigen::ComputeFullV);
    const Eigen::Index n = ft.cols();
    const Eigen::Index m = ft.rows();
    Eigen::MatrixXd kernel = svd.matrixV().rightCols(n - m);
    for (Eigen::Index c = 0; c < kernel.cols(); ++c) {
        Eigen::Index arg = 0;
        kernel.col(c).cwiseAbs().maxCoeff(&arg);
        if (kernel(arg, c) < 0.0) kernel.col(c) *= -1.0;
    }
    return kernel;
}

std::vector<Vector> horizontal_directions(int rank, int angular, const Vector& displacement_coeffs) {
    std::vector<Vector> dirs;
    if (rank == 1) {
        dirs.push_back(Vector::Constant(1, 1.0));
        dirs.push_back(Vector::Constant(1, -1.0));
    } else if (rank == 2) {
        for (int k = 0; k < angular; ++k) {
            const double a = 2.0 * std::numbers::pi * k / angular;
            Vector u(2);
            u << std::cos(a), std::sin(a);
            dirs.push_back(u);
        }
    } else {
        for (int i = 0; i < rank; ++i) {
            for (double s : {1.0, -1.0}) {
                Vector u = Vector::Zero(rank);
                u[i] = s;
                dirs.push_back(u);
            }
        }
    }
    const double len = displacement_coeffs.norm();
    if (len > 0.0) dirs.push_back(displacement_coeffs / len);
    return dirs;
}

struct Seed {
    Vector momenta;
    Vector unit;  // horizontal direction
    int group = 0;
    int direction = 0;
    double residual = std::numeric_limits<double>::infinity();
};

struct Solution {
    Vector momenta;
    double energy = 0.0;
};

class Shooter {
public:
    Shooter(const Manifold& m, const Point& x, const Point& y, const ShootingConfig& cfg)
        : field_(m.field()), x_(x.coords), y_(y.coords), cfg_(cfg) {}

    std::optional<Vector> residual(const Vector& p, int steps) const {
        auto end = shoot_endpoint(field_, x_, p, steps, cfg_.chart_bound);
        if (!end) return std::nullopt;
        return Vector(*end - y_);
    }

    // Damped Gauss-Newton (Levenberg-Marquardt) on the endpoint residual.
    std::pair<Vector, double> refine(Vector p, int steps, double target) const {
        const int n = static_cast<int>(p.size());
        auto r = residual(p, steps);
        if (!r) return {p, std::numeric_limits<double>::infinity()};
        double rnorm = r->norm();
        double lambda = -1.0;

        for (int iter = 0; iter < cfg_.max_iterations && rnorm > target; ++iter) {
            Eigen::MatrixXd jac(n, n);
            bool ok = true;
            const double scale = std::max(p.norm(), 1e-8);
            for (int j = 0; j < n && ok; ++j) {
                const double h = cfg_.fd_step * scale;
                Vector qp = p;
                Vector qm = p;
                qp[j] += h;
                qm[j] -= h;
                auto rp = residual(qp, steps);
                auto rm = residual(qm, steps);
                if (!rp || !rm) {
                    ok = false;
                    break;
                }
                jac.col(j) = (*rp - *rm) / (2.0 * h);
            }
            if (!ok) break;

            const Eigen::MatrixXd jtj = jac.transpose() * jac;
            const Eigen::VectorXd jtr = jac.transpose() * Eigen::VectorXd(*r);
            if (lambda < 0.0) lambda = 1e-6 * std::max(jtj.diagonal().maxCoeff(), 1e-12);

            bool accepted = false;
            for (int attempt = 0; attempt < 12; ++attempt) {
                Eigen::MatrixXd a = jtj;
                a.diagonal().array() += lambda;
                const Eigen::VectorXd delta = a.ldlt().solve(-jtr);
                Vector candidate = p + Vector(delta);
                auto rc = residual(candidate, steps);
                if (rc && rc->norm() < rnorm) {
                    p = candidate;
                    r = rc;
                    rnorm = rc->norm();
                    lambda = std::max(lambda * 0.1, 1e-18);
                    accepted = true;
                    break;
                }
                lambda *= 10.0;
            }
            if (!accepted) break;
        }
        return {p, rnorm};
    }

    std::vector<Seed> seed_grid(const Manifold& m, const Point& x) const {
        const FrameMatrix frame = m.frame(x);
        const int rank = m.horizontal_rank();
        const Eigen::MatrixXd gram = (frame.transpose() * frame).eval();
        const Eigen::MatrixXd lift = frame * gram.inverse();  // F (F^T F)^{-1}
        const Eigen::MatrixXd vertical = vertical_directions(frame);

        const Vector disp = y_ - x_;
        const double chart = disp.norm();
        const double lo = 0.5 * std::min(chart, std::sqrt(chart));
        const double hi = 4.0 * std::max(chart, std::sqrt(chart));
        std::vector<double> speeds;
        if (cfg_.radial == 1) {
            speeds.push_back(std::sqrt(lo * hi));
        } else {
            for (int k = 0; k < cfg_.radial; ++k) {
                speeds.push_back(lo * std::pow(hi / lo, static_cast<double>(k) / (cfg_.radial - 1)));
            }
        }
        const auto dirs = horizontal_directions(rank, cfg_.angular, Vector(frame.transpose() * disp));

        // Product grid over every vertical direction.
        const int vdim = static_cast<int>(vertical.cols());
        std::vector<Eigen::VectorXd> vgrid;
        {
            const int per = cfg_.vertical;
            long total = 1;
            for (int d = 0; d < vdim; ++d) total *= per;
            for (long idx = 0; idx < total; ++idx) {
                Eigen::VectorXd v = Eigen::VectorXd::Zero(x.dim());
                long rest = idx;
                for (int d = 0; d < vdim; ++d) {
                    const int k = static_cast<int>(rest % per);
                    rest /= per;
                    const double s = per == 1 ? 0.0
                                              : -cfg_.vertical_span +
                                                    2.0 * cfg_.vertical_span * k / (per - 1);
                    v += s * vertical.col(d);
                }
                vgrid.push_back(v);
            }
        }

        std::vector<Seed> seeds;
        seeds.reserve(vgrid.size() * dirs.size() * speeds.size());
        for (std::size_t g = 0; g < vgrid.size(); ++g) {
            for (std::size_t d = 0; d < dirs.size(); ++d) {
                const Vector& u = dirs[d];
                for (double s : speeds) {
                    Seed seed;
                    seed.momenta = Vector(lift * Eigen::VectorXd(s * u) + vgrid[g]);
                    seed.unit = u;
                    seed.group = static_cast<int>(g);
                    seed.direction = static_cast<int>(d);
                    seeds.push_back(std::move(seed));
                }
            }
        }
        return seeds;
    }

private:
    const FrameField& field_;
    Vector x_;
    Vector y_;
    const ShootingConfig& cfg_;
};

}  // namespace

std::optional<Vector> shoot_endpoint(const FrameField& field, const Vector& x0, const Vector& p0,
                                     int steps, double chart_bound) {
    State s{x0, p0};
    const double h = 1.0 / steps;
    for (int k = 0; k < steps; ++k) {
        rk4_step(field, s, h);
        if (escaped(s.x, chart_bound) || !s.p.allFinite()) return std::nullopt;
    }
    return s.x;
}

GeodesicPath exp_map(const Manifold& m, const Covector& lambda0, int steps, double chart_bound) {
    if (steps < 8) throw InputError("exp_map: steps must be >= 8");
    m.check_point(lambda0.base);
    if (lambda0.momenta.size() != m.chart_dim() || !lambda0.momenta.allFinite()) {
        throw InputError("exp_map: momenta must be finite with chart dimension");
    }
    const FrameField& field = m.field();
    GeodesicPath path;
    path.start = lambda0.base;
    path.initial = lambda0;
    path.samples.reserve(steps + 1);

    State s{lambda0.base.coords, lambda0.momenta};
    const double h = 1.0 / steps;
    const double h0 = 0.5 * m.pair_with_frame(lambda0.base, lambda0.momenta).squaredNorm();
    double drift = 0.0;
    double energy = 0.0;

    for (int k = 0; k <= steps; ++k) {
        if (k > 0) {
            rk4_step(field, s, h);
            if (escaped(s.x, chart_bound) || !s.p.allFinite()) {
                throw IntegrationBlowUp("hamiltonian flow left the chart bound", k * h);
            }
        }
        Point here(s.x);
        Vector coeffs = field.frame(s.x).transpose() * s.p;
        const double speed2 = coeffs.squaredNorm();
        if (h0 > 0.0) drift = std::max(drift, std::abs(0.5 * speed2 - h0) / h0);
        energy += (k == 0 || k == steps ? 0.5 : 1.0) * speed2 * h;
        path.samples.push_back({k * h, here, {here, std::move(coeffs)}});
    }
    path.samples.back().t = 1.0;
    path.energy = energy;
    path.max_hamiltonian_drift = drift;
    return path;
}

GeodesicPath connect(const Manifold& m, const Point& x, const Point& y, const ShootingConfig& cfg) {
    cfg.validate();
    m.check_point(x);
    m.check_point(y);
    if (x == y) return constant_path(m, x, cfg.steps);

    // A miss must also be small next to the displacement itself, otherwise
    // nearly coincident points accept any short loop.
    const double bvp_target = std::min(cfg.bvp_tol, 1e-3 * (y.coords - x.coords).norm());

    Shooter shooter(m, x, y, cfg);
    std::vector<Seed> seeds = shooter.seed_grid(m, x);
    for (auto& seed : seeds) {
        if (auto r = shooter.residual(seed.momenta, cfg.screen_steps)) seed.residual = r->norm();
    }
    std::vector<std::size_t> order(seeds.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return seeds[a].residual < seeds[b].residual;
    });

    // Refine the best seed of each of the most promising vertical groups, so
    // distinct turning families each get a Levenberg-Marquardt run.
    const double tight = 1e-13 * (1.0 + y.coords.norm());
    std::vector<Solution> solutions;
    std::set<int> taken;
    double best_residual = std::numeric_limits<double>::infinity();
    std::vector<std::size_t> chosen;
    for (std::size_t idx : order) {
        if (static_cast<int>(taken.size()) >= cfg.refine_seeds) break;
        if (!std::isfinite(seeds[idx].residual)) break;
        if (taken.insert(seeds[idx].group).second) chosen.push_back(idx);
    }
    for (std::size_t idx : chosen) {
        auto [p, res] = shooter.refine(seeds[idx].momenta, cfg.steps, tight);
        best_residual = std::min(best_residual, res);
        if (res <= bvp_target) solutions.push_back({p, m.pair_with_frame(x, p).squaredNorm()});
    }
    if (solutions.empty()) {
        throw ConnectionFailure("no multistart branch converged (best residual " +
                                    std::to_string(best_residual) + ")",
                                best_residual);
    }

    double best_energy = std::numeric_limits<double>::infinity();
    for (const auto& s : solutions) best_energy = std::min(best_energy, s.energy);
    const double window = best_energy * (1.0 + cfg.energy_tol) + 1e-300;
    const Solution* pick = nullptr;
    for (const auto& s : solutions) {
        if (s.energy > window) continue;
        if (pick == nullptr || lex_less(s.momenta, pick->momenta)) pick = &s;
    }

    GeodesicPath path = exp_map(m, {x, pick->momenta}, cfg.steps, cfg.chart_bound);
    path.endpoint_residual = (path.end().coords - y.coords).norm();
    path.samples.back().point = y;
    path.samples.back().velocity.base = y;
    return path;
}

double distance(const Manifold& m, const Point& x, const Point& y, const ShootingConfig& cfg) {
    if (x == y) {
        m.check_point(x);
        return 0.0;
    }
    return std::sqrt(connect(m, x, y, cfg).energy);
}

double geodesic_sup_distance(const Manifold& m, const GeodesicPath& a, const GeodesicPath& b,
                             const ShootingConfig& cfg) {
    if (a.samples.size() != b.samples.size()) {
        throw InputError("geodesic_sup_distance: paths have different sample counts");
    }
    double sup = 0.0;
    for (std::size_t k = 0; k < a.samples.size(); ++k) {
        if (a.samples[k].t != b.samples[k].t) {
            throw InputError("geodesic_sup_distance: paths have different time grids");
        }
        sup = std::max(sup, distance(m, a.samples[k].point, b.samples[k].point, cfg));
    }
    return sup;
}

ChowReport chow_connectivity_check(const Manifold& m,
                                   const std::vector<std::pair<Point, Point>>& pairs,
                                   const ShootingConfig& cfg) {
    ChowReport report;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        ++report.attempted;
        try {
            const GeodesicPath path = connect(m, pairs[i].first, pairs[i].second, cfg);
            report.worst_residual = std::max(report.worst_residual, path.endpoint_residual);
            ++report.succeeded;
        } catch (const ConnectionFailure& e) {
            report.failures.push_back({i, e.best_residual()});
            report.worst_residual = std::max(report.worst_residual, e.best_residual());
        }
    }
    return report;
}

}  // namespace srot
