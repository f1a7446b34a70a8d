#include "srot/kantorovich.hpp"

#include "srot/errors.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <numeric>
#include <thread>

namespace srot {

namespace {

constexpr double kBalanceTolerance = 1e-10;

std::vector<double> weights_of(const DiscreteMeasure& mu) {
    std::vector<double> w;
    w.reserve(mu.size());
    for (const auto& a : mu.atoms()) w.push_back(a.weight);
    return w;
}

void check_problem(const CostMatrix& cost, const DiscreteMeasure& mu0, const DiscreteMeasure& mu1) {
    if (cost.rows() != static_cast<Eigen::Index>(mu0.size()) || cost.cols() != static_cast<Eigen::Index>(mu1.size())) {
        throw InputError("cost matrix shape does not match the measures");
    }
    if (!cost.values.allFinite()) throw InputError("cost matrix has non-finite entries");
    double a = 0.0;
    double b = 0.0;
    for (const auto& x : mu0.atoms()) a += x.weight;
    for (const auto& x : mu1.atoms()) b += x.weight;
    if (std::abs(a - b) > kBalanceTolerance) {
        throw InputError("unbalanced marginals: total masses " + format_double(a) + " and " + format_double(b));
    }
}

// Basis of the transportation simplex: a spanning tree on rows (0..n-1) and
// columns (n..n+m-1) whose edges are the basic cells.
class TransportSimplex {
public:
    TransportSimplex(const Eigen::MatrixXd& cost, std::vector<double> supply, std::vector<double> demand)
        : c_(cost), n_(cost.rows()), m_(cost.cols()), flow_(cost.rows(), cost.cols()),
          basic_(cost.rows(), cost.cols()) {
        flow_.setZero();
        basic_.setZero();
        northwest_corner(std::move(supply), std::move(demand));
    }

    void run() {
        const double tol = 1e-13 * (1.0 + c_.cwiseAbs().maxCoeff());
        for (;;) {
            compute_potentials();
            Eigen::Index ei = -1;
            Eigen::Index ej = -1;
            for (Eigen::Index i = 0; i < n_ && ei < 0; ++i) {
                for (Eigen::Index j = 0; j < m_; ++j) {
                    if (!basic_(i, j) && c_(i, j) - u_[i] - v_[j] < -tol) {
                        ei = i;
                        ej = j;
                        break;
                    }
                }
            }
            if (ei < 0) return;
            pivot(ei, ej);
        }
    }

    const Eigen::MatrixXd& flow() const { return flow_; }
    const std::vector<double>& u() const { return u_; }
    const std::vector<double>& v() const { return v_; }
    bool basic(Eigen::Index i, Eigen::Index j) const { return basic_(i, j) != 0; }

private:
    void northwest_corner(std::vector<double> a, std::vector<double> b) {
        Eigen::Index i = 0;
        Eigen::Index j = 0;
        for (;;) {
            const double q = std::max(0.0, std::min(a[i], b[j]));
            flow_(i, j) = q;
            basic_(i, j) = 1;
            a[i] -= q;
            b[j] -= q;
            if (i == n_ - 1 && j == m_ - 1) break;
            if (j == m_ - 1 || (i < n_ - 1 && a[i] <= b[j])) {
                ++i;
            } else {
                ++j;
            }
        }
    }

    // Depth-first walk over the basis tree; rows fix u, columns fix v.
    void compute_potentials() {
        u_.assign(n_, 0.0);
        v_.assign(m_, 0.0);
        std::vector<char> seen_row(n_, 0), seen_col(m_, 0);
        std::vector<Eigen::Index> stack{0};  // encoded node: row r -> r, column c -> n_ + c
        seen_row[0] = 1;
        while (!stack.empty()) {
            const Eigen::Index node = stack.back();
            stack.pop_back();
            if (node < n_) {
                for (Eigen::Index j = 0; j < m_; ++j) {
                    if (basic_(node, j) && !seen_col[j]) {
                        v_[j] = c_(node, j) - u_[node];
                        seen_col[j] = 1;
                        stack.push_back(n_ + j);
                    }
                }
            } else {
                const Eigen::Index j = node - n_;
                for (Eigen::Index i = 0; i < n_; ++i) {
                    if (basic_(i, j) && !seen_row[i]) {
                        u_[i] = c_(i, j) - v_[j];
                        seen_row[i] = 1;
                        stack.push_back(i);
                    }
                }
            }
        }
    }

    // Tree path from row `ei` to column `ej`, as a list of nodes.
    std::vector<Eigen::Index> tree_path(Eigen::Index ei, Eigen::Index ej) const {
        const Eigen::Index total = n_ + m_;
        std::vector<Eigen::Index> parent(total, -2);
        std::vector<Eigen::Index> queue{ei};
        parent[ei] = -1;
        for (std::size_t head = 0; head < queue.size(); ++head) {
            const Eigen::Index node = queue[head];
            if (node == n_ + ej) break;
            if (node < n_) {
                for (Eigen::Index j = 0; j < m_; ++j) {
                    if (basic_(node, j) && parent[n_ + j] == -2) {
                        parent[n_ + j] = node;
                        queue.push_back(n_ + j);
                    }
                }
            } else {
                for (Eigen::Index i = 0; i < n_; ++i) {
                    if (basic_(i, node - n_) && parent[i] == -2) {
                        parent[i] = node;
                        queue.push_back(i);
                    }
                }
            }
        }
        std::vector<Eigen::Index> path;
        for (Eigen::Index node = n_ + ej; node != -1; node = parent[node]) path.push_back(node);
        return path;  // column ej ... row ei
    }

    void pivot(Eigen::Index ei, Eigen::Index ej) {
        const auto path = tree_path(ei, ej);
        // Cells along the cycle: entering (+), then alternating -/+ along the
        // path from column ej back to row ei.
        struct Cell {
            Eigen::Index i, j;
        };
        std::vector<Cell> minus, plus;
        for (std::size_t k = 0; k + 1 < path.size(); ++k) {
            const Eigen::Index a = path[k];
            const Eigen::Index b = path[k + 1];
            const Cell cell = a < n_ ? Cell{a, b - n_} : Cell{b, a - n_};
            (k % 2 == 0 ? minus : plus).push_back(cell);
        }
        double theta = std::numeric_limits<double>::infinity();
        for (const auto& c : minus) theta = std::min(theta, flow_(c.i, c.j));
        Cell leaving{n_, m_};
        for (const auto& c : minus) {
            if (flow_(c.i, c.j) == theta && (c.i < leaving.i || (c.i == leaving.i && c.j < leaving.j))) leaving = c;
        }
        for (const auto& c : minus) flow_(c.i, c.j) -= theta;
        for (const auto& c : plus) flow_(c.i, c.j) += theta;
        flow_(ei, ej) = theta;
        flow_(leaving.i, leaving.j) = 0.0;
        basic_(leaving.i, leaving.j) = 0;
        basic_(ei, ej) = 1;
    }

    const Eigen::MatrixXd& c_;
    Eigen::Index n_, m_;
    Eigen::MatrixXd flow_;
    Eigen::Matrix<char, Eigen::Dynamic, Eigen::Dynamic> basic_;
    std::vector<double> u_, v_;
};

constexpr int kSweepsBeforeNewton = 100;
constexpr int kNewtonSteps = 50;

double log_sum_exp(const Eigen::Ref<const Eigen::VectorXd>& x) {
    const double c = x.maxCoeff();
    if (!std::isfinite(c)) return c;
    return c + std::log((x.array() - c).exp().sum());
}

// Altschuler-Weed-Rigollet rounding onto the transport polytope.
Eigen::MatrixXd round_to_polytope(Eigen::MatrixXd p, const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    const Eigen::VectorXd r = p.rowwise().sum();
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
        if (r[i] > 0.0) p.row(i) *= std::min(a[i] / r[i], 1.0);
    }
    const Eigen::VectorXd c = p.colwise().sum().transpose();
    for (Eigen::Index j = 0; j < p.cols(); ++j) {
        if (c[j] > 0.0) p.col(j) *= std::min(b[j] / c[j], 1.0);
    }
    const Eigen::VectorXd ea = a - p.rowwise().sum();
    const Eigen::VectorXd eb = b - p.colwise().sum().transpose();
    const double mass = ea.lpNorm<1>();
    if (mass > 0.0) p += ea * eb.transpose() / mass;
    return p;
}

}  // namespace

CostMatrix cost_matrix(const Manifold& m, const DiscreteMeasure& mu0, const DiscreteMeasure& mu1,
                       const ShootingConfig& cfg) {
    cfg.validate();
    if (mu0.dim() != m.chart_dim() || mu1.dim() != m.chart_dim()) {
        throw InputError("measure dimension does not match the manifold chart");
    }
    const auto rows = static_cast<Eigen::Index>(mu0.size());
    const auto cols = static_cast<Eigen::Index>(mu1.size());
    CostMatrix out{Eigen::MatrixXd::Zero(rows, cols)};
    const Eigen::Index total = rows * cols;

    std::exception_ptr failure;
    Eigen::Index failed_at = total;
    std::mutex guard;
    auto work = [&](int worker, int workers) {
        for (Eigen::Index k = worker; k < total; k += workers) {
            const Eigen::Index i = k / cols;
            const Eigen::Index j = k % cols;
            try {
                const double d = distance(m, mu0[i].point, mu1[j].point, cfg);
                out.values(i, j) = d * d;
            } catch (...) {
                std::lock_guard lock(guard);
                // keep the first failing entry in index order, independent of scheduling
                if (k < failed_at) {
                    failed_at = k;
                    failure = std::current_exception();
                }
            }
        }
    };
    const int workers = std::max(1, std::min<int>(cfg.threads, static_cast<int>(total)));
    if (workers == 1) {
        work(0, 1);
    } else {
        std::vector<std::jthread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(work, w, workers);
    }
    if (failure) {
        const std::string where = "(" + std::to_string(failed_at / cols) + "," + std::to_string(failed_at % cols) + ")";
        try {
            std::rethrow_exception(failure);
        } catch (const ConnectionFailure& e) {
            throw ConnectionFailure("cost entry " + where + ": " + e.what(), e.best_residual());
        } catch (const NumericalError& e) {
            throw NumericalError("cost entry " + where + ": " + e.what());
        }
    }
    return out;
}

double plan_cost(const Plan& plan, const CostMatrix& cost) {
    double total = 0.0;
    for (const auto& e : plan.entries) {
        total += e.weight * cost(static_cast<Eigen::Index>(e.i), static_cast<Eigen::Index>(e.j));
    }
    return total;
}

KantorovichSolution solve_exact(const CostMatrix& cost, const DiscreteMeasure& mu0, const DiscreteMeasure& mu1) {
    check_problem(cost, mu0, mu1);
    TransportSimplex simplex(cost.values, weights_of(mu0), weights_of(mu1));
    simplex.run();

    KantorovichSolution sol;
    sol.solver = SolverKind::exact;
    sol.plan.rows = mu0.size();
    sol.plan.cols = mu1.size();
    const auto& flow = simplex.flow();
    for (Eigen::Index i = 0; i < flow.rows(); ++i) {
        for (Eigen::Index j = 0; j < flow.cols(); ++j) {
            if (simplex.basic(i, j) && flow(i, j) > 0.0) {
                sol.plan.entries.push_back({static_cast<std::size_t>(i), static_cast<std::size_t>(j), flow(i, j)});
            }
        }
    }
    sol.cost = plan_cost(sol.plan, cost);
    sol.row_potential = simplex.u();
    sol.col_potential = simplex.v();

    // Certificate: dual infeasibility, complementary slackness and the
    // primal-dual objective gap.
    double infeasibility = 0.0;
    double slackness = 0.0;
    for (Eigen::Index i = 0; i < flow.rows(); ++i) {
        for (Eigen::Index j = 0; j < flow.cols(); ++j) {
            const double reduced = cost(i, j) - sol.row_potential[i] - sol.col_potential[j];
            infeasibility = std::max(infeasibility, -reduced);
            slackness += flow(i, j) * std::abs(reduced);
        }
    }
    double dual = 0.0;
    for (std::size_t i = 0; i < mu0.size(); ++i) dual += mu0[i].weight * sol.row_potential[i];
    for (std::size_t j = 0; j < mu1.size(); ++j) dual += mu1[j].weight * sol.col_potential[j];
    sol.dual_gap = std::max({infeasibility, slackness, std::abs(sol.cost - dual)});
    return sol;
}

KantorovichSolution solve_entropic(const CostMatrix& cost, const DiscreteMeasure& mu0, const DiscreteMeasure& mu1,
                                   const EntropicOptions& options) {
    check_problem(cost, mu0, mu1);
    if (!(options.epsilon > 0.0)) throw InputError("entropic solver needs epsilon > 0");
    if (!(options.epsilon_start >= options.epsilon)) throw InputError("epsilon_start must be >= epsilon");
    if (!(options.anneal_factor > 0.0 && options.anneal_factor < 1.0)) {
        throw InputError("anneal_factor must lie in (0,1)");
    }
    if (options.max_iter < 1) throw InputError("max_iter must be >= 1");

    const Eigen::MatrixXd& c = cost.values;
    const Eigen::Index n = c.rows();
    const Eigen::Index m = c.cols();
    Eigen::VectorXd a(n), b(m);
    for (Eigen::Index i = 0; i < n; ++i) a[i] = mu0[i].weight;
    for (Eigen::Index j = 0; j < m; ++j) b[j] = mu1[j].weight;
    const Eigen::VectorXd log_a = a.array().log();
    const Eigen::VectorXd log_b = b.array().log();

    std::vector<double> schedule;
    for (double eps = options.epsilon_start; eps > options.epsilon * (1.0 + 1e-12); eps *= options.anneal_factor) {
        schedule.push_back(eps);
    }
    schedule.push_back(options.epsilon);

    Eigen::VectorXd f = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(m);
    KantorovichSolution sol;
    sol.solver = SolverKind::entropic;
    sol.epsilon = options.epsilon;
    int used = 0;
    Eigen::MatrixXd plan;

    auto kernel = [&](double eps) {
        return Eigen::MatrixXd(((f.replicate(1, m) + g.transpose().replicate(n, 1) - c) / eps).array().exp());
    };
    auto fit_rows = [&](double eps) {
        for (Eigen::Index i = 0; i < n; ++i) {
            f[i] = eps * log_a[i] - eps * log_sum_exp((g - c.row(i).transpose()) / eps);
        }
    };
    // semi-dual objective in g, with f eliminated
    auto semi_dual = [&](double eps, const Eigen::VectorXd& gg) {
        double v = b.dot(gg);
        for (Eigen::Index i = 0; i < n; ++i) {
            v += a[i] * (eps * log_a[i] - eps * log_sum_exp((gg - c.row(i).transpose()) / eps));
        }
        return v;
    };

    // Newton steps on the semi-dual; the gauge is fixed by leaving g[m-1] alone.
    // Returns the column violation reached.
    auto newton_polish = [&](double eps, int& budget) {
        fit_rows(eps);
        Eigen::MatrixXd p = kernel(eps);
        double violation = (p.colwise().sum().transpose() - b).lpNorm<1>();
        while (violation > options.tolerance && budget > 0 && m > 1) {
            --budget;
            const Eigen::VectorXd grad = b - p.colwise().sum().transpose();
            Eigen::MatrixXd hess = -(p.transpose() * a.cwiseInverse().asDiagonal() * p);
            hess.diagonal() += p.colwise().sum().transpose();
            hess /= eps;
            const Eigen::Index k = m - 1;
            Eigen::MatrixXd reduced = hess.topLeftCorner(k, k);
            reduced.diagonal().array() += 1e-13 * reduced.diagonal().maxCoeff();
            Eigen::VectorXd step = Eigen::VectorXd::Zero(m);
            step.head(k) = reduced.ldlt().solve(grad.head(k));
            if (!step.allFinite()) break;
            const double base = semi_dual(eps, g);
            const double slope = grad.dot(step);
            double t = 1.0;
            bool accepted = false;
            for (int halving = 0; halving < 40; ++halving, t *= 0.5) {
                const Eigen::VectorXd trial = g + t * step;
                if (semi_dual(eps, trial) >= base + 1e-4 * t * slope) {
                    g = trial;
                    accepted = true;
                    break;
                }
            }
            if (!accepted) break;
            fit_rows(eps);
            p = kernel(eps);
            violation = (p.colwise().sum().transpose() - b).lpNorm<1>();
        }
        return violation;
    };

    for (double eps : schedule) {
        int it = 0;
        double violation = std::numeric_limits<double>::infinity();
        while (violation > options.tolerance) {
            if (used >= options.max_iter) {
                throw NumericalError("sinkhorn did not converge at epsilon " + format_double(eps) +
                                     " (marginal violation " + format_double(violation) + ")");
            }
            fit_rows(eps);
            for (Eigen::Index j = 0; j < m; ++j) {
                g[j] = eps * log_b[j] - eps * log_sum_exp((f - c.col(j)) / eps);
            }
            ++it;
            ++used;
            violation = (kernel(eps).rowwise().sum() - a).lpNorm<1>();
            if (violation > options.tolerance && it % kSweepsBeforeNewton == 0) {
                int budget = std::min(kNewtonSteps, options.max_iter - used);
                const int before = budget;
                violation = newton_polish(eps, budget);
                it += before - budget;
                used += before - budget;
            }
        }
        plan = round_to_polytope(kernel(eps), a, b);
        sol.stages.push_back({eps, (plan.array() * c.array()).sum(), it});
    }

    sol.plan.rows = static_cast<std::size_t>(n);
    sol.plan.cols = static_cast<std::size_t>(m);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < m; ++j) {
            if (plan(i, j) > 0.0) {
                sol.plan.entries.push_back({static_cast<std::size_t>(i), static_cast<std::size_t>(j), plan(i, j)});
            }
        }
    }
    sol.cost = plan_cost(sol.plan, cost);
    sol.row_potential.assign(f.data(), f.data() + n);
    sol.col_potential.assign(g.data(), g.data() + m);
    return sol;
}

}  // namespace srot
