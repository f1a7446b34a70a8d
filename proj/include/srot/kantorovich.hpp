#pragma once

#include "srot/geodesy.hpp"
#include "srot/measures.hpp"

#include <Eigen/Core>

#include <string>
#include <vector>

namespace srot {

/// Squared sub-Riemannian distances between the atoms of two measures.
struct CostMatrix {
    Eigen::MatrixXd values;

    Eigen::Index rows() const { return values.rows(); }
    Eigen::Index cols() const { return values.cols(); }
    double operator()(Eigen::Index i, Eigen::Index j) const { return values(i, j); }
};

/// Entries d^2(x_i, y_j) via geodesy::connect, computed on cfg.threads
/// workers. The result does not depend on the worker count.
CostMatrix cost_matrix(const Manifold& m, const DiscreteMeasure& mu0, const DiscreteMeasure& mu1,
                       const ShootingConfig& cfg);

enum class SolverKind { exact, entropic };

struct AnnealStage {
    double epsilon = 0.0;
    double cost = 0.0;        ///< transport cost of the rounded plan at this epsilon
    int iterations = 0;
};

struct KantorovichSolution {
    Plan plan;
    double cost = 0.0;
    SolverKind solver = SolverKind::exact;
    double epsilon = 0.0;             ///< entropic only
    double dual_gap = 0.0;            ///< exact only: optimality certificate residual
    std::vector<double> row_potential;
    std::vector<double> col_potential;
    std::vector<AnnealStage> stages;  ///< entropic only
};

/// sum_ij w_ij C_ij
double plan_cost(const Plan& plan, const CostMatrix& cost);

/// Transportation simplex with Bland's rule: northwest-corner start, entering
/// cell = first (row-major) cell with negative reduced cost, leaving cell =
/// first among the tied minima. Throws InputError on unbalanced marginals.
KantorovichSolution solve_exact(const CostMatrix& cost, const DiscreteMeasure& mu0, const DiscreteMeasure& mu1);

struct EntropicOptions {
    double epsilon = 1e-3;        ///< final regularization
    double epsilon_start = 1.0;   ///< first annealing stage; equal to epsilon disables annealing
    double anneal_factor = 0.5;
    int max_iter = 200000;        ///< Sinkhorn sweeps, summed over stages
    double tolerance = 1e-12;     ///< row-marginal L1 violation that ends a stage
};

/// Log-domain Sinkhorn with epsilon annealing, then rounding onto the
/// transport polytope. Throws NumericalError when max_iter is exhausted.
KantorovichSolution solve_entropic(const CostMatrix& cost, const DiscreteMeasure& mu0, const DiscreteMeasure& mu1,
                                   const EntropicOptions& options);

}  // namespace srot
