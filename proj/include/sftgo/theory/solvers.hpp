#pragma once

#include "sftgo/theory/instance.hpp"

namespace sftgo::theory {

struct SolveResult {
    Eigen::MatrixXd theta;
    double objective = 0.0;       // exact loss value at theta
    double lower_bound = 0.0;     // certified lower bound on the optimum
    double certificate = 0.0;     // objective - lower_bound (>= true optimality gap)
    double mapping_norm = 0.0;    // final projected-gradient mapping norm
    long iterations = 0;          // gradient evaluations spent
    bool converged = false;
};

// High-accuracy minimizer of the mean CE over the ball via accelerated
// projected gradient with backtracking; stops at mapping norm <= tol or
// budget exhaustion. Non-convergence is reported, not fatal.
SolveResult solve_ce(const ConvexInstance& inst, long budget, double gap_tol = 1e-9);

// Near-minimizer of (1-lambda) * L_CE + lambda * max(L_G1, L_G0) over the
// ball. A subgradient warm-start phase with averaging and best-iterate
// tracking is followed by a refinement that solves the equivalent
// max_{mu in [0,1]} min_theta weighted-CE exchange problem; the gap between
// the best primal value and the best certified dual value is the
// duality-style certificate.
SolveResult solve_go(const ConvexInstance& inst, long budget, double gap_tol = 1e-9);
SolveResult solve_go(const ConvexInstance& inst, double lambda, long budget, double gap_tol = 1e-9);

struct Prop1Report {
    int instance_index = 0;
    double lambda = 0.0;
    double worst_at_go_opt = 0.0;
    double worst_at_ce_opt = 0.0;
    double ce_at_go_opt = 0.0;
    double ce_at_ce_opt = 0.0;
    double tolerance = 0.0;
    double solver_accuracy = 0.0; // worst certificate among the two solves
    bool pass = false;            // worst(go) <= worst(ce) + tol
    bool complementary_pass = false; // ce(ce) <= ce(go) + tol
    bool inconclusive = false;    // solver accuracy worse than tol / 10
};

// worst(theta_go) <= worst(theta_ce) + tol for each (instance, lambda) cell,
// plus the complementary CE-side check.
std::vector<Prop1Report> verify_prop1(const std::vector<ConvexInstance>& instances,
                                      const std::vector<double>& lambdas, double tolerance,
                                      long budget = 200000);

} // namespace sftgo::theory
