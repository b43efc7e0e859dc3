#pragma once

#include "sftgo/theory/solvers.hpp"

namespace sftgo::theory {

struct FitResult {
    double slope = 0.0;
    double intercept = 0.0;
    double r_squared = 0.0;
    bool clipped = false; // some errors were raised to the 1e-15 floor
};

// Ordinary least squares on (log T, log error). Errors below 1e-15 are
// clipped to the floor and flagged; fewer than 3 positive points is an error.
FitResult fit_rate(const std::vector<long>& horizons, const std::vector<double>& errors);

struct ConvergenceReport {
    std::vector<long> horizons;
    std::vector<double> mean_errors;               // per horizon, averaged over repeats
    std::vector<std::vector<double>> repeat_errors; // [horizon][repeat]
    std::vector<double> bounds;                    // B_theta * G / sqrt(T)
    FitResult fit;
    double reference_value = 0.0;    // certified lower bound on min L_GO
    double reference_residual = 0.0; // certificate of the reference solve
    long bound_violations = 0;
    bool pass = false; // all bounds hold and slope <= -0.35
};

struct SweepOptions {
    int repeats = 5;
    int batch_size = 8;
    long reference_budget_factor = 100; // reference budget = factor * max horizon
    double slope_threshold = -0.35;
};

// For each horizon T: T steps of projected stochastic subgradient descent
// with constant step B_theta / (G * sqrt(T)) started at the ball center, then
// the excess of the averaged iterate against a certified reference optimum.
// Mini-batch sampling supplies the stochasticity; the worst-group branch is
// selected from exact group means so the expected update is a true
// subgradient of the objective.
ConvergenceReport run_convergence_sweep(const ConvexInstance& inst, const std::vector<long>& horizons,
                                        int repeats, uint64_t seed, const SweepOptions& opts = {});

} // namespace sftgo::theory
