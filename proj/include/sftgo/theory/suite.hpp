#pragma once

#include <string>

#include "sftgo/theory/convergence.hpp"

namespace sftgo::theory {

struct TheorySuiteOptions {
    int n_instances = 20;
    uint64_t seed = 7;
    std::vector<double> lambdas = {0.3, 0.5, 0.9};
    double tolerance = 1e-4;
    std::vector<long> horizons = {100, 316, 1000, 3162, 10000};
    int repeats = 5;
    int batch_size = 8;
    long solver_budget = 200000;
    std::string out_dir; // empty = no files written
};

struct TheorySuiteResult {
    std::vector<Prop1Report> prop1;
    ConvergenceReport convergence;
    long prop1_failures = 0;
    long prop1_inconclusive = 0;
    bool pass = false;
};

// Random instance grid for the first proposition plus one canonical
// convergence sweep; writes prop1.csv, convergence.csv and summary.json when
// out_dir is set. Fully determined by the options (reruns are byte-identical).
TheorySuiteResult run_theory_suite(const TheorySuiteOptions& opts);

} // namespace sftgo::theory
