#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "sftgo/theory/convergence.hpp"
#include "sftgo/theory/suite.hpp"

using namespace sftgo;
using namespace sftgo::theory;

namespace {

// two-group instance where both groups hold identical copies of the points,
// so the group means agree everywhere
ConvexInstance duplicated_group_instance(uint64_t seed) {
    ConvexInstance base = gen_instance(40, 4, 3, 0.5, seed);
    ConvexInstance inst = base;
    long n = base.n_points();
    inst.features.resize(2 * n, base.dim());
    inst.labels.resize(static_cast<size_t>(2 * n));
    inst.groups.resize(static_cast<size_t>(2 * n));
    for (long i = 0; i < n; ++i) {
        inst.features.row(i) = base.features.row(i);
        inst.features.row(n + i) = base.features.row(i);
        inst.labels[static_cast<size_t>(i)] = base.labels[static_cast<size_t>(i)];
        inst.labels[static_cast<size_t>(n + i)] = base.labels[static_cast<size_t>(i)];
        inst.groups[static_cast<size_t>(i)] = 0;
        inst.groups[static_cast<size_t>(n + i)] = 1;
    }
    return inst;
}

Eigen::MatrixXd random_ball_point(const ConvexInstance& inst, Rng& rng) {
    Eigen::MatrixXd theta(inst.dim(), inst.n_classes);
    for (int r = 0; r < inst.dim(); ++r)
        for (int c = 0; c < inst.n_classes; ++c) theta(r, c) = rng.normal();
    double norm = theta.norm();
    if (norm > 0)
        theta *= inst.ball_radius * std::pow(rng.uniform(), 1.0 / (inst.dim() * inst.n_classes)) / norm;
    return inst.ball_center + theta;
}

} // namespace

TEST_CASE("gen_instance: exact group count, determinism, degenerate error") {
    ConvexInstance inst = gen_instance(200, 6, 3, 0.1, 42);
    long n1 = 0;
    for (int g : inst.groups) n1 += g;
    CHECK(n1 == 20);

    ConvexInstance again = gen_instance(200, 6, 3, 0.1, 42);
    CHECK((inst.features - again.features).norm() == 0.0);
    CHECK(inst.labels == again.labels);
    CHECK(inst.groups == again.groups);

    CHECK_THROWS_AS(gen_instance(200, 6, 3, 0.001, 1), ConfigError); // rounds to an empty group
    CHECK_THROWS_AS(gen_instance(3, 6, 3, 0.5, 1), ConfigError);
}

TEST_CASE("sampled subgradient norms never exceed the certified bound") {
    ConvexInstance inst = gen_instance(150, 5, 3, 0.25, 7);
    CHECK(max_sampled_subgrad_norm(inst, 10000, 99) <= inst.grad_bound);
}

TEST_CASE("group objective is convex along random segments") {
    ConvexInstance inst = gen_instance(120, 4, 3, 0.3, 13);
    Rng rng(14);
    for (int trial = 0; trial < 1000; ++trial) {
        Eigen::MatrixXd a = random_ball_point(inst, rng);
        Eigen::MatrixXd b = random_ball_point(inst, rng);
        double t = rng.uniform();
        double lambda = rng.uniform();
        double lhs = eval_losses(inst, t * a + (1.0 - t) * b, lambda).go;
        double rhs = t * eval_losses(inst, a, lambda).go + (1.0 - t) * eval_losses(inst, b, lambda).go;
        CHECK(lhs <= rhs + 1e-10);
    }
}

TEST_CASE("solve_ce: separable toy ends on the ball boundary") {
    ConvexInstance inst;
    inst.n_classes = 2;
    inst.features.resize(4, 2);
    inst.features << 1.0, 0.2, 0.9, -0.1, -1.0, 0.1, -0.8, -0.2;
    inst.labels = {0, 0, 1, 1};
    inst.groups = {0, 1, 0, 1};
    inst.ball_center = Eigen::MatrixXd::Zero(2, 2);
    inst.ball_radius = 0.1;
    inst.grad_bound = std::sqrt(2.0) * 1.5;
    inst.lambda = 0.5;
    inst.seed = 0;

    SolveResult res = solve_ce(inst, 50000);
    CHECK(res.converged);
    CHECK((res.theta - inst.ball_center).norm() == doctest::Approx(0.1).epsilon(1e-6));
}

TEST_CASE("solve_ce: mirrored two-point instance stays at zero") {
    ConvexInstance inst;
    inst.n_classes = 2;
    inst.features.resize(2, 3);
    inst.features << 0.7, -0.4, 1.1, -0.7, 0.4, -1.1;
    inst.labels = {0, 0};
    inst.groups = {0, 1};
    inst.ball_center = Eigen::MatrixXd::Zero(3, 2);
    inst.ball_radius = 1.0;
    inst.grad_bound = 3.0;
    inst.lambda = 0.5;
    inst.seed = 0;

    SolveResult res = solve_ce(inst, 20000);
    CHECK(res.theta.norm() <= 1e-8);
}

TEST_CASE("solve_ce beats 1000 random ball points") {
    ConvexInstance inst = gen_instance(120, 4, 3, 0.25, 21);
    SolveResult res = solve_ce(inst, 100000);
    CHECK(res.converged);
    Rng rng(22);
    for (int i = 0; i < 1000; ++i) {
        Eigen::MatrixXd theta = random_ball_point(inst, rng);
        CHECK(res.objective <= eval_losses(inst, theta, 0.0).ce_all + 1e-9);
    }
}

TEST_CASE("solve_go: lambda 0 agrees with solve_ce") {
    ConvexInstance inst = gen_instance(120, 4, 3, 0.25, 33);
    SolveResult ce = solve_ce(inst, 100000);
    SolveResult go = solve_go(inst, 0.0, 100000);
    CHECK(std::abs(go.objective - ce.objective) <= 1e-6);
}

TEST_CASE("solve_go: identical groups collapse to the CE problem") {
    ConvexInstance inst = duplicated_group_instance(55);
    SolveResult ce = solve_ce(inst, 100000);
    SolveResult go = solve_go(inst, 0.9, 100000);
    CHECK(go.converged);
    // max of two equal means is the plain mean, so the optima coincide
    CHECK(std::abs(go.objective - ce.objective) <= 1e-6);
}

TEST_CASE("solve_go: certified gap and worst-group improvement on an imbalanced instance") {
    ConvexInstance inst = gen_instance(200, 6, 3, 0.15, 77);
    SolveResult ce = solve_ce(inst, 200000);
    SolveResult go = solve_go(inst, 0.9, 200000);
    CHECK(go.converged);
    CHECK(go.certificate <= 1e-8);
    CHECK(go.lower_bound <= go.objective);

    GoParts at_go = eval_losses(inst, go.theta, 0.9);
    GoParts at_ce = eval_losses(inst, ce.theta, 0.9);
    CHECK(at_go.worst < at_ce.worst - 1e-4); // strict improvement on this family
}

TEST_CASE("verify_prop1 on a small grid") {
    std::vector<ConvexInstance> instances;
    for (uint64_t s = 0; s < 3; ++s) instances.push_back(gen_instance(120, 4, 3, 0.2, 100 + s));
    auto reports = verify_prop1(instances, {0.3, 0.9}, 1e-4);
    REQUIRE(reports.size() == 6);
    for (const auto& r : reports) {
        CHECK(r.pass);
        CHECK(r.complementary_pass);
        CHECK_FALSE(r.inconclusive);
        CHECK(r.solver_accuracy <= 1e-5);
    }
}

TEST_CASE("verify_prop1 at lambda 0 gives equality within solver accuracy") {
    std::vector<ConvexInstance> instances = {gen_instance(120, 4, 3, 0.2, 200)};
    auto reports = verify_prop1(instances, {0.0}, 1e-4);
    REQUIRE(reports.size() == 1);
    CHECK(std::abs(reports[0].worst_at_go_opt - reports[0].worst_at_ce_opt) <= 1e-4);
}

TEST_CASE("fit_rate recovers exact and noisy power laws") {
    std::vector<long> horizons = {100, 316, 1000, 3162, 10000};

    std::vector<double> exact;
    for (long T : horizons) exact.push_back(3.0 / std::sqrt(static_cast<double>(T)));
    FitResult f = fit_rate(horizons, exact);
    CHECK(f.slope == doctest::Approx(-0.5).epsilon(1e-9));
    CHECK(f.r_squared == doctest::Approx(1.0).epsilon(1e-9));

    std::vector<double> constant(horizons.size(), 0.25);
    FitResult fc = fit_rate(horizons, constant);
    CHECK(fc.slope == doctest::Approx(0.0).epsilon(1e-12));

    // generate-and-recover with 5% multiplicative noise
    Rng rng(5);
    std::vector<long> wide;
    std::vector<double> noisy;
    for (int i = 0; i < 12; ++i) {
        long T = static_cast<long>(std::llround(std::pow(10.0, 2.0 + 0.25 * i)));
        wide.push_back(T);
        noisy.push_back(2.0 / std::sqrt(static_cast<double>(T)) * (1.0 + 0.05 * rng.normal()));
    }
    FitResult fn = fit_rate(wide, noisy);
    CHECK(fn.slope == doctest::Approx(-0.5).epsilon(0.1)); // within +-0.05 absolute
    CHECK(std::abs(fn.slope + 0.5) <= 0.05);

    CHECK_THROWS_AS(fit_rate({10, 20}, {1.0, 0.5}), ConfigError);
    CHECK_THROWS_AS(fit_rate(horizons, {-1.0, -1.0, -1.0, -1.0, -1.0}), ConfigError);

    // values below the floor are clipped and flagged
    FitResult clipped = fit_rate({10, 100, 1000, 10000},
                                 {1e-3, 1e-6, 1e-20, 1e-22});
    CHECK(clipped.clipped);
}

TEST_CASE("convergence sweep satisfies the step-size bound and decays") {
    ConvexInstance inst = gen_instance(160, 5, 3, 0.2, 301);
    inst.lambda = 0.9;
    std::vector<long> horizons = {50, 160, 500, 1600, 5000};
    ConvergenceReport report = run_convergence_sweep(inst, horizons, 3, 11);

    CHECK(report.reference_residual <= 1e-8);
    for (size_t h = 0; h < horizons.size(); ++h) {
        CHECK(report.mean_errors[h] <= report.bounds[h]);
        CHECK(report.mean_errors[h] >= -1e-9);
    }
    CHECK(report.fit.slope <= -0.35);
    CHECK(report.bound_violations == 0);
    CHECK(report.pass);
}

TEST_CASE("convergence sweep validates its preconditions") {
    ConvexInstance inst = gen_instance(100, 4, 2, 0.3, 5);
    CHECK_THROWS_AS(run_convergence_sweep(inst, {100, 200, 300}, 3, 1), ConfigError);
    CHECK_THROWS_AS(run_convergence_sweep(inst, {100, 200, 300, 400}, 3, 1), ConfigError);
    CHECK_THROWS_AS(run_convergence_sweep(inst, {100, 316, 1000, 3162, 10000}, 2, 1), ConfigError);
}
