#include "sftgo/theory/convergence.hpp"

#include <algorithm>
#include <cmath>

#include "sftgo/engine/optim.hpp"

namespace sftgo::theory {

FitResult fit_rate(const std::vector<long>& horizons, const std::vector<double>& errors) {
    if (horizons.size() != errors.size()) throw ConfigError("fit_rate: length mismatch");
    long positive = 0;
    for (double e : errors)
        if (e > 0.0) ++positive;
    if (positive < 3) throw ConfigError("fit_rate: need at least 3 positive error values");

    FitResult fit;
    std::vector<double> xs, ys;
    for (size_t i = 0; i < errors.size(); ++i) {
        double e = errors[i];
        if (e < 1e-15) {
            e = 1e-15;
            fit.clipped = true;
        }
        xs.push_back(std::log(static_cast<double>(horizons[i])));
        ys.push_back(std::log(e));
    }

    const double n = static_cast<double>(xs.size());
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    for (size_t i = 0; i < xs.size(); ++i) {
        sx += xs[i];
        sy += ys[i];
        sxx += xs[i] * xs[i];
        sxy += xs[i] * ys[i];
    }
    double denom = n * sxx - sx * sx;
    if (std::abs(denom) < 1e-12) throw ConfigError("fit_rate: degenerate horizons");
    fit.slope = (n * sxy - sx * sy) / denom;
    fit.intercept = (sy - fit.slope * sx) / n;

    double mean_y = sy / n, ss_res = 0.0, ss_tot = 0.0;
    for (size_t i = 0; i < xs.size(); ++i) {
        double pred = fit.intercept + fit.slope * xs[i];
        ss_res += (ys[i] - pred) * (ys[i] - pred);
        ss_tot += (ys[i] - mean_y) * (ys[i] - mean_y);
    }
    fit.r_squared = ss_tot < 1e-30 ? (ss_res < 1e-30 ? 1.0 : 0.0) : 1.0 - ss_res / ss_tot;
    return fit;
}

namespace {

// One run of projected stochastic subgradient descent; returns the averaged
// iterate over theta^(1..T) (the pre-update points).
Eigen::MatrixXd run_sssd(const ConvexInstance& inst, long horizon, int batch_size, uint64_t seed) {
    Rng rng(seed);
    const double alpha =
        inst.ball_radius / (inst.grad_bound * std::sqrt(static_cast<double>(horizon)));
    std::vector<int> group_idx[2] = {inst.group_indices(0), inst.group_indices(1)};
    const long n = inst.n_points();

    Eigen::MatrixXd theta = inst.ball_center;
    Eigen::MatrixXd avg = Eigen::MatrixXd::Zero(theta.rows(), theta.cols());
    std::vector<int> ce_batch(static_cast<size_t>(batch_size));
    std::vector<int> grp_batch(static_cast<size_t>(batch_size));

    for (long t = 1; t <= horizon; ++t) {
        avg += (theta - avg) / static_cast<double>(t);

        // branch from exact group means; gradient estimates from mini-batches
        GoParts parts = eval_losses(inst, theta, inst.lambda);
        const std::vector<int>& branch = parts.ce_g1 >= parts.ce_g0 ? group_idx[1] : group_idx[0];

        for (int b = 0; b < batch_size; ++b) {
            ce_batch[static_cast<size_t>(b)] = static_cast<int>(rng.uniform_index(static_cast<uint64_t>(n)));
            grp_batch[static_cast<size_t>(b)] =
                branch[rng.uniform_index(static_cast<uint64_t>(branch.size()))];
        }
        Eigen::MatrixXd g = (1.0 - inst.lambda) * subset_ce_gradient(inst, theta, ce_batch);
        g.noalias() += inst.lambda * subset_ce_gradient(inst, theta, grp_batch);

        theta -= alpha * g;
        engine::project_to_ball(theta, inst.ball_center, inst.ball_radius);
    }
    return avg;
}

} // namespace

ConvergenceReport run_convergence_sweep(const ConvexInstance& inst, const std::vector<long>& horizons,
                                        int repeats, uint64_t seed, const SweepOptions& opts) {
    inst.validate();
    if (horizons.size() < 4) throw ConfigError("run_convergence_sweep: need at least 4 horizons");
    if (!std::is_sorted(horizons.begin(), horizons.end()))
        throw ConfigError("run_convergence_sweep: horizons must be ascending");
    if (horizons.front() < 1 || horizons.back() < 100 * horizons.front())
        throw ConfigError("run_convergence_sweep: horizons must span at least two decades");
    if (repeats < 3) throw ConfigError("run_convergence_sweep: need at least 3 repeats");

    ConvergenceReport report;
    report.horizons = horizons;

    SolveResult reference = solve_go(inst, opts.reference_budget_factor * horizons.back(), 1e-9);
    report.reference_value = reference.lower_bound;
    report.reference_residual = reference.certificate;
    if (!reference.converged || reference.certificate > 1e-6)
        throw NumericError("convergence sweep: reference solve did not converge (certificate " +
                           fmt_double(reference.certificate) + ", iterations " +
                           std::to_string(reference.iterations) + ")");

    for (size_t h = 0; h < horizons.size(); ++h) {
        std::vector<double> errs;
        errs.reserve(static_cast<size_t>(repeats));
        for (int r = 0; r < repeats; ++r) {
            uint64_t run_seed = derive_seed(seed, (static_cast<uint64_t>(h) << 20) + static_cast<uint64_t>(r));
            Eigen::MatrixXd avg = run_sssd(inst, horizons[h], opts.batch_size, run_seed);
            errs.push_back(eval_losses(inst, avg, inst.lambda).go - report.reference_value);
        }
        double mean = 0.0;
        for (double e : errs) mean += e;
        mean /= static_cast<double>(repeats);
        report.repeat_errors.push_back(std::move(errs));
        report.mean_errors.push_back(mean);
        report.bounds.push_back(inst.ball_radius * inst.grad_bound /
                                std::sqrt(static_cast<double>(horizons[h])));
        if (report.mean_errors.back() > report.bounds.back()) ++report.bound_violations;
    }

    report.fit = fit_rate(report.horizons, report.mean_errors);
    report.pass = report.bound_violations == 0 && report.fit.slope <= opts.slope_threshold;
    return report;
}

} // namespace sftgo::theory
