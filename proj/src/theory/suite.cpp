#include "sftgo/theory/suite.hpp"

#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace fs = std::filesystem;

namespace sftgo::theory {

TheorySuiteResult run_theory_suite(const TheorySuiteOptions& opts) {
    if (opts.n_instances < 1) throw ConfigError("theory suite: need at least one instance");
    if (opts.lambdas.empty()) throw ConfigError("theory suite: need at least one lambda");

    std::vector<ConvexInstance> instances;
    instances.reserve(static_cast<size_t>(opts.n_instances));
    for (int i = 0; i < opts.n_instances; ++i) {
        uint64_t s = derive_seed(opts.seed, static_cast<uint64_t>(i));
        Rng pick(s);
        long n = 120 + static_cast<long>(pick.uniform_index(161));      // 120..280
        int d = 4 + static_cast<int>(pick.uniform_index(7));            // 4..10
        int k = 2 + static_cast<int>(pick.uniform_index(4));            // 2..5
        double imbalance = 0.1 + 0.3 * pick.uniform();                  // 0.1..0.4
        instances.push_back(gen_instance(n, d, k, imbalance, derive_seed(s, 1)));
    }

    TheorySuiteResult result;
    result.prop1 = verify_prop1(instances, opts.lambdas, opts.tolerance, opts.solver_budget);
    for (const auto& r : result.prop1) {
        if (!r.pass || !r.complementary_pass) ++result.prop1_failures;
        if (r.inconclusive) ++result.prop1_inconclusive;
    }

    ConvexInstance canonical = gen_instance(240, 6, 3, 0.2, derive_seed(opts.seed, 0xC0));
    canonical.lambda = 0.9;
    SweepOptions sweep_opts;
    sweep_opts.repeats = opts.repeats;
    sweep_opts.batch_size = opts.batch_size;
    result.convergence = run_convergence_sweep(canonical, opts.horizons, opts.repeats,
                                               derive_seed(opts.seed, 0xD0), sweep_opts);

    result.pass = result.prop1_failures == 0 && result.prop1_inconclusive == 0 && result.convergence.pass;

    if (!opts.out_dir.empty()) {
        fs::create_directories(opts.out_dir);

        std::ofstream p1(fs::path(opts.out_dir) / "prop1.csv", std::ios::binary);
        p1 << "instance,lambda,worst_at_go_opt,worst_at_ce_opt,ce_at_go_opt,ce_at_ce_opt,"
              "tolerance,solver_accuracy,pass,complementary_pass,inconclusive\n";
        for (const auto& r : result.prop1) {
            p1 << r.instance_index << ',' << fmt_double(r.lambda) << ',' << fmt_double(r.worst_at_go_opt)
               << ',' << fmt_double(r.worst_at_ce_opt) << ',' << fmt_double(r.ce_at_go_opt) << ','
               << fmt_double(r.ce_at_ce_opt) << ',' << fmt_double(r.tolerance) << ','
               << fmt_double(r.solver_accuracy) << ',' << (r.pass ? 1 : 0) << ','
               << (r.complementary_pass ? 1 : 0) << ',' << (r.inconclusive ? 1 : 0) << '\n';
        }

        std::ofstream cv(fs::path(opts.out_dir) / "convergence.csv", std::ios::binary);
        cv << "horizon,repeat,excess_error,bound\n";
        for (size_t h = 0; h < result.convergence.horizons.size(); ++h)
            for (size_t r = 0; r < result.convergence.repeat_errors[h].size(); ++r)
                cv << result.convergence.horizons[h] << ',' << r << ','
                   << fmt_double(result.convergence.repeat_errors[h][r]) << ','
                   << fmt_double(result.convergence.bounds[h]) << '\n';

        nlohmann::ordered_json summary;
        summary["pass"] = result.pass;
        summary["slope"] = result.convergence.fit.slope;
        summary["bound_violations"] = result.convergence.bound_violations;
        summary["prop1_cells"] = result.prop1.size();
        summary["prop1_failures"] = result.prop1_failures;
        summary["prop1_inconclusive"] = result.prop1_inconclusive;
        summary["fit_r_squared"] = result.convergence.fit.r_squared;
        summary["reference_value"] = result.convergence.reference_value;
        summary["reference_residual"] = result.convergence.reference_residual;
        std::ofstream sj(fs::path(opts.out_dir) / "summary.json", std::ios::binary);
        sj << summary.dump(2) << '\n';
    }
    return result;
}

} // namespace sftgo::theory
