#pragma once

#include <algorithm>
#include <functional>
#include <string>

#include "sftgo/engine/tiny_lm.hpp"

namespace sftgo::engine {

/// A loss built on a tape. well_posed lets the builder reject evaluation
/// points where the loss is not differentiable (tied group means).
struct LossProbe {
    Value<double> loss;
    bool well_posed = true;
};

struct GradcheckReport {
    double max_rel_error = 0.0;
    double tolerance = 0.0;
    long coords_checked = 0;
    int resamples = 0;
    bool conclusive = true;
    bool pass = false;
    std::string note;
};

using ParamFactory = std::function<ParamSet<double>(uint64_t seed)>;
using LossBuilder = std::function<LossProbe(Tape<double>&, const BoundParams<double>&)>;

// Compares the analytic gradient against central finite differences over a
// random subsample of coordinates. Double precision only. Evaluation points
// rejected by the builder are re-sampled with a fresh parameter seed, up to
// max_resamples; exhausting the budget yields an inconclusive report.
inline GradcheckReport gradcheck(const ParamFactory& make_params, const LossBuilder& build_loss,
                                 double epsilon, double tolerance, uint64_t seed,
                                 int coords_per_tensor = 6, int max_resamples = 10,
                                 double denom_floor = 1e-3) {
    GradcheckReport report;
    report.tolerance = tolerance;

    for (int attempt = 0; attempt <= max_resamples; ++attempt) {
        ParamSet<double> params = make_params(derive_seed(seed, static_cast<uint64_t>(attempt)));

        Tape<double> tape;
        BoundParams<double> bound = bind_params(tape, params, /*needs_grad=*/true);
        LossProbe probe = build_loss(tape, bound);
        if (!probe.well_posed) {
            ++report.resamples;
            continue;
        }
        tape.backward(probe.loss);
        copy_grads_back(bound);

        auto eval_loss = [&](ParamSet<double>& p) {
            Tape<double> t;
            BoundParams<double> b = bind_params(t, p, /*needs_grad=*/false);
            return static_cast<double>(build_loss(t, b).loss.scalar());
        };

        Rng rng(derive_seed(seed, 1000 + static_cast<uint64_t>(attempt)));
        double max_rel = 0.0;
        long checked = 0;
        for (size_t e = 0; e < params.entries().size(); ++e) {
            auto& entry = params.entries()[e];
            const long n = entry.value.size();
            const int n_coords = static_cast<int>(std::min<long>(coords_per_tensor, n));
            for (int c = 0; c < n_coords; ++c) {
                Eigen::Index flat = static_cast<Eigen::Index>(rng.uniform_index(static_cast<uint64_t>(n)));
                double original = entry.value.data()[flat];
                entry.value.data()[flat] = original + epsilon;
                double f_plus = eval_loss(params);
                entry.value.data()[flat] = original - epsilon;
                double f_minus = eval_loss(params);
                entry.value.data()[flat] = original;

                double numeric = (f_plus - f_minus) / (2.0 * epsilon);
                double analytic = entry.grad.data()[flat];
                double denom = std::max({std::abs(numeric), std::abs(analytic), denom_floor});
                max_rel = std::max(max_rel, std::abs(numeric - analytic) / denom);
                ++checked;
            }
        }
        report.max_rel_error = max_rel;
        report.coords_checked = checked;
        report.pass = max_rel < tolerance;
        return report;
    }

    report.conclusive = false;
    report.note = "evaluation point rejected after " + std::to_string(max_resamples) + " re-samples";
    return report;
}

} // namespace sftgo::engine
