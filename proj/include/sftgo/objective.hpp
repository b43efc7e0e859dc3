#pragma once

#include <optional>
#include <span>
#include <string>

#include "sftgo/grouping.hpp"

namespace sftgo {

/// Linear decay of the group-loss weight: max(lambda_max * (1 - t/T), lambda_min).
struct LambdaSchedule {
    double lambda_max = 0.9;
    double lambda_min = 0.01;
    long total_steps = 1;

    void validate() const;
    static LambdaSchedule constant(double value, long total_steps = 1);
};

double compute_lambda(long step, const LambdaSchedule& sched);

struct GroupMeans {
    std::optional<double> important;
    std::optional<double> unimportant;
    double all = 0.0;
    long n_important = 0;
    long n_unimportant = 0;
};

// Micro-averaged (token-weighted) means over each group across the batch.
// Labels must parallel the per-token CE vector; excluded labels are invalid
// here (the vector is already restricted to loss-bearing tokens).
GroupMeans group_mean_ce(std::span<const double> per_token_ce, std::span<const GroupLabel> labels);

// Max over the present group means; single present group falls back to it.
double worst_group(const std::optional<double>& ce_imp, const std::optional<double>& ce_unimp);

// (1 - lambda) * ce_all + lambda * worst
double go_loss(double ce_all, double worst, double lambda);

// Mean CE over important tokens only.
double rho1_selected_loss(std::span<const double> per_token_ce, std::span<const GroupLabel> labels);

/// Per-step record of all tracked loss quantities.
struct GroupLossBreakdown {
    double ce_all = 0.0;
    std::optional<double> ce_important;
    std::optional<double> ce_unimportant;
    double worst = 0.0;
    double combined = 0.0;
    double lambda = 0.0;
    long n_important = 0;
    long n_unimportant = 0;
};

GroupLossBreakdown make_breakdown(std::span<const double> per_token_ce,
                                  std::span<const GroupLabel> labels, double lambda);

// One CSV row: step,lambda,ce_all,ce_imp,ce_unimp,worst,combined,n_imp,n_unimp.
// Absent group means serialize as empty cells.
std::string breakdown_csv_row(long step, const GroupLossBreakdown& b);

} // namespace sftgo
