#include "sftgo/objective.hpp"

#include <algorithm>
#include <cmath>

namespace sftgo {

void LambdaSchedule::validate() const {
    if (!(lambda_min >= 0.0 && lambda_min <= lambda_max && lambda_max <= 1.0))
        throw ConfigError("lambda schedule requires 0 <= lambda_min <= lambda_max <= 1");
    if (total_steps < 1) throw ConfigError("lambda schedule requires total_steps >= 1");
}

LambdaSchedule LambdaSchedule::constant(double value, long total_steps) {
    LambdaSchedule s;
    s.lambda_max = value;
    s.lambda_min = value;
    s.total_steps = total_steps;
    s.validate();
    return s;
}

double compute_lambda(long step, const LambdaSchedule& sched) {
    sched.validate();
    if (step < 0 || step > sched.total_steps)
        throw ConfigError("compute_lambda: step " + std::to_string(step) + " outside [0, " +
                          std::to_string(sched.total_steps) + "]");
    double t = static_cast<double>(step) / static_cast<double>(sched.total_steps);
    return std::max(sched.lambda_max * (1.0 - t), sched.lambda_min);
}

GroupMeans group_mean_ce(std::span<const double> per_token_ce, std::span<const GroupLabel> labels) {
    if (per_token_ce.size() != labels.size())
        throw ConfigError("group_mean_ce: CE vector and labels disagree in length");
    if (per_token_ce.empty()) throw ConfigError("group_mean_ce: zero loss-bearing tokens");

    double sum_imp = 0.0, sum_unimp = 0.0;
    long n_imp = 0, n_unimp = 0;
    for (size_t i = 0; i < per_token_ce.size(); ++i) {
        switch (labels[i]) {
            case GroupLabel::important:
                sum_imp += per_token_ce[i];
                ++n_imp;
                break;
            case GroupLabel::unimportant:
                sum_unimp += per_token_ce[i];
                ++n_unimp;
                break;
            case GroupLabel::excluded:
                throw ConfigError("group_mean_ce: excluded label in loss-restricted vector");
        }
    }

    GroupMeans out;
    out.n_important = n_imp;
    out.n_unimportant = n_unimp;
    if (n_imp > 0) out.important = sum_imp / static_cast<double>(n_imp);
    if (n_unimp > 0) out.unimportant = sum_unimp / static_cast<double>(n_unimp);
    out.all = (sum_imp + sum_unimp) / static_cast<double>(n_imp + n_unimp);
    return out;
}

double worst_group(const std::optional<double>& ce_imp, const std::optional<double>& ce_unimp) {
    if (ce_imp && ce_unimp) return std::max(*ce_imp, *ce_unimp);
    if (ce_imp) return *ce_imp;
    if (ce_unimp) return *ce_unimp;
    throw ConfigError("worst_group: both group means absent");
}

double go_loss(double ce_all, double worst, double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("go_loss: lambda must be in [0, 1]");
    return (1.0 - lambda) * ce_all + lambda * worst;
}

double rho1_selected_loss(std::span<const double> per_token_ce, std::span<const GroupLabel> labels) {
    if (per_token_ce.size() != labels.size())
        throw ConfigError("rho1_selected_loss: CE vector and labels disagree in length");
    double sum = 0.0;
    long n = 0;
    for (size_t i = 0; i < per_token_ce.size(); ++i) {
        if (labels[i] == GroupLabel::important) {
            sum += per_token_ce[i];
            ++n;
        }
    }
    if (n == 0) throw ConfigError("rho1_selected_loss: empty important group");
    return sum / static_cast<double>(n);
}

GroupLossBreakdown make_breakdown(std::span<const double> per_token_ce,
                                  std::span<const GroupLabel> labels, double lambda) {
    GroupMeans means = group_mean_ce(per_token_ce, labels);
    GroupLossBreakdown b;
    b.ce_all = means.all;
    b.ce_important = means.important;
    b.ce_unimportant = means.unimportant;
    b.worst = worst_group(means.important, means.unimportant);
    b.lambda = lambda;
    b.combined = go_loss(b.ce_all, b.worst, lambda);
    b.n_important = means.n_important;
    b.n_unimportant = means.n_unimportant;
    return b;
}

std::string breakdown_csv_row(long step, const GroupLossBreakdown& b) {
    std::string row = std::to_string(step);
    row += ',' + fmt_double(b.lambda);
    row += ',' + fmt_double(b.ce_all);
    row += ',';
    if (b.ce_important) row += fmt_double(*b.ce_important);
    row += ',';
    if (b.ce_unimportant) row += fmt_double(*b.ce_unimportant);
    row += ',' + fmt_double(b.worst);
    row += ',' + fmt_double(b.combined);
    row += ',' + std::to_string(b.n_important);
    row += ',' + std::to_string(b.n_unimportant);
    return row;
}

} // namespace sftgo
