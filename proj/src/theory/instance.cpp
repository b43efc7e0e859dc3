#include "sftgo/theory/instance.hpp"

#include <algorithm>
#include <cmath>

namespace sftgo::theory {

namespace {

// row-wise softmax probabilities of X * theta (n x k)
Eigen::MatrixXd softmax_probs(const Eigen::MatrixXd& logits) {
    Eigen::MatrixXd p(logits.rows(), logits.cols());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        double m = logits.row(i).maxCoeff();
        Eigen::ArrayXd e = (logits.row(i).array() - m).exp();
        p.row(i) = e / e.sum();
    }
    return p;
}

double point_ce(const Eigen::RowVectorXd& logit_row, int label) {
    double m = logit_row.maxCoeff();
    double lse = m + std::log((logit_row.array() - m).exp().sum());
    return lse - logit_row(label);
}

} // namespace

std::vector<int> ConvexInstance::group_indices(int g) const {
    std::vector<int> idx;
    for (size_t i = 0; i < groups.size(); ++i)
        if (groups[i] == g) idx.push_back(static_cast<int>(i));
    return idx;
}

void ConvexInstance::validate() const {
    if (features.rows() < 2 || n_classes < 2) throw ConfigError("instance: need >= 2 points and >= 2 classes");
    if (static_cast<long>(labels.size()) != n_points() || static_cast<long>(groups.size()) != n_points())
        throw ConfigError("instance: labels/groups length mismatch");
    if (!(ball_radius > 0.0) || !(grad_bound > 0.0)) throw ConfigError("instance: bounds must be positive");
    if (ball_center.rows() != features.cols() || ball_center.cols() != n_classes)
        throw ConfigError("instance: ball center has wrong shape");
    bool has0 = false, has1 = false;
    for (int g : groups) (g == 0 ? has0 : has1) = true;
    if (!has0 || !has1) throw ConfigError("instance: a group is empty");
}

ConvexInstance gen_instance(long n, int d, int k, double imbalance, uint64_t seed) {
    if (n < 4) throw ConfigError("gen_instance: n must be >= 4");
    if (d < 1 || k < 2) throw ConfigError("gen_instance: need d >= 1 and k >= 2");
    if (!(imbalance > 0.0 && imbalance < 1.0)) throw ConfigError("gen_instance: imbalance must be in (0, 1)");

    uint64_t attempt_seed = seed;
    for (int attempt = 0; attempt < 10; ++attempt, attempt_seed = derive_seed(seed, 7000 + static_cast<uint64_t>(attempt))) {
        long n1 = std::llround(imbalance * static_cast<double>(n));
        if (n1 == 0 || n1 == n) continue; // degenerate group; retry cannot fix a rounding-to-zero, errors below

        Rng rng(attempt_seed);
        Eigen::MatrixXd anchors(d, k);
        for (int c = 0; c < k; ++c) {
            for (int r = 0; r < d; ++r) anchors(r, c) = rng.normal();
            anchors.col(c) *= 2.0 / std::max(1e-12, anchors.col(c).norm());
        }

        std::vector<int> groups(static_cast<size_t>(n), 0);
        for (long i = 0; i < n1; ++i) groups[static_cast<size_t>(i)] = 1;
        for (long i = n; i > 1; --i) {
            long j = static_cast<long>(rng.uniform_index(static_cast<uint64_t>(i)));
            std::swap(groups[static_cast<size_t>(i - 1)], groups[static_cast<size_t>(j)]);
        }

        ConvexInstance inst;
        inst.n_classes = k;
        inst.features.resize(n, d);
        inst.labels.resize(static_cast<size_t>(n));
        inst.groups = std::move(groups);
        for (long i = 0; i < n; ++i) {
            int y = static_cast<int>(rng.uniform_index(static_cast<uint64_t>(k)));
            inst.labels[static_cast<size_t>(i)] = y;
            double signal = inst.groups[static_cast<size_t>(i)] == 1 ? 0.35 : 1.0;
            double noise = inst.groups[static_cast<size_t>(i)] == 1 ? 1.25 : 0.8;
            for (int r = 0; r < d; ++r)
                inst.features(i, r) = signal * anchors(r, y) + noise * rng.normal();
        }

        inst.ball_center = Eigen::MatrixXd::Zero(d, k);
        inst.ball_radius = 2.0;
        inst.lambda = 0.9;
        inst.seed = attempt_seed;
        double max_norm = 0.0;
        for (long i = 0; i < n; ++i) max_norm = std::max(max_norm, inst.features.row(i).norm());
        inst.grad_bound = std::sqrt(2.0) * max_norm;
        inst.validate();
        return inst;
    }
    throw ConfigError("gen_instance: could not draw non-degenerate groups in 10 attempts "
                      "(imbalance * n rounds to an empty group)");
}

GoParts eval_losses(const ConvexInstance& inst, const Eigen::MatrixXd& theta, double lambda) {
    Eigen::MatrixXd logits = inst.features * theta;
    double sum_all = 0.0, sum1 = 0.0, sum0 = 0.0;
    long n1 = 0, n0 = 0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        double ce = point_ce(logits.row(i), inst.labels[static_cast<size_t>(i)]);
        sum_all += ce;
        if (inst.groups[static_cast<size_t>(i)] == 1) {
            sum1 += ce;
            ++n1;
        } else {
            sum0 += ce;
            ++n0;
        }
    }
    GoParts parts;
    parts.ce_all = sum_all / static_cast<double>(logits.rows());
    parts.ce_g1 = n1 > 0 ? sum1 / static_cast<double>(n1) : 0.0;
    parts.ce_g0 = n0 > 0 ? sum0 / static_cast<double>(n0) : 0.0;
    parts.worst = std::max(parts.ce_g1, parts.ce_g0);
    parts.go = (1.0 - lambda) * parts.ce_all + lambda * parts.worst;
    return parts;
}

double subset_ce(const ConvexInstance& inst, const Eigen::MatrixXd& theta, const std::vector<int>& idx) {
    if (idx.empty()) throw ConfigError("subset_ce: empty subset");
    double sum = 0.0;
    for (int i : idx) {
        Eigen::RowVectorXd logit = inst.features.row(i) * theta;
        sum += point_ce(logit, inst.labels[static_cast<size_t>(i)]);
    }
    return sum / static_cast<double>(idx.size());
}

Eigen::MatrixXd subset_ce_gradient(const ConvexInstance& inst, const Eigen::MatrixXd& theta,
                                   const std::vector<int>& idx) {
    if (idx.empty()) throw ConfigError("subset_ce_gradient: empty subset");
    Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(theta.rows(), theta.cols());
    for (int i : idx) {
        Eigen::RowVectorXd logit = inst.features.row(i) * theta;
        Eigen::MatrixXd p = softmax_probs(logit);
        p(0, inst.labels[static_cast<size_t>(i)]) -= 1.0;
        grad.noalias() += inst.features.row(i).transpose() * p.row(0);
    }
    return grad / static_cast<double>(idx.size());
}

Eigen::MatrixXd go_subgradient(const ConvexInstance& inst, const Eigen::MatrixXd& theta, double lambda) {
    GoParts parts = eval_losses(inst, theta, lambda);
    int branch = parts.ce_g1 >= parts.ce_g0 ? 1 : 0;
    std::vector<int> all(static_cast<size_t>(inst.n_points()));
    for (long i = 0; i < inst.n_points(); ++i) all[static_cast<size_t>(i)] = static_cast<int>(i);
    Eigen::MatrixXd g = (1.0 - lambda) * subset_ce_gradient(inst, theta, all);
    g.noalias() += lambda * subset_ce_gradient(inst, theta, inst.group_indices(branch));
    return g;
}

double max_sampled_subgrad_norm(const ConvexInstance& inst, long samples, uint64_t seed) {
    Rng rng(seed);
    const int d = inst.dim(), k = inst.n_classes;
    double worst = 0.0;
    for (long s = 0; s < samples; ++s) {
        // uniform direction, radius scaled so boundary regions are covered
        Eigen::MatrixXd theta(d, k);
        for (int r = 0; r < d; ++r)
            for (int c = 0; c < k; ++c) theta(r, c) = rng.normal();
        double norm = theta.norm();
        if (norm > 0.0) theta *= (inst.ball_radius * std::pow(rng.uniform(), 1.0 / (d * k)) / norm);
        theta += inst.ball_center;
        double lambda = rng.uniform(); // the bound must hold for every lambda
        worst = std::max(worst, go_subgradient(inst, theta, lambda).norm());
    }
    return worst;
}

} // namespace sftgo::theory
