#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "sftgo/common.hpp"

namespace sftgo::theory {

/// Softmax-regression instance with two point groups. The model is linear in
/// the weight matrix, so every loss below is convex in theta and the group
/// objective is a max of convex means plus a convex term.
struct ConvexInstance {
    Eigen::MatrixXd features;    // n x d
    std::vector<int> labels;     // n, in [0, k)
    std::vector<int> groups;     // n, 0 or 1
    int n_classes = 0;
    Eigen::MatrixXd ball_center; // d x k
    double ball_radius = 0.0;    // B_theta; iterates start at the center
    double grad_bound = 0.0;     // G >= any subgradient norm over the ball
    double lambda = 0.9;
    uint64_t seed = 0;

    long n_points() const { return features.rows(); }
    int dim() const { return static_cast<int>(features.cols()); }

    std::vector<int> group_indices(int g) const;
    void validate() const;
};

// Gaussian features with group-conditional class structure: group 1 is drawn
// from a weaker-signal, noisier distribution so the two group losses differ
// at the plain CE optimum. G = sqrt(2) * max_i ||x_i||, valid for every
// lambda in [0, 1] and every mini-batch subgradient.
ConvexInstance gen_instance(long n, int d, int k, double imbalance, uint64_t seed);

struct GoParts {
    double ce_all = 0.0;
    double ce_g1 = 0.0; // important group
    double ce_g0 = 0.0;
    double worst = 0.0;
    double go = 0.0;
};

GoParts eval_losses(const ConvexInstance& inst, const Eigen::MatrixXd& theta, double lambda);

inline GoParts eval_losses(const ConvexInstance& inst, const Eigen::MatrixXd& theta) {
    return eval_losses(inst, theta, inst.lambda);
}

// Mean CE over an index subset.
double subset_ce(const ConvexInstance& inst, const Eigen::MatrixXd& theta, const std::vector<int>& idx);

// Gradient of the mean CE over an index subset (d x k).
Eigen::MatrixXd subset_ce_gradient(const ConvexInstance& inst, const Eigen::MatrixXd& theta,
                                   const std::vector<int>& idx);

// Subgradient of (1-lambda) * L_CE + lambda * max(L_G1, L_G0); the tie at the
// max resolves to the group-1 branch.
Eigen::MatrixXd go_subgradient(const ConvexInstance& inst, const Eigen::MatrixXd& theta, double lambda);

// Largest subgradient norm seen over `samples` random ball points; used to
// certify grad_bound by sampling.
double max_sampled_subgrad_norm(const ConvexInstance& inst, long samples, uint64_t seed);

} // namespace sftgo::theory
