#pragma once

#include <cmath>
#include <span>

#include "sftgo/engine/tiny_lm.hpp"

namespace sftgo::engine {

namespace detail {

template <typename Scalar>
void check_finite_grad(const typename ParamSet<Scalar>::Entry& e) {
    if (e.grad.size() == 0) throw StateError("optimizer step before backward: no gradient for " + e.name);
    if (!e.grad.allFinite()) throw NumericError("non-finite gradient in tensor " + e.name);
}

} // namespace detail

// theta <- theta - alpha * grad, elementwise over every tensor.
template <typename Scalar>
void sgd_step(ParamSet<Scalar>& params, Scalar step_size) {
    if (!(step_size > Scalar(0))) throw ConfigError("sgd_step: step size must be positive");
    for (auto& e : params.entries()) {
        detail::check_finite_grad<Scalar>(e);
        e.value -= step_size * e.grad;
    }
}

// Euclidean projection of a flat vector onto the ball of the given radius
// around `center`. Generic over Eigen matrix types.
template <typename Derived, typename CenterDerived>
void project_to_ball(Eigen::MatrixBase<Derived>& point, const Eigen::MatrixBase<CenterDerived>& center,
                     double radius) {
    if (!(radius > 0.0)) throw ConfigError("project_to_ball: radius must be positive");
    double dist = std::sqrt(static_cast<double>((point - center).squaredNorm()));
    if (dist <= radius) return;
    using Scalar = typename Derived::Scalar;
    Scalar f = static_cast<Scalar>(radius / dist);
    point.derived() = center + (point - center) * f;
}

// Projection of all parameters, treated as one concatenated vector, onto the
// ball around `center`.
template <typename Scalar>
void project_ball(ParamSet<Scalar>& params, const ParamSet<Scalar>& center, double radius) {
    if (!(radius > 0.0)) throw ConfigError("project_ball: radius must be positive");
    if (params.entries().size() != center.entries().size())
        throw ConfigError("project_ball: parameter sets disagree");
    double sq = 0.0;
    for (size_t i = 0; i < params.entries().size(); ++i)
        sq += static_cast<double>(
            (params.entries()[i].value - center.entries()[i].value).squaredNorm());
    double dist = std::sqrt(sq);
    if (dist <= radius) return;
    Scalar f = static_cast<Scalar>(radius / dist);
    for (size_t i = 0; i < params.entries().size(); ++i) {
        auto& e = params.entries()[i];
        e.value = center.entries()[i].value + (e.value - center.entries()[i].value) * f;
    }
}

struct AdamConfig {
    double lr = 3e-3;
    double beta1 = 0.9;
    double beta2 = 0.99;
    double eps = 1e-8;
    double weight_decay = 0.0;

    void validate() const {
        if (!(lr > 0.0)) throw ConfigError("adam: lr must be positive");
        if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0))
            throw ConfigError("adam: betas must be in [0, 1)");
        if (!(eps > 0.0)) throw ConfigError("adam: eps must be positive");
        if (weight_decay < 0.0) throw ConfigError("adam: weight decay must be >= 0");
    }
};

template <typename Scalar>
struct AdamState {
    std::vector<Mat<Scalar>> m;
    std::vector<Mat<Scalar>> v;
    long step = 0;
};

// Decoupled-weight-decay adaptive-moment update. lr_scale multiplies the base
// step size (used by the cosine schedule).
template <typename Scalar>
void adam_step(ParamSet<Scalar>& params, AdamState<Scalar>& state, const AdamConfig& cfg,
               double lr_scale = 1.0) {
    cfg.validate();
    auto& entries = params.entries();
    if (state.m.empty()) {
        state.m.resize(entries.size());
        state.v.resize(entries.size());
        for (size_t i = 0; i < entries.size(); ++i) {
            state.m[i] = Mat<Scalar>::Zero(entries[i].value.rows(), entries[i].value.cols());
            state.v[i] = Mat<Scalar>::Zero(entries[i].value.rows(), entries[i].value.cols());
        }
    }
    if (state.m.size() != entries.size()) throw ConfigError("adam: state does not match parameter set");

    ++state.step;
    const Scalar b1 = static_cast<Scalar>(cfg.beta1);
    const Scalar b2 = static_cast<Scalar>(cfg.beta2);
    const Scalar bc1 = Scalar(1) - static_cast<Scalar>(std::pow(cfg.beta1, static_cast<double>(state.step)));
    const Scalar bc2 = Scalar(1) - static_cast<Scalar>(std::pow(cfg.beta2, static_cast<double>(state.step)));
    const Scalar lr = static_cast<Scalar>(cfg.lr * lr_scale);
    const Scalar eps = static_cast<Scalar>(cfg.eps);
    const Scalar wd = static_cast<Scalar>(cfg.weight_decay);

    for (size_t i = 0; i < entries.size(); ++i) {
        auto& e = entries[i];
        detail::check_finite_grad<Scalar>(e);
        state.m[i] = b1 * state.m[i] + (Scalar(1) - b1) * e.grad;
        state.v[i] = b2 * state.v[i] + (Scalar(1) - b2) * e.grad.cwiseProduct(e.grad);
        Mat<Scalar> update =
            (state.m[i] / bc1).cwiseQuotient(((state.v[i] / bc2).cwiseSqrt().array() + eps).matrix());
        if (wd != Scalar(0)) update += wd * e.value;
        update *= lr;
        if (!update.allFinite()) throw NumericError("non-finite optimizer update in tensor " + e.name);
        e.value -= update;
    }
}

// Elementwise arithmetic mean of parameter snapshots.
template <typename Scalar>
ParamSet<Scalar> averaged_iterate(std::span<const ParamSet<Scalar>> snapshots) {
    if (snapshots.empty()) throw ConfigError("averaged_iterate: need at least one snapshot");
    ParamSet<Scalar> avg = snapshots[0];
    for (size_t s = 1; s < snapshots.size(); ++s) {
        const auto& snap = snapshots[s];
        if (snap.entries().size() != avg.entries().size())
            throw ConfigError("averaged_iterate: snapshots disagree in structure");
        for (size_t i = 0; i < avg.entries().size(); ++i) avg.entries()[i].value += snap.entries()[i].value;
    }
    const Scalar inv = Scalar(1) / static_cast<Scalar>(snapshots.size());
    for (auto& e : avg.entries()) e.value *= inv;
    return avg;
}

// Streaming counterpart; mean_k = mean_{k-1} + (x - mean_{k-1}) / k.
template <typename Scalar>
class RunningMean {
public:
    void accumulate(const ParamSet<Scalar>& snapshot) {
        ++count_;
        if (count_ == 1) {
            mean_ = snapshot;
            return;
        }
        const Scalar inv = Scalar(1) / static_cast<Scalar>(count_);
        for (size_t i = 0; i < mean_.entries().size(); ++i) {
            auto& m = mean_.entries()[i].value;
            m += (snapshot.entries()[i].value - m) * inv;
        }
    }
    long count() const { return count_; }
    const ParamSet<Scalar>& mean() const {
        if (count_ == 0) throw StateError("RunningMean: no snapshots accumulated");
        return mean_;
    }

private:
    ParamSet<Scalar> mean_;
    long count_ = 0;
};

template <typename Scalar>
double grad_norm(const ParamSet<Scalar>& params) {
    double sq = 0.0;
    for (const auto& e : params.entries())
        if (e.grad.size() != 0) sq += static_cast<double>(e.grad.squaredNorm());
    return std::sqrt(sq);
}

} // namespace sftgo::engine
