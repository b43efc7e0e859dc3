#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <vector>

#include <Eigen/Dense>

#include "sftgo/common.hpp"

namespace sftgo::engine {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
class Tape;

/// Handle to a node on a tape. Cheap to copy; valid for the tape's lifetime.
template <typename Scalar>
struct Value {
    Tape<Scalar>* tape = nullptr;
    int idx = -1;

    const Mat<Scalar>& mat() const { return tape->value(idx); }
    Scalar scalar() const {
        const Mat<Scalar>& m = mat();
        if (m.rows() != 1 || m.cols() != 1) throw StateError("Value::scalar on non-scalar node");
        return m(0, 0);
    }
    Eigen::Index rows() const { return mat().rows(); }
    Eigen::Index cols() const { return mat().cols(); }
};

/// Recorded forward computation. Nodes are created in topological order by
/// the op functions below; backward() walks them once in reverse.
template <typename Scalar>
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Value<Scalar> leaf(Mat<Scalar> value, bool needs_grad = false) {
        Node node;
        node.value = std::move(value);
        node.needs_grad = needs_grad;
        nodes_.push_back(std::move(node));
        return {this, static_cast<int>(nodes_.size()) - 1};
    }

    const Mat<Scalar>& value(int idx) const { return nodes_.at(static_cast<size_t>(idx)).value; }

    bool needs_grad(int idx) const { return nodes_.at(static_cast<size_t>(idx)).needs_grad; }

    // Gradient accumulator for a node; allocated zero on first touch.
    Mat<Scalar>& grad(int idx) {
        Node& n = nodes_.at(static_cast<size_t>(idx));
        if (n.grad.size() == 0) n.grad = Mat<Scalar>::Zero(n.value.rows(), n.value.cols());
        return n.grad;
    }

    bool grad_allocated(int idx) const { return nodes_.at(static_cast<size_t>(idx)).grad.size() != 0; }

    void set_backward(int idx, std::function<void()> fn) {
        nodes_.at(static_cast<size_t>(idx)).backward = std::move(fn);
    }

    void backward(const Value<Scalar>& loss) {
        if (loss.tape != this) throw StateError("backward: loss belongs to a different tape");
        if (nodes_.empty()) throw StateError("backward without a recorded forward computation");
        if (backward_done_) throw StateError("backward called twice without a new forward computation");
        const Mat<Scalar>& lv = value(loss.idx);
        if (lv.rows() != 1 || lv.cols() != 1) throw StateError("backward: loss must be a scalar node");
        backward_done_ = true;
        grad(loss.idx)(0, 0) = Scalar(1);
        for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
            Node& n = nodes_[static_cast<size_t>(i)];
            // nodes whose grad was never touched received no upstream signal
            if (n.backward && n.needs_grad && n.grad.size() != 0) n.backward();
        }
    }

    void reset() {
        nodes_.clear();
        backward_done_ = false;
    }

    size_t size() const { return nodes_.size(); }
    bool backward_done() const { return backward_done_; }

private:
    struct Node {
        Mat<Scalar> value;
        Mat<Scalar> grad; // empty until touched
        std::function<void()> backward;
        bool needs_grad = false;
    };
    std::vector<Node> nodes_;
    bool backward_done_ = false;
};

namespace detail {

template <typename Scalar, typename... Rest>
bool any_needs(const Value<Scalar>& a, const Rest&... rest) {
    if (a.tape->needs_grad(a.idx)) return true;
    if constexpr (sizeof...(rest) > 0) return any_needs(rest...);
    return false;
}

// Emit an op node: value, inputs checked by caller, backward installed only
// when some input participates in differentiation.
template <typename Scalar, typename BackwardFactory>
Value<Scalar> make_op(Tape<Scalar>& t, Mat<Scalar> value, bool needs_grad, BackwardFactory&& factory) {
    Value<Scalar> y = t.leaf(std::move(value), needs_grad);
    if (needs_grad) t.set_backward(y.idx, factory(y.idx));
    return y;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and linear-algebra ops
// ---------------------------------------------------------------------------

template <typename Scalar>
Value<Scalar> add(const Value<Scalar>& a, const Value<Scalar>& b) {
    Tape<Scalar>& t = *a.tape;
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw ConfigError("add: shape mismatch");
    bool ng = detail::any_needs(a, b);
    int ai = a.idx, bi = b.idx;
    return detail::make_op(t, Mat<Scalar>(a.mat() + b.mat()), ng, [&t, ai, bi](int yi) {
        return [&t, ai, bi, yi]() {
            const Mat<Scalar>& g = t.grad(yi);
            if (t.needs_grad(ai)) t.grad(ai) += g;
            if (t.needs_grad(bi)) t.grad(bi) += g;
        };
    });
}

template <typename Scalar>
Value<Scalar> sub(const Value<Scalar>& a, const Value<Scalar>& b) {
    Tape<Scalar>& t = *a.tape;
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw ConfigError("sub: shape mismatch");
    bool ng = detail::any_needs(a, b);
    int ai = a.idx, bi = b.idx;
    return detail::make_op(t, Mat<Scalar>(a.mat() - b.mat()), ng, [&t, ai, bi](int yi) {
        return [&t, ai, bi, yi]() {
            const Mat<Scalar>& g = t.grad(yi);
            if (t.needs_grad(ai)) t.grad(ai) += g;
            if (t.needs_grad(bi)) t.grad(bi) -= g;
        };
    });
}

// y = a + row-broadcast bias (bias is 1 x C)
template <typename Scalar>
Value<Scalar> add_rowvec(const Value<Scalar>& a, const Value<Scalar>& bias) {
    Tape<Scalar>& t = *a.tape;
    if (bias.rows() != 1 || bias.cols() != a.cols()) throw ConfigError("add_rowvec: bias must be 1 x cols");
    bool ng = detail::any_needs(a, bias);
    Mat<Scalar> out = a.mat();
    out.rowwise() += bias.mat().row(0);
    int ai = a.idx, bi = bias.idx;
    return detail::make_op(t, std::move(out), ng, [&t, ai, bi](int yi) {
        return [&t, ai, bi, yi]() {
            const Mat<Scalar>& g = t.grad(yi);
            if (t.needs_grad(ai)) t.grad(ai) += g;
            if (t.needs_grad(bi)) t.grad(bi) += g.colwise().sum();
        };
    });
}

template <typename Scalar>
Value<Scalar> matmul(const Value<Scalar>& a, const Value<Scalar>& b) {
    Tape<Scalar>& t = *a.tape;
    if (a.cols() != b.rows()) throw ConfigError("matmul: inner dimensions disagree");
    bool ng = detail::any_needs(a, b);
    int ai = a.idx, bi = b.idx;
    return detail::make_op(t, Mat<Scalar>(a.mat() * b.mat()), ng, [&t, ai, bi](int yi) {
        return [&t, ai, bi, yi]() {
            const Mat<Scalar>& g = t.grad(yi);
            if (t.needs_grad(ai)) t.grad(ai).noalias() += g * t.value(bi).transpose();
            if (t.needs_grad(bi)) t.grad(bi).noalias() += t.value(ai).transpose() * g;
        };
    });
}

template <typename Scalar>
Value<Scalar> scale(const Value<Scalar>& a, Scalar s) {
    Tape<Scalar>& t = *a.tape;
    bool ng = detail::any_needs(a);
    int ai = a.idx;
    return detail::make_op(t, Mat<Scalar>(a.mat() * s), ng, [&t, ai, s](int yi) {
        return [&t, ai, s, yi]() {
            if (t.needs_grad(ai)) t.grad(ai) += t.grad(yi) * s;
        };
    });
}

template <typename Scalar>
Value<Scalar> hadamard(const Value<Scalar>& a, const Value<Scalar>& b) {
    Tape<Scalar>& t = *a.tape;
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw ConfigError("hadamard: shape mismatch");
    bool ng = detail::any_needs(a, b);
    int ai = a.idx, bi = b.idx;
    return detail::make_op(t, Mat<Scalar>(a.mat().cwiseProduct(b.mat())), ng, [&t, ai, bi](int yi) {
        return [&t, ai, bi, yi]() {
            const Mat<Scalar>& g = t.grad(yi);
            if (t.needs_grad(ai)) t.grad(ai) += g.cwiseProduct(t.value(bi));
            if (t.needs_grad(bi)) t.grad(bi) += g.cwiseProduct(t.value(ai));
        };
    });
}

template <typename Scalar>
Value<Scalar> sum(const Value<Scalar>& a) {
    Tape<Scalar>& t = *a.tape;
    bool ng = detail::any_needs(a);
    Mat<Scalar> out(1, 1);
    out(0, 0) = a.mat().sum();
    int ai = a.idx;
    return detail::make_op(t, std::move(out), ng, [&t, ai](int yi) {
        return [&t, ai, yi]() {
            if (t.needs_grad(ai)) t.grad(ai).array() += t.grad(yi)(0, 0);
        };
    });
}

template <typename Scalar>
Value<Scalar> gelu(const Value<Scalar>& a) {
    Tape<Scalar>& t = *a.tape;
    bool ng = detail::any_needs(a);
    const Scalar inv_sqrt2 = Scalar(1) / std::sqrt(Scalar(2));
    Mat<Scalar> out = a.mat().unaryExpr([inv_sqrt2](Scalar x) {
        return Scalar(0.5) * x * (Scalar(1) + std::erf(x * inv_sqrt2));
    });
    int ai = a.idx;
    return detail::make_op(t, std::move(out), ng, [&t, ai, inv_sqrt2](int yi) {
        return [&t, ai, yi, inv_sqrt2]() {
            if (!t.needs_grad(ai)) return;
            const Scalar inv_sqrt2pi = Scalar(1) / std::sqrt(Scalar(2) * Scalar(M_PI));
            Mat<Scalar> d = t.value(ai).unaryExpr([inv_sqrt2, inv_sqrt2pi](Scalar x) {
                Scalar cdf = Scalar(0.5) * (Scalar(1) + std::erf(x * inv_sqrt2));
                Scalar pdf = inv_sqrt2pi * std::exp(Scalar(-0.5) * x * x);
                return cdf + x * pdf;
            });
            t.grad(ai) += t.grad(yi).cwiseProduct(d);
        };
    });
}

// Row-wise layer normalization with learned gain/bias (both 1 x C).
template <typename Scalar>
Value<Scalar> layer_norm(const Value<Scalar>& x, const Value<Scalar>& gain, const Value<Scalar>& bias,
                         Scalar eps = Scalar(1e-5)) {
    Tape<Scalar>& t = *x.tape;
    const Eigen::Index rows = x.rows(), cols = x.cols();
    if (gain.rows() != 1 || gain.cols() != cols || bias.rows() != 1 || bias.cols() != cols)
        throw ConfigError("layer_norm: gain/bias must be 1 x cols");
    bool ng = detail::any_needs(x, gain, bias);

    auto xhat = std::make_shared<Mat<Scalar>>(rows, cols);
    auto inv_std = std::make_shared<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(rows);
    Mat<Scalar> out(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        Scalar mu = x.mat().row(i).mean();
        Scalar var = (x.mat().row(i).array() - mu).square().mean();
        Scalar is = Scalar(1) / std::sqrt(var + eps);
        (*inv_std)(i) = is;
        xhat->row(i) = (x.mat().row(i).array() - mu) * is;
        out.row(i) = xhat->row(i).cwiseProduct(gain.mat().row(0)) + bias.mat().row(0);
    }
    int xi = x.idx, gi = gain.idx, bi = bias.idx;
    return detail::make_op(t, std::move(out), ng, [&t, xi, gi, bi, xhat, inv_std](int yi) {
        return [&t, xi, gi, bi, yi, xhat, inv_std]() {
            const Mat<Scalar>& g = t.grad(yi);
            if (t.needs_grad(gi)) t.grad(gi) += g.cwiseProduct(*xhat).colwise().sum();
            if (t.needs_grad(bi)) t.grad(bi) += g.colwise().sum();
            if (t.needs_grad(xi)) {
                Mat<Scalar>& gx = t.grad(xi);
                for (Eigen::Index i = 0; i < g.rows(); ++i) {
                    auto dxhat = g.row(i).cwiseProduct(t.value(gi).row(0));
                    Scalar m1 = dxhat.mean();
                    Scalar m2 = dxhat.cwiseProduct(xhat->row(i)).mean();
                    gx.row(i) += ((dxhat.array() - m1) - xhat->row(i).array() * m2).matrix() * (*inv_std)(i);
                }
            }
        };
    });
}

// Gathers rows of an embedding table: out.row(i) = table.row(ids[i]).
template <typename Scalar>
Value<Scalar> embedding_rows(const Value<Scalar>& table, std::vector<int> ids) {
    Tape<Scalar>& t = *table.tape;
    const Eigen::Index vocab = table.rows();
    for (int id : ids)
        if (id < 0 || id >= vocab)
            throw DataError("embedding_rows: id " + std::to_string(id) + " out of range [0, " +
                            std::to_string(vocab) + ")");
    bool ng = detail::any_needs(table);
    Mat<Scalar> out(static_cast<Eigen::Index>(ids.size()), table.cols());
    for (size_t i = 0; i < ids.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = table.mat().row(ids[i]);
    int ti = table.idx;
    auto ids_ptr = std::make_shared<std::vector<int>>(std::move(ids));
    return detail::make_op(t, std::move(out), ng, [&t, ti, ids_ptr](int yi) {
        return [&t, ti, yi, ids_ptr]() {
            if (!t.needs_grad(ti)) return;
            const Mat<Scalar>& g = t.grad(yi);
            Mat<Scalar>& gt = t.grad(ti);
            for (size_t i = 0; i < ids_ptr->size(); ++i)
                gt.row((*ids_ptr)[i]) += g.row(static_cast<Eigen::Index>(i));
        };
    });
}

// Multi-head causal self-attention over already-projected Q, K, V (L x D).
template <typename Scalar>
Value<Scalar> causal_attention(const Value<Scalar>& q, const Value<Scalar>& k, const Value<Scalar>& v,
                               int n_heads) {
    Tape<Scalar>& t = *q.tape;
    const Eigen::Index L = q.rows(), D = q.cols();
    if (k.rows() != L || v.rows() != L || k.cols() != D || v.cols() != D)
        throw ConfigError("causal_attention: Q/K/V shapes disagree");
    if (n_heads < 1 || D % n_heads != 0) throw ConfigError("causal_attention: heads must divide d_model");
    const Eigen::Index dh = D / n_heads;
    const Scalar inv_sqrt_dh = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
    bool ng = detail::any_needs(q, k, v);

    auto probs = std::make_shared<std::vector<Mat<Scalar>>>();
    probs->reserve(static_cast<size_t>(n_heads));
    Mat<Scalar> out(L, D);
    for (int h = 0; h < n_heads; ++h) {
        auto qh = q.mat().middleCols(h * dh, dh);
        auto kh = k.mat().middleCols(h * dh, dh);
        auto vh = v.mat().middleCols(h * dh, dh);
        Mat<Scalar> scores = qh * kh.transpose() * inv_sqrt_dh;
        Mat<Scalar> p = Mat<Scalar>::Zero(L, L);
        for (Eigen::Index i = 0; i < L; ++i) {
            auto row = scores.row(i).head(i + 1);
            Scalar m = row.maxCoeff();
            Eigen::Array<Scalar, 1, Eigen::Dynamic> e = (row.array() - m).exp();
            p.row(i).head(i + 1) = e / e.sum();
        }
        out.middleCols(h * dh, dh) = p * vh;
        probs->push_back(std::move(p));
    }

    int qi = q.idx, ki = k.idx, vi = v.idx;
    return detail::make_op(t, std::move(out), ng, [&t, qi, ki, vi, n_heads, dh, inv_sqrt_dh, probs](int yi) {
        return [&t, qi, ki, vi, yi, n_heads, dh, inv_sqrt_dh, probs]() {
            const Mat<Scalar>& g = t.grad(yi);
            for (int h = 0; h < n_heads; ++h) {
                const Mat<Scalar>& p = (*probs)[static_cast<size_t>(h)];
                auto go = g.middleCols(h * dh, dh);
                auto vh = t.value(vi).middleCols(h * dh, dh);
                if (t.needs_grad(vi)) t.grad(vi).middleCols(h * dh, dh).noalias() += p.transpose() * go;
                if (!t.needs_grad(qi) && !t.needs_grad(ki)) continue;
                Mat<Scalar> dp = go * vh.transpose();
                // softmax backward, row-wise; masked entries have p == 0
                Mat<Scalar> ds(p.rows(), p.cols());
                for (Eigen::Index i = 0; i < p.rows(); ++i) {
                    Scalar dot = dp.row(i).cwiseProduct(p.row(i)).sum();
                    ds.row(i) = p.row(i).cwiseProduct(dp.row(i) - Mat<Scalar>::Constant(1, p.cols(), dot));
                }
                if (t.needs_grad(qi))
                    t.grad(qi).middleCols(h * dh, dh).noalias() +=
                        ds * t.value(ki).middleCols(h * dh, dh) * inv_sqrt_dh;
                if (t.needs_grad(ki))
                    t.grad(ki).middleCols(h * dh, dh).noalias() +=
                        ds.transpose() * t.value(qi).middleCols(h * dh, dh) * inv_sqrt_dh;
            }
        };
    });
}

// Fused per-row cross entropy with logits: out(i, 0) = lse(logits.row(i)) - logits(i, targets[i]).
template <typename Scalar>
Value<Scalar> ce_per_token(const Value<Scalar>& logits, std::vector<int> targets) {
    Tape<Scalar>& t = *logits.tape;
    const Eigen::Index M = logits.rows(), V = logits.cols();
    if (static_cast<Eigen::Index>(targets.size()) != M)
        throw ConfigError("ce_per_token: one target per logits row required");
    for (int tid : targets)
        if (tid < 0 || tid >= V)
            throw DataError("ce_per_token: target id " + std::to_string(tid) + " out of range");
    bool ng = detail::any_needs(logits);

    auto probs = std::make_shared<Mat<Scalar>>(M, V);
    Mat<Scalar> out(M, 1);
    for (Eigen::Index i = 0; i < M; ++i) {
        Scalar m = logits.mat().row(i).maxCoeff();
        Eigen::Array<Scalar, 1, Eigen::Dynamic> e = (logits.mat().row(i).array() - m).exp();
        Scalar z = e.sum();
        probs->row(i) = e / z;
        out(i, 0) = std::log(z) + m - logits.mat()(i, targets[static_cast<size_t>(i)]);
    }
    int li = logits.idx;
    auto targets_ptr = std::make_shared<std::vector<int>>(std::move(targets));
    return detail::make_op(t, std::move(out), ng, [&t, li, probs, targets_ptr](int yi) {
        return [&t, li, yi, probs, targets_ptr]() {
            if (!t.needs_grad(li)) return;
            const Mat<Scalar>& g = t.grad(yi);
            Mat<Scalar>& gl = t.grad(li);
            for (Eigen::Index i = 0; i < g.rows(); ++i) {
                Scalar gi = g(i, 0);
                if (gi == Scalar(0)) continue;
                gl.row(i) += gi * probs->row(i);
                gl(i, (*targets_ptr)[static_cast<size_t>(i)]) -= gi;
            }
        };
    });
}

// Mean over selected rows of a column vector.
template <typename Scalar>
Value<Scalar> mean_rows(const Value<Scalar>& vec, std::vector<int> rows) {
    Tape<Scalar>& t = *vec.tape;
    if (vec.cols() != 1) throw ConfigError("mean_rows: expects a column vector");
    if (rows.empty()) throw ConfigError("mean_rows: empty selection");
    Scalar acc = Scalar(0);
    for (int r : rows) {
        if (r < 0 || r >= vec.rows()) throw ConfigError("mean_rows: row index out of range");
        acc += vec.mat()(r, 0);
    }
    bool ng = detail::any_needs(vec);
    Mat<Scalar> out(1, 1);
    out(0, 0) = acc / static_cast<Scalar>(rows.size());
    int vi = vec.idx;
    auto rows_ptr = std::make_shared<std::vector<int>>(std::move(rows));
    return detail::make_op(t, std::move(out), ng, [&t, vi, rows_ptr](int yi) {
        return [&t, vi, yi, rows_ptr]() {
            if (!t.needs_grad(vi)) return;
            Scalar g = t.grad(yi)(0, 0) / static_cast<Scalar>(rows_ptr->size());
            Mat<Scalar>& gv = t.grad(vi);
            for (int r : *rows_ptr) gv(r, 0) += g;
        };
    });
}

// Micro-average across several column-vector nodes: mean of all selected
// entries, token-weighted across the whole batch.
template <typename Scalar>
Value<Scalar> batch_group_mean(Tape<Scalar>& t, const std::vector<Value<Scalar>>& vecs,
                               const std::vector<std::vector<int>>& rows) {
    if (vecs.size() != rows.size()) throw ConfigError("batch_group_mean: vectors and selections disagree");
    long total = 0;
    Scalar acc = Scalar(0);
    bool ng = false;
    for (size_t d = 0; d < vecs.size(); ++d) {
        ng = ng || detail::any_needs(vecs[d]);
        for (int r : rows[d]) {
            if (r < 0 || r >= vecs[d].rows()) throw ConfigError("batch_group_mean: row index out of range");
            acc += vecs[d].mat()(r, 0);
            ++total;
        }
    }
    if (total == 0) throw ConfigError("batch_group_mean: empty selection");
    Mat<Scalar> out(1, 1);
    out(0, 0) = acc / static_cast<Scalar>(total);
    auto idxs = std::make_shared<std::vector<int>>();
    for (const auto& v : vecs) idxs->push_back(v.idx);
    auto rows_ptr = std::make_shared<std::vector<std::vector<int>>>(rows);
    return detail::make_op(t, std::move(out), ng, [&t, idxs, rows_ptr, total](int yi) {
        return [&t, idxs, rows_ptr, total, yi]() {
            Scalar g = t.grad(yi)(0, 0) / static_cast<Scalar>(total);
            for (size_t d = 0; d < idxs->size(); ++d) {
                int vi = (*idxs)[d];
                if (!t.needs_grad(vi)) continue;
                Mat<Scalar>& gv = t.grad(vi);
                for (int r : (*rows_ptr)[d]) gv(r, 0) += g;
            }
        };
    });
}

// max of two scalars; the subgradient at a tie flows through `a`
// (the important-group branch by convention).
template <typename Scalar>
Value<Scalar> max2(const Value<Scalar>& a, const Value<Scalar>& b) {
    Tape<Scalar>& t = *a.tape;
    Scalar av = a.scalar(), bv = b.scalar();
    bool pick_a = av >= bv;
    bool ng = detail::any_needs(a, b);
    Mat<Scalar> out(1, 1);
    out(0, 0) = pick_a ? av : bv;
    int sel = pick_a ? a.idx : b.idx;
    return detail::make_op(t, std::move(out), ng, [&t, sel](int yi) {
        return [&t, sel, yi]() {
            if (t.needs_grad(sel)) t.grad(sel)(0, 0) += t.grad(yi)(0, 0);
        };
    });
}

// alpha * a + beta * b for scalar nodes.
template <typename Scalar>
Value<Scalar> axpby(Scalar alpha, const Value<Scalar>& a, Scalar beta, const Value<Scalar>& b) {
    Tape<Scalar>& t = *a.tape;
    Mat<Scalar> out(1, 1);
    out(0, 0) = alpha * a.scalar() + beta * b.scalar();
    bool ng = detail::any_needs(a, b);
    int ai = a.idx, bi = b.idx;
    return detail::make_op(t, std::move(out), ng, [&t, ai, bi, alpha, beta](int yi) {
        return [&t, ai, bi, alpha, beta, yi]() {
            Scalar g = t.grad(yi)(0, 0);
            if (t.needs_grad(ai)) t.grad(ai)(0, 0) += alpha * g;
            if (t.needs_grad(bi)) t.grad(bi)(0, 0) += beta * g;
        };
    });
}

} // namespace sftgo::engine
