#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "sftgo/corpus.hpp"
#include "sftgo/engine/tape.hpp"

namespace sftgo::engine {

struct TinyLMConfig {
    int vocab_size = 0;
    int d_model = 64;
    int n_layers = 2;
    int n_heads = 4;
    int max_seq_len = 128;
    uint64_t seed = 0;

    void validate() const {
        if (vocab_size < 1 || d_model < 1 || n_layers < 1 || n_heads < 1 || max_seq_len < 2)
            throw ConfigError("tiny LM config: all dimensions must be positive (max_seq_len >= 2)");
        if (d_model % n_heads != 0) throw ConfigError("tiny LM config: d_model must be divisible by n_heads");
    }

    // architecture identity; seed intentionally excluded
    bool same_architecture(const TinyLMConfig& o) const {
        return vocab_size == o.vocab_size && d_model == o.d_model && n_layers == o.n_layers &&
               n_heads == o.n_heads && max_seq_len == o.max_seq_len;
    }
};

/// Named parameter tensors plus the architecture they belong to.
template <typename Scalar>
class ParamSet {
public:
    struct Entry {
        std::string name;
        Mat<Scalar> value;
        Mat<Scalar> grad; // same shape once populated, else empty
    };

    TinyLMConfig config;

    int add(const std::string& name, Mat<Scalar> value) {
        if (by_name_.count(name)) throw ConfigError("duplicate parameter name: " + name);
        by_name_[name] = static_cast<int>(entries_.size());
        entries_.push_back({name, std::move(value), Mat<Scalar>()});
        return static_cast<int>(entries_.size()) - 1;
    }

    std::vector<Entry>& entries() { return entries_; }
    const std::vector<Entry>& entries() const { return entries_; }

    Entry& at(const std::string& name) {
        auto it = by_name_.find(name);
        if (it == by_name_.end()) throw ConfigError("unknown parameter: " + name);
        return entries_[static_cast<size_t>(it->second)];
    }
    const Entry& at(const std::string& name) const {
        auto it = by_name_.find(name);
        if (it == by_name_.end()) throw ConfigError("unknown parameter: " + name);
        return entries_[static_cast<size_t>(it->second)];
    }

    long param_count() const {
        long n = 0;
        for (const auto& e : entries_) n += e.value.size();
        return n;
    }

    void zero_grads() {
        for (auto& e : entries_) e.grad = Mat<Scalar>::Zero(e.value.rows(), e.value.cols());
    }

    template <typename Other>
    ParamSet<Other> cast() const {
        ParamSet<Other> out;
        out.config = config;
        for (const auto& e : entries_) out.add(e.name, e.value.template cast<Other>());
        return out;
    }

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, int> by_name_;
};

// Seeded initialization; draws in a fixed row-major order so the result is
// identical across platforms and Eigen versions.
template <typename Scalar>
ParamSet<Scalar> init_tiny_lm(const TinyLMConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    auto normal_mat = [&rng](Eigen::Index r, Eigen::Index c, double stddev) {
        Mat<Scalar> m(r, c);
        for (Eigen::Index i = 0; i < r; ++i)
            for (Eigen::Index j = 0; j < c; ++j) m(i, j) = static_cast<Scalar>(rng.normal(0.0, stddev));
        return m;
    };
    const int D = cfg.d_model;
    const int H = 4 * D;
    const double w_std = 1.0 / std::sqrt(static_cast<double>(D));
    const double h_std = 1.0 / std::sqrt(static_cast<double>(H));

    ParamSet<Scalar> p;
    p.config = cfg;
    p.add("tok_emb", normal_mat(cfg.vocab_size, D, 0.08));
    p.add("pos_emb", normal_mat(cfg.max_seq_len, D, 0.08));
    for (int l = 0; l < cfg.n_layers; ++l) {
        std::string pre = "l" + std::to_string(l) + ".";
        p.add(pre + "ln1.g", Mat<Scalar>::Ones(1, D));
        p.add(pre + "ln1.b", Mat<Scalar>::Zero(1, D));
        p.add(pre + "attn.wq", normal_mat(D, D, w_std));
        p.add(pre + "attn.wk", normal_mat(D, D, w_std));
        p.add(pre + "attn.wv", normal_mat(D, D, w_std));
        p.add(pre + "attn.wo", normal_mat(D, D, w_std));
        p.add(pre + "ln2.g", Mat<Scalar>::Ones(1, D));
        p.add(pre + "ln2.b", Mat<Scalar>::Zero(1, D));
        p.add(pre + "mlp.w1", normal_mat(D, H, w_std));
        p.add(pre + "mlp.b1", Mat<Scalar>::Zero(1, H));
        p.add(pre + "mlp.w2", normal_mat(H, D, h_std));
        p.add(pre + "mlp.b2", Mat<Scalar>::Zero(1, D));
    }
    p.add("ln_f.g", Mat<Scalar>::Ones(1, D));
    p.add("ln_f.b", Mat<Scalar>::Zero(1, D));
    p.add("head", normal_mat(D, cfg.vocab_size, w_std));
    return p;
}

/// Parameters registered as leaves on a tape for one forward/backward pass.
template <typename Scalar>
struct BoundParams {
    ParamSet<Scalar>* source = nullptr;
    std::vector<Value<Scalar>> leaves; // parallel to source->entries()

    const Value<Scalar>& leaf(const std::string& name) const {
        for (size_t i = 0; i < source->entries().size(); ++i)
            if (source->entries()[i].name == name) return leaves[i];
        throw ConfigError("unknown parameter: " + name);
    }
};

template <typename Scalar>
BoundParams<Scalar> bind_params(Tape<Scalar>& tape, ParamSet<Scalar>& params, bool needs_grad) {
    BoundParams<Scalar> bound;
    bound.source = &params;
    bound.leaves.reserve(params.entries().size());
    for (auto& e : params.entries()) bound.leaves.push_back(tape.leaf(e.value, needs_grad));
    return bound;
}

// Writes accumulated leaf gradients back into the ParamSet (zero for
// parameters the loss never reached).
template <typename Scalar>
void copy_grads_back(BoundParams<Scalar>& bound) {
    auto& entries = bound.source->entries();
    for (size_t i = 0; i < entries.size(); ++i) {
        const Value<Scalar>& v = bound.leaves[i];
        if (v.tape->grad_allocated(v.idx))
            entries[i].grad = v.tape->grad(v.idx);
        else
            entries[i].grad = Mat<Scalar>::Zero(entries[i].value.rows(), entries[i].value.cols());
    }
}

/// Per-token CE nodes for one batch, in canonical order: documents in batch
/// order, loss-bearing positions ascending within each document.
template <typename Scalar>
struct PerTokenCE {
    std::vector<Value<Scalar>> doc_ce;       // (eff_len - 1) x 1 per document
    std::vector<std::vector<int>> loss_rows; // rows of doc_ce that carry loss

    // CE values restricted to loss-bearing rows, per document, as doubles
    std::vector<std::vector<double>> values() const {
        std::vector<std::vector<double>> out(doc_ce.size());
        for (size_t d = 0; d < doc_ce.size(); ++d) {
            out[d].reserve(loss_rows[d].size());
            for (int r : loss_rows[d]) out[d].push_back(static_cast<double>(doc_ce[d].mat()(r, 0)));
        }
        return out;
    }

    long total_loss_tokens() const {
        long n = 0;
        for (const auto& rows : loss_rows) n += static_cast<long>(rows.size());
        return n;
    }
};

// Causal next-token prediction over every document in the batch. Padding and
// non-loss positions are excluded from loss_rows; CE values exist for every
// predicted position.
template <typename Scalar>
PerTokenCE<Scalar> forward_per_token_ce(Tape<Scalar>& tape, const BoundParams<Scalar>& bound,
                                        const Batch& batch) {
    const TinyLMConfig& cfg = bound.source->config;
    cfg.validate();
    if (bound.leaves.empty() || bound.leaves.front().tape != &tape)
        throw StateError("forward: parameters are not bound to this tape");
    PerTokenCE<Scalar> out;

    for (const Document& doc : batch.documents) {
        // effective length: padding is always a suffix
        int eff = doc.length();
        while (eff > 0 && doc.ids[static_cast<size_t>(eff - 1)] == batch.pad_id) --eff;
        if (eff < 2) throw DataError("forward: document too short to predict anything");
        if (eff - 1 > cfg.max_seq_len)
            throw DataError("forward: sequence length " + std::to_string(eff) + " exceeds max_seq_len " +
                            std::to_string(cfg.max_seq_len));
        for (int p = 0; p < eff; ++p) {
            int id = doc.ids[static_cast<size_t>(p)];
            if (id < 0 || id >= cfg.vocab_size)
                throw DataError("forward: token id " + std::to_string(id) + " out of range");
        }

        std::vector<int> inputs(doc.ids.begin(), doc.ids.begin() + (eff - 1));
        std::vector<int> targets(doc.ids.begin() + 1, doc.ids.begin() + eff);
        std::vector<int> positions(inputs.size());
        for (size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int>(i);

        Value<Scalar> x = add(embedding_rows(bound.leaf("tok_emb"), inputs),
                              embedding_rows(bound.leaf("pos_emb"), positions));
        for (int l = 0; l < cfg.n_layers; ++l) {
            std::string pre = "l" + std::to_string(l) + ".";
            Value<Scalar> h = layer_norm(x, bound.leaf(pre + "ln1.g"), bound.leaf(pre + "ln1.b"));
            Value<Scalar> attn = causal_attention(matmul(h, bound.leaf(pre + "attn.wq")),
                                                  matmul(h, bound.leaf(pre + "attn.wk")),
                                                  matmul(h, bound.leaf(pre + "attn.wv")), cfg.n_heads);
            x = add(x, matmul(attn, bound.leaf(pre + "attn.wo")));
            Value<Scalar> h2 = layer_norm(x, bound.leaf(pre + "ln2.g"), bound.leaf(pre + "ln2.b"));
            Value<Scalar> m = gelu(add_rowvec(matmul(h2, bound.leaf(pre + "mlp.w1")), bound.leaf(pre + "mlp.b1")));
            m = add_rowvec(matmul(m, bound.leaf(pre + "mlp.w2")), bound.leaf(pre + "mlp.b2"));
            x = add(x, m);
        }
        Value<Scalar> hf = layer_norm(x, bound.leaf("ln_f.g"), bound.leaf("ln_f.b"));
        Value<Scalar> logits = matmul(hf, bound.leaf("head"));
        Value<Scalar> ce = ce_per_token(logits, targets);

        std::vector<int> loss_rows;
        for (int p = 1; p < eff; ++p)
            if (doc.response_mask[static_cast<size_t>(p)]) loss_rows.push_back(p - 1);
        out.doc_ce.push_back(ce);
        out.loss_rows.push_back(std::move(loss_rows));
    }
    return out;
}

// Value-only evaluation: per-token CE of params on a batch, canonical order.
template <typename Scalar>
std::vector<std::vector<double>> per_token_ce_values(ParamSet<Scalar>& params, const Batch& batch) {
    Tape<Scalar> tape;
    BoundParams<Scalar> bound = bind_params(tape, params, /*needs_grad=*/false);
    return forward_per_token_ce(tape, bound, batch).values();
}

} // namespace sftgo::engine
