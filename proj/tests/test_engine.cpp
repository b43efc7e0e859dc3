#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <vector>

#include "sftgo/engine/checkpoint.hpp"
#include "sftgo/engine/gradcheck.hpp"
#include "sftgo/engine/optim.hpp"
#include "sftgo/grouping.hpp"

using namespace sftgo;
using namespace sftgo::engine;
namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------------------
// Independent straight-line forward pass: plain loops over plain arrays, no
// tape, no Eigen arithmetic. Serves as the oracle for forward_per_token_ce.
// ---------------------------------------------------------------------------
using Grid = std::vector<std::vector<double>>;

Grid grid_of(const ParamSet<double>& p, const std::string& name) {
    const auto& m = p.at(name).value;
    Grid g(static_cast<size_t>(m.rows()), std::vector<double>(static_cast<size_t>(m.cols())));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) g[static_cast<size_t>(r)][static_cast<size_t>(c)] = m(r, c);
    return g;
}

Grid grid_matmul(const Grid& a, const Grid& b) {
    size_t n = a.size(), k = b.size(), m = b[0].size();
    Grid out(n, std::vector<double>(m, 0.0));
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < k; ++j)
            for (size_t c = 0; c < m; ++c) out[i][c] += a[i][j] * b[j][c];
    return out;
}

Grid grid_layer_norm(const Grid& x, const Grid& gain, const Grid& bias) {
    const double eps = 1e-5;
    Grid out = x;
    size_t cols = x[0].size();
    for (size_t i = 0; i < x.size(); ++i) {
        double mu = 0.0;
        for (double v : x[i]) mu += v;
        mu /= static_cast<double>(cols);
        double var = 0.0;
        for (double v : x[i]) var += (v - mu) * (v - mu);
        var /= static_cast<double>(cols);
        double inv = 1.0 / std::sqrt(var + eps);
        for (size_t j = 0; j < cols; ++j) out[i][j] = gain[0][j] * ((x[i][j] - mu) * inv) + bias[0][j];
    }
    return out;
}

std::vector<double> oracle_forward_ce(const ParamSet<double>& p, const std::vector<int>& ids) {
    const auto& cfg = p.config;
    size_t n = ids.size() - 1;
    size_t D = static_cast<size_t>(cfg.d_model);
    size_t H = static_cast<size_t>(cfg.n_heads);
    size_t dh = D / H;

    Grid tok = grid_of(p, "tok_emb"), pos = grid_of(p, "pos_emb");
    Grid x(n, std::vector<double>(D));
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < D; ++j) x[i][j] = tok[static_cast<size_t>(ids[i])][j] + pos[i][j];

    for (int l = 0; l < cfg.n_layers; ++l) {
        std::string pre = "l" + std::to_string(l) + ".";
        Grid h = grid_layer_norm(x, grid_of(p, pre + "ln1.g"), grid_of(p, pre + "ln1.b"));
        Grid q = grid_matmul(h, grid_of(p, pre + "attn.wq"));
        Grid k = grid_matmul(h, grid_of(p, pre + "attn.wk"));
        Grid v = grid_matmul(h, grid_of(p, pre + "attn.wv"));

        Grid attn(n, std::vector<double>(D, 0.0));
        for (size_t head = 0; head < H; ++head) {
            size_t off = head * dh;
            for (size_t i = 0; i < n; ++i) {
                std::vector<double> scores(i + 1, 0.0);
                for (size_t t = 0; t <= i; ++t) {
                    double s = 0.0;
                    for (size_t c = 0; c < dh; ++c) s += q[i][off + c] * k[t][off + c];
                    scores[t] = s / std::sqrt(static_cast<double>(dh));
                }
                double mx = scores[0];
                for (double s : scores) mx = std::max(mx, s);
                double z = 0.0;
                for (double& s : scores) {
                    s = std::exp(s - mx);
                    z += s;
                }
                for (size_t t = 0; t <= i; ++t)
                    for (size_t c = 0; c < dh; ++c) attn[i][off + c] += (scores[t] / z) * v[t][off + c];
            }
        }
        Grid attn_out = grid_matmul(attn, grid_of(p, pre + "attn.wo"));
        for (size_t i = 0; i < n; ++i)
            for (size_t j = 0; j < D; ++j) x[i][j] += attn_out[i][j];

        Grid h2 = grid_layer_norm(x, grid_of(p, pre + "ln2.g"), grid_of(p, pre + "ln2.b"));
        Grid m1 = grid_matmul(h2, grid_of(p, pre + "mlp.w1"));
        Grid b1 = grid_of(p, pre + "mlp.b1");
        for (size_t i = 0; i < n; ++i)
            for (size_t j = 0; j < m1[0].size(); ++j) {
                double u = m1[i][j] + b1[0][j];
                m1[i][j] = 0.5 * u * (1.0 + std::erf(u / std::sqrt(2.0)));
            }
        Grid m2 = grid_matmul(m1, grid_of(p, pre + "mlp.w2"));
        Grid b2 = grid_of(p, pre + "mlp.b2");
        for (size_t i = 0; i < n; ++i)
            for (size_t j = 0; j < D; ++j) x[i][j] += m2[i][j] + b2[0][j];
    }

    Grid xf = grid_layer_norm(x, grid_of(p, "ln_f.g"), grid_of(p, "ln_f.b"));
    Grid logits = grid_matmul(xf, grid_of(p, "head"));
    std::vector<double> ce(n);
    for (size_t i = 0; i < n; ++i) {
        double mx = logits[i][0];
        for (double v : logits[i]) mx = std::max(mx, v);
        double z = 0.0;
        for (double v : logits[i]) z += std::exp(v - mx);
        ce[i] = std::log(z) + mx - logits[i][static_cast<size_t>(ids[i + 1])];
    }
    return ce;
}

Batch single_doc_batch(const std::vector<int>& ids) {
    Document doc;
    doc.ids = ids;
    doc.response_mask.assign(ids.size(), true);
    doc.response_mask[0] = false;
    Batch batch;
    batch.max_len = static_cast<int>(ids.size());
    batch.documents = {doc};
    batch.doc_indices = {0};
    return batch;
}

} // namespace

TEST_CASE("tape: basic op values and gradients") {
    Tape<double> t;
    Mat<double> am(2, 2), bm(2, 2);
    am << 1, 2, 3, 4;
    bm << 5, 6, 7, 8;
    auto a = t.leaf(am, true);
    auto b = t.leaf(bm, true);
    auto y = matmul(a, b);
    auto s = sum(y);
    t.backward(s);
    // d(sum(AB))/dA = ones * B^T
    Mat<double> expect_a = Mat<double>::Ones(2, 2) * bm.transpose();
    Mat<double> expect_b = am.transpose() * Mat<double>::Ones(2, 2);
    CHECK((t.grad(a.idx) - expect_a).norm() == doctest::Approx(0.0));
    CHECK((t.grad(b.idx) - expect_b).norm() == doctest::Approx(0.0));
}

TEST_CASE("tape: backward state errors") {
    Tape<double> t;
    CHECK_THROWS_AS(t.backward(Value<double>{&t, 0}), StateError);

    Mat<double> m(1, 1);
    m << 2.0;
    auto a = t.leaf(m, true);
    auto s = sum(a);
    t.backward(s);
    CHECK_THROWS_AS(t.backward(s), StateError); // second backward without re-forward

    t.reset();
    auto a2 = t.leaf(m, true);
    auto s2 = sum(a2);
    t.backward(s2); // fine after reset
    CHECK(t.grad(a2.idx)(0, 0) == 1.0);
}

TEST_CASE("loss = sum of one tensor gives all-ones grad there, zeros elsewhere") {
    ParamSet<double> ps;
    ps.add("w1", Mat<double>::Random(3, 2));
    ps.add("w2", Mat<double>::Random(2, 2));
    Tape<double> t;
    auto bound = bind_params(t, ps, true);
    auto loss = sum(bound.leaves[0]);
    t.backward(loss);
    copy_grads_back(bound);
    CHECK((ps.entries()[0].grad - Mat<double>::Ones(3, 2)).norm() == 0.0);
    CHECK(ps.entries()[1].grad.norm() == 0.0);
}

TEST_CASE("max2 picks the larger value; ties route the gradient to the first input") {
    Tape<double> t;
    Mat<double> m(1, 1);
    m << 0.5;
    auto a = t.leaf(m, true);
    auto b = t.leaf(m, true);
    auto y = max2(a, b);
    t.backward(y);
    CHECK(t.grad(a.idx)(0, 0) == 1.0);
    CHECK_FALSE(t.grad_allocated(b.idx));
}

TEST_CASE("uniform logits give CE = ln(vocab) exactly") {
    TinyLMConfig cfg;
    cfg.vocab_size = 7;
    cfg.d_model = 16;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.max_seq_len = 8;
    cfg.seed = 3;

    auto run = [&](auto scalar_tag, double tol) {
        using S = decltype(scalar_tag);
        ParamSet<S> params = init_tiny_lm<S>(cfg);
        params.at("head").value.setZero();
        Batch batch = single_doc_batch({1, 4, 5, 6, 4, 2});
        auto vals = per_token_ce_values(params, batch);
        for (double ce : vals[0]) CHECK(ce == doctest::Approx(std::log(7.0)).epsilon(tol));
    };
    run(double{}, 1e-12);
    run(float{}, 1e-6);
}

TEST_CASE("per-token CE values are finite and nonnegative; mean equals the scalar loss node") {
    TinyLMConfig cfg;
    cfg.vocab_size = 29;
    cfg.d_model = 16;
    cfg.n_layers = 2;
    cfg.n_heads = 2;
    cfg.max_seq_len = 12;
    cfg.seed = 17;
    ParamSet<double> params = init_tiny_lm<double>(cfg);
    Batch batch = single_doc_batch({1, 9, 21, 7, 14, 5, 2});

    Tape<double> tape;
    auto bound = bind_params(tape, params, true);
    auto ptc = forward_per_token_ce(tape, bound, batch);
    auto mean_node = batch_group_mean(tape, ptc.doc_ce, ptc.loss_rows);

    double hand_mean = 0.0;
    long n = 0;
    for (const auto& doc : ptc.values())
        for (double ce : doc) {
            CHECK(std::isfinite(ce));
            CHECK(ce >= 0.0);
            hand_mean += ce;
            ++n;
        }
    hand_mean /= static_cast<double>(n);
    CHECK(mean_node.scalar() == doctest::Approx(hand_mean).epsilon(1e-15));
}

TEST_CASE("forward matches an independent straight-line implementation") {
    TinyLMConfig cfg;
    cfg.vocab_size = 50;
    cfg.d_model = 32;
    cfg.n_layers = 2;
    cfg.n_heads = 4;
    cfg.max_seq_len = 16;
    cfg.seed = 5;
    ParamSet<double> params = init_tiny_lm<double>(cfg);

    std::vector<int> ids = {1, 12, 33, 7, 45, 20, 11, 2};
    auto vals = per_token_ce_values(params, single_doc_batch(ids));
    auto expected = oracle_forward_ce(params, ids);
    REQUIRE(vals[0].size() == expected.size());
    for (size_t i = 0; i < expected.size(); ++i)
        CHECK(vals[0][i] == doctest::Approx(expected[i]).epsilon(1e-10));
}

TEST_CASE("excess-loss scores between identical parameter sets are exactly zero") {
    TinyLMConfig cfg;
    cfg.vocab_size = 31;
    cfg.d_model = 16;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.max_seq_len = 10;
    cfg.seed = 4;
    ParamSet<double> theta = init_tiny_lm<double>(cfg);
    ParamSet<double> phi = theta;
    Batch batch = single_doc_batch({1, 8, 27, 3, 15, 2});
    auto a = per_token_ce_values(theta, batch);
    auto b = per_token_ce_values(phi, batch);
    for (size_t i = 0; i < a[0].size(); ++i) CHECK(a[0][i] - b[0][i] == 0.0);
}

TEST_CASE("excess loss of an untrained model against a trained reference is positive on average") {
    TinyLMConfig cfg;
    cfg.vocab_size = 16;
    cfg.d_model = 16;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.max_seq_len = 12;
    cfg.seed = 8;
    ParamSet<double> current = init_tiny_lm<double>(cfg); // stays untrained
    ParamSet<double> reference = init_tiny_lm<double>(cfg);

    // deterministic cyclic bigram language over ids 4..13
    auto next_id = [](int w) { return 4 + ((w - 4) * 3 + 1) % 10; };
    auto walk = [&](int start) {
        Document doc;
        doc.ids = {Vocab::kBosId};
        int w = 4 + start;
        for (int i = 0; i < 6; ++i) {
            doc.ids.push_back(w);
            w = next_id(w);
        }
        doc.ids.push_back(Vocab::kEosId);
        doc.response_mask.assign(doc.ids.size(), true);
        doc.response_mask[0] = false;
        return doc;
    };

    Batch train_batch;
    train_batch.max_len = 8;
    for (int s = 0; s < 8; ++s) {
        train_batch.documents.push_back(walk(s));
        train_batch.doc_indices.push_back(s);
    }

    // the reference adapts to the domain; every bigram is covered in training
    AdamState<double> state;
    AdamConfig adam{0.02, 0.9, 0.99, 1e-8, 0.0};
    for (int step = 0; step < 60; ++step) {
        Tape<double> tape;
        auto bound = bind_params(tape, reference, true);
        auto ptc = forward_per_token_ce(tape, bound, train_batch);
        tape.backward(batch_group_mean(tape, ptc.doc_ce, ptc.loss_rows));
        copy_grads_back(bound);
        adam_step(reference, state, adam);
    }

    // held-out walk: an unseen sequence built from seen transitions
    Batch held_out;
    held_out.max_len = 8;
    held_out.documents = {walk(8)};
    held_out.doc_indices = {0};
    auto cur_ce = per_token_ce_values(current, held_out);
    auto ref_ce = per_token_ce_values(reference, held_out);
    ImportanceScores scores = excess_loss_scores(cur_ce, ref_ce);
    double mean = 0.0;
    for (double s : scores.per_doc[0]) mean += s;
    mean /= static_cast<double>(scores.per_doc[0].size());
    CHECK(mean > 0.0);
}

TEST_CASE("forward rejects ids out of range and overlong sequences") {
    TinyLMConfig cfg;
    cfg.vocab_size = 10;
    cfg.d_model = 8;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.max_seq_len = 4;
    cfg.seed = 1;
    ParamSet<double> params = init_tiny_lm<double>(cfg);
    CHECK_THROWS_AS(per_token_ce_values(params, single_doc_batch({1, 99, 2})), DataError);
    CHECK_THROWS_AS(per_token_ce_values(params, single_doc_batch({1, 3, 4, 5, 6, 7, 2})), DataError);
}

TEST_CASE("checkpoint round trip is bit-exact and reproduces the forward pass") {
    TinyLMConfig cfg;
    cfg.vocab_size = 23;
    cfg.d_model = 16;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.max_seq_len = 8;
    cfg.seed = 9;
    ParamSet<double> params = init_tiny_lm<double>(cfg);

    auto dir = fs::temp_directory_path() / "sftgo_engine_test";
    fs::create_directories(dir);
    auto path = (dir / "model.ckpt").string();
    save_checkpoint(params, path);
    ParamSet<double> loaded = load_checkpoint<double>(path);

    REQUIRE(loaded.entries().size() == params.entries().size());
    for (size_t i = 0; i < params.entries().size(); ++i) {
        CHECK(loaded.entries()[i].name == params.entries()[i].name);
        CHECK((loaded.entries()[i].value.array() == params.entries()[i].value.array()).all());
    }
    CHECK(loaded.config.same_architecture(params.config));

    Batch batch = single_doc_batch({1, 5, 9, 13, 2});
    auto a = per_token_ce_values(params, batch);
    auto b = per_token_ce_values(loaded, batch);
    for (size_t i = 0; i < a[0].size(); ++i) CHECK(a[0][i] == b[0][i]);

    // precision mismatch is a configuration error
    CHECK_THROWS_AS(load_checkpoint<float>(path), ConfigError);
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

TEST_CASE("gradcheck: quadratic probe is exact to roundoff") {
    auto factory = [](uint64_t seed) {
        ParamSet<double> ps;
        Rng rng(seed);
        Mat<double> w(3, 2);
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 2; ++c) w(r, c) = rng.normal();
        ps.add("w", w);
        return ps;
    };
    auto builder = [](Tape<double>& t, const BoundParams<double>& bound) {
        Mat<double> target = Mat<double>::Constant(3, 2, 0.7);
        auto diff = sub(bound.leaves[0], t.leaf(target, false));
        auto loss = scale(sum(hadamard(diff, diff)), 0.5);
        return LossProbe{loss, true};
    };
    auto report = gradcheck(factory, builder, 1e-5, 1e-9, 77, 6);
    CHECK(report.conclusive);
    CHECK(report.pass);
    CHECK(report.max_rel_error < 1e-9);
}

namespace {

TinyLMConfig small_lm_config(uint64_t seed) {
    TinyLMConfig cfg;
    cfg.vocab_size = 19;
    cfg.d_model = 16;
    cfg.n_layers = 2;
    cfg.n_heads = 2;
    cfg.max_seq_len = 10;
    cfg.seed = seed;
    return cfg;
}

} // namespace

TEST_CASE("gradcheck: LM cross-entropy gradient") {
    Batch batch = single_doc_batch({1, 7, 3, 12, 18, 5, 2});
    auto factory = [](uint64_t seed) { return init_tiny_lm<double>(small_lm_config(seed)); };
    auto builder = [&batch](Tape<double>& t, const BoundParams<double>& bound) {
        auto ptc = forward_per_token_ce(t, bound, batch);
        return LossProbe{batch_group_mean(t, ptc.doc_ce, ptc.loss_rows), true};
    };
    auto report = gradcheck(factory, builder, 1e-5, 1e-5, 123, 4);
    CHECK(report.conclusive);
    CHECK(report.pass);
}

TEST_CASE("gradcheck: full group-optimization loss away from ties") {
    Batch batch = single_doc_batch({1, 7, 3, 12, 18, 5, 9, 2});
    // fixed alternating assignment over the 7 loss rows
    std::vector<std::vector<int>> imp_rows = {{0, 2, 4, 6}};
    std::vector<std::vector<int>> unimp_rows = {{1, 3, 5}};

    auto factory = [](uint64_t seed) { return init_tiny_lm<double>(small_lm_config(seed)); };
    auto builder = [&](Tape<double>& t, const BoundParams<double>& bound) {
        auto ptc = forward_per_token_ce(t, bound, batch);
        auto ce_all = batch_group_mean(t, ptc.doc_ce, ptc.loss_rows);
        auto imp = batch_group_mean(t, ptc.doc_ce, imp_rows);
        auto unimp = batch_group_mean(t, ptc.doc_ce, unimp_rows);
        bool well_posed = std::abs(imp.scalar() - unimp.scalar()) > 1e-4;
        auto worst = max2(imp, unimp);
        auto loss = axpby(0.1, ce_all, 0.9, worst);
        return LossProbe{loss, well_posed};
    };
    auto report = gradcheck(factory, builder, 1e-5, 1e-5, 321, 4);
    CHECK(report.conclusive);
    CHECK(report.pass);
}

TEST_CASE("gradcheck reports inconclusive when every point is rejected") {
    auto factory = [](uint64_t seed) {
        ParamSet<double> ps;
        Rng rng(seed);
        Mat<double> w(2, 2);
        w.setConstant(rng.normal());
        ps.add("w", w);
        return ps;
    };
    auto builder = [](Tape<double>&, const BoundParams<double>& bound) {
        return LossProbe{sum(bound.leaves[0]), false}; // always tied
    };
    auto report = gradcheck(factory, builder, 1e-5, 1e-5, 4, 2, 3);
    CHECK_FALSE(report.conclusive);
    CHECK(report.resamples == 4); // initial try plus three re-samples
}
