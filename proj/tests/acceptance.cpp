// Acceptance suite: one checked criterion per section, one PASS/FAIL line
// each, nonzero exit when anything fails.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "sftgo/cli.hpp"
#include "sftgo/engine/gradcheck.hpp"
#include "sftgo/theory/suite.hpp"
#include "sftgo/toy_corpus.hpp"
#include "sftgo/trainer.hpp"

using namespace sftgo;
namespace fs = std::filesystem;

namespace {

int failures = 0;

class Criterion {
public:
    Criterion(int number, std::string description)
        : number_(number), description_(std::move(description)), start_(std::chrono::steady_clock::now()) {}

    void check(bool ok, const std::string& note) {
        all_ok_ = all_ok_ && ok;
        if (!ok) notes_ += (notes_.empty() ? "" : "; ") + note;
    }

    ~Criterion() {
        auto secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        std::ostringstream line;
        line << "criterion " << number_ << ": " << (all_ok_ ? "PASS" : "FAIL") << " - " << description_
             << " [" << static_cast<long>(secs * 10.0) / 10.0 << "s]";
        if (!all_ok_) line << "  (" << notes_ << ")";
        std::cout << line.str() << std::endl;
        if (!all_ok_) ++failures;
    }

private:
    int number_;
    std::string description_;
    std::string notes_;
    bool all_ok_ = true;
    std::chrono::steady_clock::time_point start_;
};

fs::path work_dir() {
    auto dir = fs::temp_directory_path() / "sftgo_acceptance";
    return dir;
}

std::string file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) return "<missing:" + p.string() + ">";
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<Document> random_documents(long count, uint64_t seed) {
    Rng rng(seed);
    std::vector<Document> docs;
    for (long i = 0; i < count; ++i) {
        Document d;
        int len = 2 + static_cast<int>(rng.uniform_index(40));
        bool any = false;
        d.ids.push_back(Vocab::kBosId);
        d.response_mask.push_back(false);
        for (int p = 1; p < len; ++p) {
            d.ids.push_back(4 + static_cast<int>(rng.uniform_index(100)));
            bool loss = rng.uniform() < 0.6;
            d.response_mask.push_back(loss);
            any = any || loss;
        }
        if (!any) d.response_mask.back() = true;
        docs.push_back(std::move(d));
    }
    return docs;
}

bool check_assignment(Criterion& c, const std::vector<Document>& docs, const ImportanceScores& scores,
                      double pct, const std::string& tag) {
    GroupingConfig cfg;
    cfg.percentile = pct;
    GroupAssignment a = assign_top_fraction(scores, docs, cfg);
    GroupAssignment a_again = assign_top_fraction(scores, docs, cfg);

    ImportanceScores warped;
    for (const auto& s : scores.per_doc) {
        std::vector<double> w;
        w.reserve(s.size());
        for (double x : s) w.push_back(std::atan(x) + 2.0 * x + 5.0);
        warped.per_doc.push_back(std::move(w));
    }
    GroupAssignment a_warped = assign_top_fraction(warped, docs, cfg);

    bool ok = true;
    for (size_t d = 0; d < docs.size(); ++d) {
        long n_loss = docs[d].loss_token_count();
        long n_imp = 0, n_unimp = 0;
        for (int p = 0; p < docs[d].length(); ++p) {
            GroupLabel l = a.per_doc[d][static_cast<size_t>(p)];
            bool loss_pos = docs[d].response_mask[static_cast<size_t>(p)];
            if (!loss_pos && l != GroupLabel::excluded) ok = false;
            if (loss_pos && l == GroupLabel::excluded) ok = false;
            if (l == GroupLabel::important) ++n_imp;
            if (l == GroupLabel::unimportant) ++n_unimp;
        }
        if (n_imp + n_unimp != n_loss) ok = false;
        if (n_imp != important_count(pct, n_loss)) ok = false;
        if (a.per_doc[d] != a_again.per_doc[d]) ok = false;
        if (a.per_doc[d] != a_warped.per_doc[d]) ok = false;
    }
    c.check(ok, tag + " invariants at percentile " + fmt_double(pct));
    return ok;
}

TrainConfig desk_config(const std::string& dataset, const std::string& out_dir, uint64_t seed) {
    TrainConfig cfg;
    cfg.dataset = dataset;
    cfg.output_dir = out_dir;
    cfg.seed = seed;
    cfg.epochs = 6;
    cfg.batch_size = 16;
    cfg.vocab_max_size = 512;
    cfg.record_wall_time = false; // keeps reruns byte-comparable
    cfg.model.d_model = 64;
    cfg.model.n_layers = 2;
    cfg.model.n_heads = 4;
    cfg.model.max_seq_len = 128;
    cfg.optimizer.lr = 3e-3;
    GroupingSection sec;
    sec.cfg.strategy = Strategy::tfidf;
    sec.cfg.percentile = 70.0;
    cfg.grouping = sec;
    return cfg;
}

// ---------------------------------------------------------------------------

void criterion_1_grouping(const fs::path& dir) {
    Criterion c(1, "grouping invariants across all three strategies");
    const std::vector<double> percentiles = {25.0, 50.0, 70.0, 85.0, 90.0};

    // statistics-based scores over a 1000-document corpus
    ToyCorpusConfig toy;
    toy.n_docs = 1000;
    toy.seed = 77;
    auto records = make_toy_corpus(toy);
    Vocab vocab = build_vocab(records, 512);
    auto docs = tokenize_corpus(records, vocab, false, 128, nullptr);
    c.check(docs.size() == 1000, "corpus generation");
    ImportanceScores tfidf = tfidf_scores(docs, vocab);

    // external scores: random reals via the file interface, over documents
    // with arbitrary loss masks
    auto random_docs = random_documents(1000, 909);
    fs::create_directories(dir);
    auto score_path = (dir / "external_scores.jsonl").string();
    {
        Rng rng(5150);
        std::ofstream out(score_path, std::ios::binary);
        for (const auto& d : random_docs) {
            nlohmann::ordered_json obj;
            std::vector<double> s;
            for (int i = 0; i < d.loss_token_count(); ++i) s.push_back(rng.normal());
            obj["scores"] = s;
            out << obj.dump() << '\n';
        }
    }
    ImportanceScores external = external_scores_load(score_path, random_docs);

    // loss-based scores: CE difference between two small random models
    engine::TinyLMConfig lm;
    lm.vocab_size = vocab.size();
    lm.d_model = 16;
    lm.n_layers = 1;
    lm.n_heads = 2;
    lm.max_seq_len = 128;
    lm.seed = 1;
    auto current = engine::init_tiny_lm<double>(lm);
    lm.seed = 2;
    auto reference = engine::init_tiny_lm<double>(lm);
    std::vector<std::vector<double>> cur_ce, ref_ce;
    for (const Batch& batch : chunk_batches(docs, 64)) {
        for (auto& v : engine::per_token_ce_values(current, batch)) cur_ce.push_back(std::move(v));
        for (auto& v : engine::per_token_ce_values(reference, batch)) ref_ce.push_back(std::move(v));
    }
    ImportanceScores excess = excess_loss_scores(cur_ce, ref_ce);

    for (double pct : percentiles) {
        check_assignment(c, docs, tfidf, pct, "tfidf");
        check_assignment(c, random_docs, external, pct, "external");
        check_assignment(c, docs, excess, pct, "excess_loss");
    }
}

void criterion_2_objective() {
    Criterion c(2, "objective identities on 1000 random batches");
    Rng rng(4242);
    bool ok = true;
    for (int trial = 0; trial < 1000; ++trial) {
        long n = 2 + static_cast<long>(rng.uniform_index(96));
        std::vector<double> ce;
        std::vector<GroupLabel> labels;
        for (long i = 0; i < n; ++i) {
            ce.push_back(rng.uniform() * 6.0);
            labels.push_back(rng.uniform() < 0.4 ? GroupLabel::important : GroupLabel::unimportant);
        }
        labels[0] = GroupLabel::important;
        labels[static_cast<size_t>(n - 1)] = GroupLabel::unimportant;

        auto m = group_mean_ce(ce, labels);
        double worst = worst_group(m.important, m.unimportant);
        ok = ok && worst >= m.all - 1e-12 && m.all >= std::min(*m.important, *m.unimportant) - 1e-12;
        double recon = (static_cast<double>(m.n_important) * *m.important +
                        static_cast<double>(m.n_unimportant) * *m.unimportant) /
                       static_cast<double>(m.n_important + m.n_unimportant);
        ok = ok && std::abs(recon - m.all) <= 1e-12 * std::max(1.0, std::abs(m.all));
        ok = ok && go_loss(m.all, worst, 0.0) == m.all;
        ok = ok && go_loss(m.all, worst, 1.0) == worst;
    }
    c.check(ok, "group mean / worst / combined identities");

    bool lam_ok = true;
    for (int trial = 0; trial < 100; ++trial) {
        double mx = rng.uniform();
        double mn = rng.uniform() * mx;
        long total = 1 + static_cast<long>(rng.uniform_index(5000));
        long t = static_cast<long>(rng.uniform_index(static_cast<uint64_t>(total + 1)));
        LambdaSchedule s{mx, mn, total};
        double expect = std::max(mx * (1.0 - static_cast<double>(t) / static_cast<double>(total)), mn);
        lam_ok = lam_ok && compute_lambda(t, s) == expect;
    }
    c.check(lam_ok, "annealing schedule pointwise");
}

void criterion_3_gradcheck() {
    Criterion c(3, "gradient correctness of CE, worst-group and combined losses");

    engine::TinyLMConfig lm;
    lm.vocab_size = 128;
    lm.d_model = 64;
    lm.n_layers = 2;
    lm.n_heads = 4;
    lm.max_seq_len = 128;

    Document doc_a;
    doc_a.ids = {1, 14, 73, 22, 101, 55, 9, 40, 2};
    doc_a.response_mask = {false, false, true, true, true, true, true, true, true};
    Document doc_b;
    doc_b.ids = {1, 88, 6, 120, 33, 2, 0, 0, 0};
    doc_b.response_mask = {false, true, true, true, true, true, false, false, false};
    Batch batch;
    batch.max_len = 9;
    batch.pad_id = 0;
    batch.documents = {doc_a, doc_b};
    batch.doc_indices = {0, 1};

    // fixed alternating assignment over the loss rows of each document
    auto split_rows = [](const std::vector<std::vector<int>>& all) {
        std::pair<std::vector<std::vector<int>>, std::vector<std::vector<int>>> out;
        out.first.resize(all.size());
        out.second.resize(all.size());
        int k = 0;
        for (size_t d = 0; d < all.size(); ++d)
            for (int r : all[d]) ((k++ % 2 == 0) ? out.first : out.second)[d].push_back(r);
        return out;
    };

    for (uint64_t seed : {11ULL, 22ULL, 33ULL}) {
        auto factory = [&lm](uint64_t s) {
            engine::TinyLMConfig cfg = lm;
            cfg.seed = s;
            return engine::init_tiny_lm<double>(cfg);
        };

        auto ce_builder = [&](engine::Tape<double>& t, const engine::BoundParams<double>& bound) {
            auto ptc = engine::forward_per_token_ce(t, bound, batch);
            return engine::LossProbe{engine::batch_group_mean(t, ptc.doc_ce, ptc.loss_rows), true};
        };
        auto worst_builder = [&](engine::Tape<double>& t, const engine::BoundParams<double>& bound) {
            auto ptc = engine::forward_per_token_ce(t, bound, batch);
            auto [imp, unimp] = split_rows(ptc.loss_rows);
            auto i = engine::batch_group_mean(t, ptc.doc_ce, imp);
            auto u = engine::batch_group_mean(t, ptc.doc_ce, unimp);
            bool posed = std::abs(i.scalar() - u.scalar()) > 1e-4;
            return engine::LossProbe{engine::max2(i, u), posed};
        };
        auto go_builder = [&](engine::Tape<double>& t, const engine::BoundParams<double>& bound) {
            auto ptc = engine::forward_per_token_ce(t, bound, batch);
            auto [imp, unimp] = split_rows(ptc.loss_rows);
            auto all = engine::batch_group_mean(t, ptc.doc_ce, ptc.loss_rows);
            auto i = engine::batch_group_mean(t, ptc.doc_ce, imp);
            auto u = engine::batch_group_mean(t, ptc.doc_ce, unimp);
            bool posed = std::abs(i.scalar() - u.scalar()) > 1e-4;
            return engine::LossProbe{engine::axpby(0.1, all, 0.9, engine::max2(i, u)), posed};
        };

        auto r_ce = engine::gradcheck(factory, ce_builder, 1e-5, 1e-5, seed, 3);
        auto r_worst = engine::gradcheck(factory, worst_builder, 1e-5, 1e-5, seed, 3);
        auto r_go = engine::gradcheck(factory, go_builder, 1e-5, 1e-5, seed, 3);
        c.check(r_ce.conclusive && r_ce.pass,
                "CE gradcheck seed " + std::to_string(seed) + " rel " + fmt_double(r_ce.max_rel_error));
        c.check(r_worst.conclusive && r_worst.pass,
                "worst gradcheck seed " + std::to_string(seed) + " rel " + fmt_double(r_worst.max_rel_error));
        c.check(r_go.conclusive && r_go.pass,
                "combined gradcheck seed " + std::to_string(seed) + " rel " + fmt_double(r_go.max_rel_error));
    }
}

theory::TheorySuiteResult run_default_theory_suite(const fs::path& dir) {
    theory::TheorySuiteOptions opts;
    opts.out_dir = (dir / "theory").string();
    return theory::run_theory_suite(opts);
}

void criterion_4_prop1(const theory::TheorySuiteResult& suite) {
    Criterion c(4, "worst-group dominance on 20 instances x lambda {0.3, 0.5, 0.9}");
    c.check(suite.prop1.size() == 60, "cell count");
    for (const auto& r : suite.prop1) {
        std::string tag = "instance " + std::to_string(r.instance_index) + " lambda " + fmt_double(r.lambda);
        c.check(r.pass, tag + ": worst-group check");
        c.check(r.complementary_pass, tag + ": complementary CE check");
        c.check(!r.inconclusive, tag + ": solver accuracy");
    }
}

void criterion_5_convergence(const theory::TheorySuiteResult& suite) {
    Criterion c(5, "averaged-iterate excess error bounded by B*G/sqrt(T), slope <= -0.35");
    const auto& report = suite.convergence;
    c.check(report.horizons == std::vector<long>({100, 316, 1000, 3162, 10000}), "horizon grid");
    for (size_t h = 0; h < report.horizons.size(); ++h) {
        c.check(report.mean_errors[h] <= report.bounds[h],
                "bound at T=" + std::to_string(report.horizons[h]) + ": " +
                    fmt_double(report.mean_errors[h]) + " vs " + fmt_double(report.bounds[h]));
        c.check(report.mean_errors[h] >= -1e-9, "nonnegative excess at T=" + std::to_string(report.horizons[h]));
    }
    c.check(report.fit.slope <= -0.35, "fitted slope " + fmt_double(report.fit.slope));
    c.check(report.reference_residual <= 1e-6, "reference residual");
}

void criterion_6_and_7_replications(const fs::path& dir) {
    ToyCorpusConfig toy;
    toy.n_docs = 500;
    toy.seed = 97;
    auto dataset = (dir / "toy500.jsonl").string();
    save_jsonl(make_toy_corpus(toy), dataset);

    int gap_positive = 0, go_no_larger = 0;
    const int n_seeds = 5;
    for (int s = 1; s <= n_seeds; ++s) {
        TrainConfig base = desk_config(dataset, (dir / ("base_seed" + std::to_string(s))).string(),
                                       static_cast<uint64_t>(s));
        train(base);

        TrainConfig go = desk_config(dataset, (dir / ("go_seed" + std::to_string(s))).string(),
                                     static_cast<uint64_t>(s));
        go.mode = ObjectiveMode::sft_go;
        go.lambda = {0.9, 0.9, true};
        train(go);

        GapReport base_report = analyze_run(base.resolved_output_dir());
        if (!base_report.identities_ok) std::cerr << "identity check failed in baseline seed " << s << "\n";
        if (base_report.final_quarter_mean_gap > 0.0) ++gap_positive;

        GapComparison cmp = compare_runs(go.resolved_output_dir(), base.resolved_output_dir());
        if (cmp.run_gap_no_larger) ++go_no_larger;
        std::cerr << "seed " << s << ": baseline gap " << base_report.final_quarter_mean_gap
                  << ", group-optimized gap " << cmp.run.final_quarter_mean_gap << "\n";
    }
    {
        Criterion c(6, "baseline keeps important-token loss above unimportant (4/5 seeds)");
        c.check(gap_positive >= 4, "positive final-quarter gap in " + std::to_string(gap_positive) + "/5 seeds");
    }
    {
        Criterion c(7, "group optimization narrows the loss gap vs baseline (4/5 seeds)");
        c.check(go_no_larger >= 4, "gap no larger in " + std::to_string(go_no_larger) + "/5 seeds");
    }
}

void criterion_8_determinism(const fs::path& dir) {
    Criterion c(8, "repeated runs with one seed produce byte-identical CSVs");

    ToyCorpusConfig toy;
    toy.n_docs = 64;
    toy.seed = 3;
    auto dataset = (dir / "toy64.jsonl").string();
    save_jsonl(make_toy_corpus(toy), dataset);

    TrainConfig cfg = desk_config(dataset, (dir / "det_a").string(), 17);
    cfg.epochs = 2;
    train(cfg);
    cfg.output_dir = (dir / "det_b").string();
    train(cfg);
    c.check(file_bytes(dir / "det_a" / "metrics.csv") == file_bytes(dir / "det_b" / "metrics.csv"),
            "train metrics.csv bytes");

    auto run_theory = [&](const std::string& out) {
        return cli::cli_main({"verify-theory", "--instances", "2", "--seed", "7", "--horizons",
                              "50,160,500,1600,5000", "--repeats", "3", "--out", out});
    };
    int rc1 = run_theory((dir / "thy_a").string());
    int rc2 = run_theory((dir / "thy_b").string());
    c.check(rc1 == 0 && rc2 == 0, "verify-theory exit codes");
    c.check(file_bytes(dir / "thy_a" / "prop1.csv") == file_bytes(dir / "thy_b" / "prop1.csv"),
            "prop1.csv bytes");
    c.check(file_bytes(dir / "thy_a" / "convergence.csv") == file_bytes(dir / "thy_b" / "convergence.csv"),
            "convergence.csv bytes");
}

} // namespace

int main() {
    auto dir = work_dir();
    fs::remove_all(dir);
    fs::create_directories(dir);

    criterion_1_grouping(dir);
    criterion_2_objective();
    criterion_3_gradcheck();
    {
        auto t0 = std::chrono::steady_clock::now();
        theory::TheorySuiteResult suite = run_default_theory_suite(dir);
        auto secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::cerr << "theory suite completed in " << secs << "s\n";
        criterion_4_prop1(suite);
        criterion_5_convergence(suite);
    }
    criterion_6_and_7_replications(dir);
    criterion_8_determinism(dir);

    if (failures == 0)
        std::cout << "all acceptance criteria passed" << std::endl;
    else
        std::cout << failures << " acceptance criteria FAILED" << std::endl;
    return failures == 0 ? 0 : 1;
}
