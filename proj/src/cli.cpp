#include "sftgo/cli.hpp"

#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "sftgo/engine/checkpoint.hpp"
#include "sftgo/theory/suite.hpp"
#include "sftgo/trainer.hpp"

namespace sftgo::cli {

namespace {

std::vector<double> parse_double_list(const std::string& csv) {
    std::vector<double> out;
    std::string cur;
    for (char c : csv) {
        if (c == ',') {
            out.push_back(std::stod(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) out.push_back(std::stod(cur));
    return out;
}

std::vector<long> parse_long_list(const std::string& csv) {
    std::vector<long> out;
    for (double v : parse_double_list(csv)) out.push_back(static_cast<long>(v));
    return out;
}

// "a.b.c=value" applied onto a JSON object; the value is parsed as JSON when
// possible and treated as a plain string otherwise.
void apply_override(nlohmann::json& root, const std::string& spec) {
    auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError("--set expects key=value, got \"" + spec + "\"");
    std::string path = spec.substr(0, eq);
    std::string raw = spec.substr(eq + 1);

    nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;

    nlohmann::json* node = &root;
    size_t start = 0;
    for (;;) {
        size_t dot = path.find('.', start);
        std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (key.empty()) throw ConfigError("--set: empty key segment in \"" + spec + "\"");
        if (dot == std::string::npos) {
            (*node)[key] = value;
            break;
        }
        if (!node->contains(key) || !(*node)[key].is_object()) (*node)[key] = nlohmann::json::object();
        node = &(*node)[key];
        start = dot + 1;
    }
}

void write_scores_jsonl(const ImportanceScores& scores, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write score file: " + path);
    for (const auto& doc_scores : scores.per_doc) {
        nlohmann::ordered_json obj;
        obj["scores"] = doc_scores;
        out << obj.dump() << '\n';
    }
}

ImportanceScores scores_via_checkpoints(const std::vector<Document>& docs,
                                        const std::string& current_path,
                                        const std::string& reference_path, int batch_size) {
    auto current = engine::load_checkpoint<double>(current_path);
    auto reference = engine::load_checkpoint<double>(reference_path);
    if (!current.config.same_architecture(reference.config))
        throw ConfigError("current and reference checkpoints disagree in architecture");

    std::vector<std::vector<double>> cur_ce, ref_ce;
    for (const Batch& batch : chunk_batches(docs, batch_size)) {
        for (auto& v : engine::per_token_ce_values(current, batch)) cur_ce.push_back(std::move(v));
        for (auto& v : engine::per_token_ce_values(reference, batch)) ref_ce.push_back(std::move(v));
    }
    return excess_loss_scores(cur_ce, ref_ce);
}

int run_tokenize(const std::string& data, const std::string& vocab_out, int max_size,
                 bool loss_on_prompt, const std::string& dump_path) {
    auto records = load_jsonl(data);
    Vocab vocab = build_vocab(records, max_size);
    vocab.save(vocab_out);

    TokenizeStats stats;
    auto docs = tokenize_corpus(records, vocab, loss_on_prompt, 0, &stats);
    if (!dump_path.empty()) {
        std::ofstream out(dump_path, std::ios::binary);
        if (!out) throw DataError("cannot write token dump: " + dump_path);
        for (const auto& doc : docs) {
            nlohmann::ordered_json obj;
            obj["ids"] = doc.ids;
            std::vector<int> mask;
            for (bool m : doc.response_mask) mask.push_back(m ? 1 : 0);
            obj["mask"] = mask;
            out << obj.dump() << '\n';
        }
    }
    std::cout << "vocab_size=" << vocab.size() << " documents=" << docs.size()
              << " skipped=" << stats.skipped_records << "\n";
    return 0;
}

int run_tfidf(const std::string& data, const std::string& out, int max_size, bool loss_on_prompt) {
    auto records = load_jsonl(data);
    Vocab vocab = build_vocab(records, max_size);
    auto docs = tokenize_corpus(records, vocab, loss_on_prompt, 0, nullptr);
    write_scores_jsonl(tfidf_scores(docs, vocab), out);
    std::cout << "documents=" << docs.size() << " scores_file=" << out << "\n";
    return 0;
}

int run_group(const std::string& data, const std::string& strategy, double percentile,
              const std::string& scores_path, const std::string& current_ckpt,
              const std::string& reference_ckpt, const std::string& out, int max_size,
              bool loss_on_prompt) {
    auto records = load_jsonl(data);
    Vocab vocab = build_vocab(records, max_size);
    auto docs = tokenize_corpus(records, vocab, loss_on_prompt, 0, nullptr);

    GroupingConfig cfg;
    cfg.strategy = strategy_from_string(strategy);
    cfg.percentile = percentile;

    ImportanceScores scores;
    switch (cfg.strategy) {
        case Strategy::tfidf: scores = tfidf_scores(docs, vocab); break;
        case Strategy::external:
            if (scores_path.empty()) throw ConfigError("group: --scores is required for external strategy");
            scores = external_scores_load(scores_path, docs);
            break;
        case Strategy::excess_loss:
            if (current_ckpt.empty() || reference_ckpt.empty())
                throw ConfigError("group: --current and --reference checkpoints are required "
                                  "for excess_loss strategy");
            scores = scores_via_checkpoints(docs, current_ckpt, reference_ckpt, 16);
            break;
    }
    GroupAssignment assignment = assign_top_fraction(scores, docs, cfg);
    save_assignment_jsonl(assignment, out);
    std::cout << "documents=" << docs.size() << " assignment_file=" << out << "\n";
    return 0;
}

int run_train_cmd(const std::string& config_path, const std::vector<std::string>& overrides) {
    std::ifstream in(config_path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file: " + config_path);
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ConfigError("malformed JSON in config file: " + config_path);
    for (const auto& spec : overrides) apply_override(j, spec);

    TrainConfig cfg = TrainConfig::from_json(j);
    TrainSummary summary = train(cfg);

    nlohmann::ordered_json report;
    report["run_dir"] = summary.run_dir;
    report["steps"] = summary.steps;
    report["final_combined"] = summary.final_combined;
    report["final_ce_all"] = summary.final_ce_all;
    report["best_step"] = summary.best_step;
    std::cout << report.dump(2) << "\n";
    return 0;
}

int run_analyze(const std::string& run_dir, const std::string& baseline_dir,
                const std::string& gap_csv) {
    nlohmann::ordered_json report;
    GapReport run = analyze_run(run_dir);
    report["run_dir"] = run_dir;
    report["rows"] = run.steps.size();
    report["rows_with_both_groups"] = run.rows_with_both_groups;
    report["final_quarter_mean_gap"] = run.final_quarter_mean_gap;
    report["final_quarter_rows"] = run.final_quarter_rows;
    report["identities_ok"] = run.identities_ok;
    if (!run.identities_ok) report["identities_note"] = run.identities_note;

    if (!baseline_dir.empty()) {
        GapComparison cmp = compare_runs(run_dir, baseline_dir);
        report["baseline_dir"] = baseline_dir;
        report["baseline_final_quarter_mean_gap"] = cmp.baseline.final_quarter_mean_gap;
        report["run_abs_gap"] = cmp.run_abs_gap;
        report["baseline_abs_gap"] = cmp.baseline_abs_gap;
        report["run_gap_no_larger"] = cmp.run_gap_no_larger;
    }
    if (!gap_csv.empty()) {
        std::ofstream out(gap_csv, std::ios::binary);
        if (!out) throw DataError("cannot write gap csv: " + gap_csv);
        out << "step,gap\n";
        for (size_t i = 0; i < run.steps.size(); ++i)
            out << run.steps[i] << ',' << fmt_double(run.gaps[i]) << '\n';
    }
    std::cout << report.dump(2) << "\n";
    return run.identities_ok ? 0 : 2;
}

int run_verify_theory(const theory::TheorySuiteOptions& opts) {
    theory::TheorySuiteResult result = theory::run_theory_suite(opts);
    nlohmann::ordered_json report;
    report["pass"] = result.pass;
    report["prop1_cells"] = result.prop1.size();
    report["prop1_failures"] = result.prop1_failures;
    report["prop1_inconclusive"] = result.prop1_inconclusive;
    report["slope"] = result.convergence.fit.slope;
    report["bound_violations"] = result.convergence.bound_violations;
    if (!opts.out_dir.empty()) report["out_dir"] = opts.out_dir;
    std::cout << report.dump(2) << "\n";
    return result.pass ? 0 : 2;
}

} // namespace

int cli_main(int argc, const char* const* argv) {
    CLI::App app{"token-group optimized fine-tuning toolkit"};
    app.require_subcommand(1);

    // tokenize
    auto* tok = app.add_subcommand("tokenize", "build a vocabulary and tokenize a JSONL dataset");
    std::string tok_data, tok_vocab_out, tok_dump;
    int tok_max_size = 2048;
    bool tok_loss_on_prompt = false;
    tok->add_option("--data", tok_data, "JSONL dataset with prompt/response fields")->required();
    tok->add_option("--vocab-out", tok_vocab_out, "output vocabulary file")->required();
    tok->add_option("--max-size", tok_max_size, "maximum vocabulary size");
    tok->add_option("--dump", tok_dump, "optional tokenized dump (JSONL)");
    tok->add_flag("--loss-on-prompt", tok_loss_on_prompt, "include prompt tokens in the loss");

    // tfidf
    auto* tfi = app.add_subcommand("tfidf", "compute per-token importance scores");
    std::string tfi_data, tfi_out;
    int tfi_max_size = 2048;
    bool tfi_loss_on_prompt = false;
    tfi->add_option("--data", tfi_data, "JSONL dataset")->required();
    tfi->add_option("--out", tfi_out, "output score file (JSONL)")->required();
    tfi->add_option("--max-size", tfi_max_size, "maximum vocabulary size");
    tfi->add_flag("--loss-on-prompt", tfi_loss_on_prompt, "score prompt tokens too");

    // group
    auto* grp = app.add_subcommand("group", "partition tokens into importance groups");
    std::string grp_data, grp_strategy = "tfidf", grp_scores, grp_current, grp_reference, grp_out;
    double grp_percentile = 70.0;
    int grp_max_size = 2048;
    bool grp_loss_on_prompt = false;
    grp->add_option("--data", grp_data, "JSONL dataset")->required();
    grp->add_option("--strategy", grp_strategy, "tfidf | external | excess_loss");
    grp->add_option("--percentile", grp_percentile, "importance threshold percentile");
    grp->add_option("--scores", grp_scores, "score file for external strategy");
    grp->add_option("--current", grp_current, "current checkpoint for excess_loss");
    grp->add_option("--reference", grp_reference, "reference checkpoint for excess_loss");
    grp->add_option("--out", grp_out, "output assignment file (JSONL)")->required();
    grp->add_option("--max-size", grp_max_size, "maximum vocabulary size");
    grp->add_flag("--loss-on-prompt", grp_loss_on_prompt, "group prompt tokens too");

    // train
    auto* trn = app.add_subcommand("train", "run a training job from a JSON config");
    std::string trn_config;
    std::vector<std::string> trn_sets;
    trn->add_option("--config", trn_config, "JSON config file")->required();
    trn->add_option("--set", trn_sets, "override config values, key.path=value");

    // analyze
    auto* ana = app.add_subcommand("analyze", "report the per-group loss gap of a run");
    std::string ana_run, ana_baseline, ana_gap_csv;
    ana->add_option("--run", ana_run, "run directory")->required();
    ana->add_option("--baseline", ana_baseline, "baseline run directory to compare against");
    ana->add_option("--gap-csv", ana_gap_csv, "write per-step gaps to this CSV");

    // verify-theory
    auto* thy = app.add_subcommand("verify-theory", "verify both propositions empirically");
    theory::TheorySuiteOptions thy_opts;
    std::string thy_lambdas, thy_horizons;
    thy->add_option("--instances", thy_opts.n_instances, "number of random instances");
    thy->add_option("--seed", thy_opts.seed, "master seed");
    thy->add_option("--tolerance", thy_opts.tolerance, "proposition-1 tolerance");
    thy->add_option("--lambdas", thy_lambdas, "comma-separated lambda grid");
    thy->add_option("--horizons", thy_horizons, "comma-separated step horizons");
    thy->add_option("--repeats", thy_opts.repeats, "repeats per horizon");
    thy->add_option("--batch", thy_opts.batch_size, "mini-batch size for the stochastic runs");
    thy->add_option("--budget", thy_opts.solver_budget, "solver iteration budget");
    thy->add_option("--out", thy_opts.out_dir, "directory for CSV/JSON reports");

    try {
        app.parse(argc, argv);

        if (*tok) return run_tokenize(tok_data, tok_vocab_out, tok_max_size, tok_loss_on_prompt, tok_dump);
        if (*tfi) return run_tfidf(tfi_data, tfi_out, tfi_max_size, tfi_loss_on_prompt);
        if (*grp)
            return run_group(grp_data, grp_strategy, grp_percentile, grp_scores, grp_current,
                             grp_reference, grp_out, grp_max_size, grp_loss_on_prompt);
        if (*trn) return run_train_cmd(trn_config, trn_sets);
        if (*ana) return run_analyze(ana_run, ana_baseline, ana_gap_csv);
        if (*thy) {
            if (!thy_lambdas.empty()) thy_opts.lambdas = parse_double_list(thy_lambdas);
            if (!thy_horizons.empty()) thy_opts.horizons = parse_long_list(thy_horizons);
            return run_verify_theory(thy_opts);
        }
        std::cerr << app.help() << "\n";
        return 1;
    } catch (const CLI::CallForHelp& e) {
        std::cout << app.help() << "\n";
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n\n" << app.help() << "\n";
        return 1;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "runtime error: " << e.what() << "\n";
        return 2;
    }
}

int cli_main(const std::vector<std::string>& args) {
    std::vector<const char*> argv;
    argv.push_back("sftgo");
    for (const auto& a : args) argv.push_back(a.c_str());
    return cli_main(static_cast<int>(argv.size()), argv.data());
}

} // namespace sftgo::cli
