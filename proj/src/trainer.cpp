#include "sftgo/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <unordered_map>

#include "sftgo/engine/checkpoint.hpp"
#include "sftgo/engine/optim.hpp"

namespace fs = std::filesystem;

namespace sftgo {

ObjectiveMode mode_from_string(const std::string& s) {
    if (s == "baseline_ce") return ObjectiveMode::baseline_ce;
    if (s == "sft_go") return ObjectiveMode::sft_go;
    if (s == "rho1_selected") return ObjectiveMode::rho1_selected;
    throw ConfigError("unknown objective mode: " + s);
}

std::string mode_to_string(ObjectiveMode m) {
    switch (m) {
        case ObjectiveMode::baseline_ce: return "baseline_ce";
        case ObjectiveMode::sft_go: return "sft_go";
        case ObjectiveMode::rho1_selected: return "rho1_selected";
    }
    throw ConfigError("invalid mode value");
}

void TrainConfig::validate() const {
    if (dataset.empty()) throw ConfigError("config: dataset path is required");
    if (output_dir.empty()) throw ConfigError("config: output_dir is required");
    if (epochs < 1) throw ConfigError("config: epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("config: batch_size must be >= 1");
    if (precision != "f32" && precision != "f64") throw ConfigError("config: precision must be f32 or f64");
    if (vocab_max_size < 5) throw ConfigError("config: vocab_max_size must be >= 5");
    if (optimizer.lr_schedule != "constant" && optimizer.lr_schedule != "cosine")
        throw ConfigError("config: lr_schedule must be constant or cosine");
    engine::AdamConfig adam{optimizer.lr, optimizer.beta1, optimizer.beta2, optimizer.eps,
                            optimizer.weight_decay};
    adam.validate();

    if (mode != ObjectiveMode::baseline_ce && !grouping)
        throw ConfigError("config: mode " + mode_to_string(mode) + " requires a grouping section");
    if (grouping) {
        grouping->cfg.validate();
        if (grouping->cfg.strategy == Strategy::external && !grouping->scores_path)
            throw ConfigError("config: external grouping requires scores_path");
        if (grouping->cfg.strategy == Strategy::excess_loss && !grouping->reference_checkpoint)
            throw ConfigError("config: excess_loss grouping requires reference_checkpoint");
    }
    if (mode == ObjectiveMode::rho1_selected &&
        (!grouping || grouping->cfg.strategy != Strategy::excess_loss))
        throw ConfigError("config: rho1_selected requires grouping strategy excess_loss "
                          "with a reference checkpoint");
    if (mode == ObjectiveMode::sft_go) {
        LambdaSchedule sched{lambda.max, lambda.is_static ? lambda.max : lambda.min, 1};
        sched.validate();
    }
}

nlohmann::ordered_json TrainConfig::to_json() const {
    nlohmann::ordered_json j;
    j["dataset"] = dataset;
    j["output_dir"] = output_dir;
    j["mode"] = mode_to_string(mode);
    j["seed"] = seed;
    j["epochs"] = epochs;
    j["batch_size"] = batch_size;
    j["precision"] = precision;
    j["vocab_max_size"] = vocab_max_size;
    j["loss_on_prompt"] = loss_on_prompt;
    j["record_wall_time"] = record_wall_time;
    if (grouping) {
        nlohmann::ordered_json g;
        g["strategy"] = strategy_to_string(grouping->cfg.strategy);
        g["percentile"] = grouping->cfg.percentile;
        if (grouping->cfg.freeze_after_step)
            g["freeze_after_step"] = *grouping->cfg.freeze_after_step;
        else
            g["freeze_after_step"] = nullptr;
        g["scores_path"] = grouping->scores_path ? nlohmann::ordered_json(*grouping->scores_path)
                                                 : nlohmann::ordered_json(nullptr);
        g["reference_checkpoint"] = grouping->reference_checkpoint
                                        ? nlohmann::ordered_json(*grouping->reference_checkpoint)
                                        : nlohmann::ordered_json(nullptr);
        j["grouping"] = g;
    } else {
        j["grouping"] = nullptr;
    }
    j["lambda"] = {{"max", lambda.max}, {"min", lambda.min}, {"static", lambda.is_static}};
    j["model"] = {{"d_model", model.d_model},
                  {"n_layers", model.n_layers},
                  {"n_heads", model.n_heads},
                  {"max_seq_len", model.max_seq_len}};
    j["optimizer"] = {{"lr", optimizer.lr},           {"beta1", optimizer.beta1},
                      {"beta2", optimizer.beta2},     {"eps", optimizer.eps},
                      {"weight_decay", optimizer.weight_decay},
                      {"lr_schedule", optimizer.lr_schedule}};
    return j;
}

namespace {

template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}

const char* const kKnownTopLevel[] = {"dataset",   "output_dir",     "mode",       "seed",
                                      "epochs",    "batch_size",     "precision",  "vocab_max_size",
                                      "loss_on_prompt", "record_wall_time", "grouping", "lambda",
                                      "model",     "optimizer"};

} // namespace

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("config: expected a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const char* k : kKnownTopLevel) known = known || it.key() == k;
        if (!known) throw ConfigError("config: unknown key \"" + it.key() + "\"");
    }

    TrainConfig cfg;
    read_field(j, "dataset", cfg.dataset);
    read_field(j, "output_dir", cfg.output_dir);
    if (j.contains("mode")) cfg.mode = mode_from_string(j.at("mode").get<std::string>());
    read_field(j, "seed", cfg.seed);
    read_field(j, "epochs", cfg.epochs);
    read_field(j, "batch_size", cfg.batch_size);
    read_field(j, "precision", cfg.precision);
    read_field(j, "vocab_max_size", cfg.vocab_max_size);
    read_field(j, "loss_on_prompt", cfg.loss_on_prompt);
    read_field(j, "record_wall_time", cfg.record_wall_time);

    if (j.contains("grouping") && !j.at("grouping").is_null()) {
        const auto& g = j.at("grouping");
        GroupingSection sec;
        if (g.contains("strategy")) sec.cfg.strategy = strategy_from_string(g.at("strategy").get<std::string>());
        read_field(g, "percentile", sec.cfg.percentile);
        if (g.contains("freeze_after_step") && !g.at("freeze_after_step").is_null())
            sec.cfg.freeze_after_step = g.at("freeze_after_step").get<long>();
        if (g.contains("scores_path") && !g.at("scores_path").is_null())
            sec.scores_path = g.at("scores_path").get<std::string>();
        if (g.contains("reference_checkpoint") && !g.at("reference_checkpoint").is_null())
            sec.reference_checkpoint = g.at("reference_checkpoint").get<std::string>();
        cfg.grouping = std::move(sec);
    }
    if (j.contains("lambda")) {
        const auto& l = j.at("lambda");
        read_field(l, "max", cfg.lambda.max);
        read_field(l, "min", cfg.lambda.min);
        read_field(l, "static", cfg.lambda.is_static);
    }
    if (j.contains("model")) {
        const auto& m = j.at("model");
        read_field(m, "d_model", cfg.model.d_model);
        read_field(m, "n_layers", cfg.model.n_layers);
        read_field(m, "n_heads", cfg.model.n_heads);
        read_field(m, "max_seq_len", cfg.model.max_seq_len);
    }
    if (j.contains("optimizer")) {
        const auto& o = j.at("optimizer");
        read_field(o, "lr", cfg.optimizer.lr);
        read_field(o, "beta1", cfg.optimizer.beta1);
        read_field(o, "beta2", cfg.optimizer.beta2);
        read_field(o, "eps", cfg.optimizer.eps);
        read_field(o, "weight_decay", cfg.optimizer.weight_decay);
        read_field(o, "lr_schedule", cfg.optimizer.lr_schedule);
    }
    return cfg;
}

TrainConfig TrainConfig::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file: " + path);
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ConfigError("malformed JSON in config file: " + path);
    return from_json(j);
}

std::string TrainConfig::resolved_output_dir() const {
    fs::path p(output_dir);
    if (p.is_relative()) {
        if (const char* root = std::getenv("SFTGO_RUN_ROOT")) p = fs::path(root) / p;
    }
    return p.string();
}

namespace {

struct RunDirLock {
    fs::path lock_path;
    explicit RunDirLock(const fs::path& dir) : lock_path(dir / "lock") {
        if (fs::exists(lock_path))
            throw ConfigError("run directory is locked by another run: " + dir.string());
        std::ofstream out(lock_path);
        out << "locked\n";
    }
    ~RunDirLock() {
        std::error_code ec;
        fs::remove(lock_path, ec);
    }
};

constexpr const char* kMetricsHeader =
    "step,epoch,lambda,ce_all,ce_important,ce_unimportant,worst,combined,grad_norm,wall_ms";

std::string metrics_row(long step, int epoch, const GroupLossBreakdown& b, double grad_norm,
                        double wall_ms) {
    std::string row = std::to_string(step);
    row += ',' + std::to_string(epoch);
    row += ',' + fmt_double(b.lambda);
    row += ',' + fmt_double(b.ce_all);
    row += ',';
    if (b.ce_important) row += fmt_double(*b.ce_important);
    row += ',';
    if (b.ce_unimportant) row += fmt_double(*b.ce_unimportant);
    row += ',' + fmt_double(b.worst);
    row += ',' + fmt_double(b.combined);
    row += ',' + fmt_double(grad_norm);
    row += ',' + fmt_double(wall_ms);
    return row;
}

// Labels for a batch document, restricted to its loss-bearing positions in
// ascending order. `full_labels` covers at least every loss position.
std::vector<GroupLabel> loss_labels_for(const Document& padded_doc,
                                        const std::vector<GroupLabel>& full_labels) {
    std::vector<GroupLabel> out;
    for (int p : padded_doc.loss_positions()) {
        if (p >= static_cast<int>(full_labels.size()))
            throw StateError("grouping labels shorter than document loss span");
        out.push_back(full_labels[static_cast<size_t>(p)]);
    }
    return out;
}

template <typename Scalar>
struct TrainContext {
    const TrainConfig& cfg;
    std::vector<Document> docs;
    Vocab vocab;
    engine::ParamSet<Scalar> params;
    std::optional<engine::ParamSet<Scalar>> reference;
    // static per-corpus-document labels (tfidf / external)
    std::vector<std::vector<GroupLabel>> static_labels;
    // excess-loss cache, filled as documents are scored
    std::unordered_map<int, std::vector<GroupLabel>> dynamic_labels;
    long freeze_after_step = 0;
};

template <typename Scalar>
TrainSummary run_train(const TrainConfig& cfg) {
    cfg.validate();

    const fs::path run_dir(cfg.resolved_output_dir());
    fs::create_directories(run_dir);
    fs::create_directories(run_dir / "checkpoints");
    RunDirLock lock(run_dir);

    TrainSummary summary;
    summary.run_dir = run_dir.string();

    // ---- data -------------------------------------------------------------
    std::vector<RawRecord> records = load_jsonl(cfg.dataset);
    Vocab vocab = build_vocab(records, cfg.vocab_max_size);
    TokenizeStats tok_stats;
    std::vector<Document> docs =
        tokenize_corpus(records, vocab, cfg.loss_on_prompt, cfg.model.max_seq_len, &tok_stats);
    if (docs.empty()) throw DataError("no usable documents in " + cfg.dataset);
    summary.skipped_records = tok_stats.skipped_records;
    summary.truncated_records = tok_stats.truncated_records;
    summary.vocab_size = vocab.size();

    // ---- model ------------------------------------------------------------
    engine::TinyLMConfig lm_cfg;
    lm_cfg.vocab_size = vocab.size();
    lm_cfg.d_model = cfg.model.d_model;
    lm_cfg.n_layers = cfg.model.n_layers;
    lm_cfg.n_heads = cfg.model.n_heads;
    lm_cfg.max_seq_len = cfg.model.max_seq_len;
    lm_cfg.seed = derive_seed(cfg.seed, 0xA11);
    TrainContext<Scalar> ctx{.cfg = cfg,
                             .docs = std::move(docs),
                             .vocab = std::move(vocab),
                             .params = engine::init_tiny_lm<Scalar>(lm_cfg),
                             .reference = std::nullopt,
                             .static_labels = {},
                             .dynamic_labels = {},
                             .freeze_after_step = 0};
    summary.param_count = ctx.params.param_count();

    const long batches_per_epoch =
        (static_cast<long>(ctx.docs.size()) + cfg.batch_size - 1) / cfg.batch_size;
    const long total_steps = batches_per_epoch * cfg.epochs;

    // ---- grouping preparation ----------------------------------------------
    if (cfg.grouping) {
        const GroupingSection& sec = *cfg.grouping;
        if (sec.cfg.strategy == Strategy::tfidf) {
            GroupAssignment a =
                assign_top_fraction(tfidf_scores(ctx.docs, ctx.vocab), ctx.docs, sec.cfg);
            ctx.static_labels = std::move(a.per_doc);
        } else if (sec.cfg.strategy == Strategy::external) {
            GroupAssignment a = assign_top_fraction(
                external_scores_load(*sec.scores_path, ctx.docs), ctx.docs, sec.cfg);
            ctx.static_labels = std::move(a.per_doc);
        } else {
            ctx.reference = engine::load_checkpoint<Scalar>(*sec.reference_checkpoint);
            if (!ctx.reference->config.same_architecture(lm_cfg))
                throw ConfigError("reference checkpoint architecture does not match the training model");
            ctx.freeze_after_step =
                sec.cfg.freeze_after_step ? *sec.cfg.freeze_after_step : total_steps / 2;
        }
    }

    LambdaSchedule sched{cfg.lambda.max, cfg.lambda.is_static ? cfg.lambda.max : cfg.lambda.min,
                         std::max<long>(1, total_steps)};

    // ---- training loop -----------------------------------------------------
    std::ofstream metrics(run_dir / "metrics.csv", std::ios::binary);
    if (!metrics) throw DataError("cannot write metrics.csv in " + run_dir.string());
    metrics << kMetricsHeader << '\n';

    engine::AdamConfig adam_cfg{cfg.optimizer.lr, cfg.optimizer.beta1, cfg.optimizer.beta2,
                                cfg.optimizer.eps, cfg.optimizer.weight_decay};
    engine::AdamState<Scalar> adam_state;
    engine::ParamSet<Scalar> best_params = ctx.params;
    // snapshot from before the most recent optimizer update; a non-finite
    // loss means the current parameters are already bad, so this is the
    // last state known to evaluate cleanly
    engine::ParamSet<Scalar> last_good_params = ctx.params;
    double best_combined = std::numeric_limits<double>::infinity();
    long best_step = 0;
    GroupLossBreakdown last_breakdown;

    long global_step = 0; // 0-based; the schedule is evaluated here
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<Batch> batches =
            make_batches(ctx.docs, cfg.batch_size, derive_seed(cfg.seed, 1000 + static_cast<uint64_t>(epoch)));
        for (const Batch& batch : batches) {
            auto step_start = std::chrono::steady_clock::now();

            engine::Tape<Scalar> tape;
            engine::BoundParams<Scalar> bound = engine::bind_params(tape, ctx.params, true);
            engine::PerTokenCE<Scalar> ptc = engine::forward_per_token_ce(tape, bound, batch);
            std::vector<std::vector<double>> ce_vals = ptc.values();

            // labels per batch document, loss-order
            std::vector<std::vector<GroupLabel>> batch_labels;
            if (cfg.grouping) {
                const GroupingSection& sec = *cfg.grouping;
                if (sec.cfg.strategy != Strategy::excess_loss) {
                    for (size_t i = 0; i < batch.documents.size(); ++i)
                        batch_labels.push_back(loss_labels_for(
                            batch.documents[i],
                            ctx.static_labels[static_cast<size_t>(batch.doc_indices[i])]));
                } else {
                    bool recompute_all = global_step < ctx.freeze_after_step;
                    bool any_missing = false;
                    for (int di : batch.doc_indices) any_missing = any_missing || !ctx.dynamic_labels.count(di);
                    if (recompute_all || any_missing) {
                        std::vector<std::vector<double>> ref_vals =
                            engine::per_token_ce_values(*ctx.reference, batch);
                        ImportanceScores scores = excess_loss_scores(ce_vals, ref_vals);
                        GroupAssignment a = assign_top_fraction(scores, batch.documents, sec.cfg);
                        for (size_t i = 0; i < batch.documents.size(); ++i) {
                            int di = batch.doc_indices[i];
                            if (recompute_all || !ctx.dynamic_labels.count(di))
                                ctx.dynamic_labels[di] = a.per_doc[i];
                        }
                    }
                    for (size_t i = 0; i < batch.documents.size(); ++i)
                        batch_labels.push_back(loss_labels_for(
                            batch.documents[i], ctx.dynamic_labels.at(batch.doc_indices[i])));
                }
            }

            // row selections on the tape, parallel to ce_vals
            std::vector<std::vector<int>> all_rows = ptc.loss_rows;
            std::vector<std::vector<int>> imp_rows(all_rows.size()), unimp_rows(all_rows.size());
            std::vector<double> flat_ce;
            std::vector<GroupLabel> flat_labels;
            for (size_t d = 0; d < all_rows.size(); ++d) {
                for (size_t k = 0; k < all_rows[d].size(); ++k) {
                    flat_ce.push_back(ce_vals[d][k]);
                    if (cfg.grouping) {
                        GroupLabel l = batch_labels[d][k];
                        flat_labels.push_back(l);
                        (l == GroupLabel::important ? imp_rows : unimp_rows)[d].push_back(all_rows[d][k]);
                    }
                }
            }

            const double lambda_t =
                cfg.mode == ObjectiveMode::sft_go ? compute_lambda(global_step, sched) : 0.0;

            // loss node
            engine::Value<Scalar> loss;
            bool have_imp = false, have_unimp = false;
            for (const auto& r : imp_rows) have_imp = have_imp || !r.empty();
            for (const auto& r : unimp_rows) have_unimp = have_unimp || !r.empty();
            engine::Value<Scalar> ce_all_node = engine::batch_group_mean(tape, ptc.doc_ce, all_rows);
            if (cfg.mode == ObjectiveMode::baseline_ce) {
                loss = ce_all_node;
            } else if (cfg.mode == ObjectiveMode::rho1_selected) {
                if (!have_imp) throw StateError("rho1_selected: batch without important tokens");
                loss = engine::batch_group_mean(tape, ptc.doc_ce, imp_rows);
            } else {
                engine::Value<Scalar> worst_node;
                if (have_imp && have_unimp) {
                    engine::Value<Scalar> imp_node = engine::batch_group_mean(tape, ptc.doc_ce, imp_rows);
                    engine::Value<Scalar> unimp_node =
                        engine::batch_group_mean(tape, ptc.doc_ce, unimp_rows);
                    if (imp_node.scalar() == unimp_node.scalar()) ++summary.tie_count;
                    worst_node = engine::max2(imp_node, unimp_node);
                } else {
                    worst_node = engine::batch_group_mean(tape, ptc.doc_ce, have_imp ? imp_rows : unimp_rows);
                    ++summary.single_group_batches;
                }
                loss = engine::axpby(static_cast<Scalar>(1.0 - lambda_t), ce_all_node,
                                     static_cast<Scalar>(lambda_t), worst_node);
            }

            if (!std::isfinite(static_cast<double>(loss.scalar()))) {
                engine::save_checkpoint(last_good_params,
                                        (run_dir / "checkpoints" / "last_good.ckpt").string());
                throw NumericError("non-finite loss at step " + std::to_string(global_step + 1) +
                                   "; last-good checkpoint retained");
            }

            tape.backward(loss);
            engine::copy_grads_back(bound);
            double gnorm = engine::grad_norm(ctx.params);
            if (!std::isfinite(gnorm)) {
                engine::save_checkpoint(ctx.params, (run_dir / "checkpoints" / "last_good.ckpt").string());
                throw NumericError("non-finite gradient at step " + std::to_string(global_step + 1) +
                                   "; last-good checkpoint retained");
            }

            // reported metrics are recomputed in double precision
            GroupLossBreakdown b;
            if (cfg.grouping) {
                b = make_breakdown(flat_ce, flat_labels, lambda_t);
                if (cfg.mode == ObjectiveMode::baseline_ce) b.combined = b.ce_all;
                if (cfg.mode == ObjectiveMode::rho1_selected) {
                    b.lambda = 1.0;
                    b.combined = rho1_selected_loss(flat_ce, flat_labels);
                }
            } else {
                double sum = 0.0;
                for (double v : flat_ce) sum += v;
                b.ce_all = sum / static_cast<double>(flat_ce.size());
                b.worst = b.ce_all;
                b.combined = b.ce_all;
                b.lambda = 0.0;
                b.n_unimportant = static_cast<long>(flat_ce.size());
            }
            last_breakdown = b;

            double lr_scale = 1.0;
            if (cfg.optimizer.lr_schedule == "cosine")
                lr_scale = 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(global_step) /
                                                 static_cast<double>(std::max<long>(1, total_steps))));
            last_good_params = ctx.params;
            engine::adam_step(ctx.params, adam_state, adam_cfg, lr_scale);

            double wall_ms = 0.0;
            if (cfg.record_wall_time) {
                auto dt = std::chrono::steady_clock::now() - step_start;
                wall_ms = std::chrono::duration<double, std::milli>(dt).count();
            }
            ++global_step;
            metrics << metrics_row(global_step, epoch, b, gnorm, wall_ms) << '\n';

            if (b.combined < best_combined) {
                best_combined = b.combined;
                best_step = global_step;
                best_params = ctx.params;
            }
        }
        std::cerr << "epoch " << (epoch + 1) << "/" << cfg.epochs << " done, step " << global_step
                  << ", loss " << last_breakdown.combined << "\n";
    }
    metrics.close();

    // ---- outputs ------------------------------------------------------------
    engine::save_checkpoint(ctx.params, (run_dir / "checkpoints" / "final.ckpt").string());
    engine::save_checkpoint(best_params, (run_dir / "checkpoints" / "best.ckpt").string());

    {
        std::ofstream cfg_out(run_dir / "config.resolved.json", std::ios::binary);
        TrainConfig resolved = cfg;
        resolved.dataset = fs::absolute(cfg.dataset).string();
        cfg_out << resolved.to_json().dump(2) << '\n';
    }

    if (cfg.grouping) {
        GroupAssignment dump;
        if (cfg.grouping->cfg.strategy != Strategy::excess_loss) {
            dump.per_doc = ctx.static_labels;
        } else {
            dump.per_doc.resize(ctx.docs.size());
            for (const auto& [di, labels] : ctx.dynamic_labels)
                dump.per_doc[static_cast<size_t>(di)] = labels;
        }
        save_assignment_jsonl(dump, (run_dir / "assignment.jsonl").string());
    }

    summary.steps = global_step;
    summary.final_ce_all = last_breakdown.ce_all;
    summary.final_ce_important = last_breakdown.ce_important;
    summary.final_ce_unimportant = last_breakdown.ce_unimportant;
    summary.final_combined = last_breakdown.combined;
    summary.best_step = best_step;
    summary.best_combined = best_combined;

    nlohmann::ordered_json sj;
    sj["schema_version"] = 1;
    sj["mode"] = mode_to_string(cfg.mode);
    sj["steps"] = summary.steps;
    sj["vocab_size"] = summary.vocab_size;
    sj["param_count"] = summary.param_count;
    sj["skipped_records"] = summary.skipped_records;
    sj["truncated_records"] = summary.truncated_records;
    sj["tie_count"] = summary.tie_count;
    sj["single_group_batches"] = summary.single_group_batches;
    sj["best_step"] = summary.best_step;
    sj["best_combined"] = summary.best_combined;
    nlohmann::ordered_json fin;
    fin["ce_all"] = summary.final_ce_all;
    fin["ce_important"] = summary.final_ce_important ? nlohmann::ordered_json(*summary.final_ce_important)
                                                     : nlohmann::ordered_json(nullptr);
    fin["ce_unimportant"] = summary.final_ce_unimportant
                                ? nlohmann::ordered_json(*summary.final_ce_unimportant)
                                : nlohmann::ordered_json(nullptr);
    fin["worst"] = last_breakdown.worst;
    fin["combined"] = summary.final_combined;
    fin["lambda"] = last_breakdown.lambda;
    sj["final"] = fin;
    std::ofstream sum_out(run_dir / "summary.json", std::ios::binary);
    sum_out << sj.dump(2) << '\n';

    return summary;
}

} // namespace

TrainSummary train(const TrainConfig& config) {
    if (config.precision == "f64") return run_train<double>(config);
    return run_train<float>(config);
}

// ---------------------------------------------------------------------------
// run analysis
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            cells.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    cells.push_back(cur);
    return cells;
}

} // namespace

GapReport analyze_run(const std::string& run_dir) {
    fs::path metrics_path = fs::path(run_dir) / "metrics.csv";
    std::ifstream in(metrics_path, std::ios::binary);
    if (!in) throw DataError("cannot open " + metrics_path.string());

    std::string header;
    if (!std::getline(in, header)) throw DataError("empty metrics file: " + metrics_path.string());
    if (header != kMetricsHeader)
        throw DataError("metrics.csv format error: unexpected columns in " + metrics_path.string());

    GapReport report;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto cells = split_csv_line(line);
        if (cells.size() != 10) throw DataError("metrics.csv format error: bad row in " + metrics_path.string());
        long step = 0;
        double ce_all = 0.0, worst = 0.0;
        bool has_imp = !cells[4].empty(), has_unimp = !cells[5].empty();
        double imp = 0.0, unimp = 0.0;
        try {
            step = std::stol(cells[0]);
            ce_all = std::stod(cells[3]);
            worst = std::stod(cells[6]);
            if (has_imp) imp = std::stod(cells[4]);
            if (has_unimp) unimp = std::stod(cells[5]);
        } catch (const std::exception&) {
            throw DataError("metrics.csv format error: non-numeric cell in " + metrics_path.string());
        }

        if (has_imp && has_unimp) {
            report.steps.push_back(step);
            report.gaps.push_back(imp - unimp);
            ++report.rows_with_both_groups;

            // the counts are not part of the row, so the micro-average check
            // verifies ce_all is a proper convex combination of the two means
            double scale = std::max({1.0, std::abs(imp), std::abs(unimp)});
            bool ordering = worst + 1e-12 * scale >= ce_all && ce_all + 1e-12 * scale >= std::min(imp, unimp);
            bool max_ok = std::abs(worst - std::max(imp, unimp)) <= 1e-12 * scale;
            bool convex_ok = true;
            if (std::abs(imp - unimp) > 1e-12 * scale) {
                double weight = (ce_all - unimp) / (imp - unimp);
                convex_ok = weight >= -1e-9 && weight <= 1.0 + 1e-9;
            } else {
                convex_ok = std::abs(ce_all - imp) <= 1e-9 * scale;
            }
            if (!(ordering && max_ok && convex_ok)) {
                report.identities_ok = false;
                report.identities_note = "loss identity violated at step " + std::to_string(step);
            }
        } else {
            report.steps.push_back(step);
            report.gaps.push_back(0.0);
        }
    }
    if (report.steps.empty()) throw DataError("metrics.csv has no rows: " + metrics_path.string());

    long n = static_cast<long>(report.steps.size());
    long q = std::max<long>(1, (n + 3) / 4);
    double sum = 0.0;
    for (long i = n - q; i < n; ++i) sum += report.gaps[static_cast<size_t>(i)];
    report.final_quarter_mean_gap = sum / static_cast<double>(q);
    report.final_quarter_rows = q;
    return report;
}

GapComparison compare_runs(const std::string& run_dir, const std::string& baseline_dir) {
    GapComparison cmp;
    cmp.run = analyze_run(run_dir);
    cmp.baseline = analyze_run(baseline_dir);
    cmp.run_abs_gap = std::abs(cmp.run.final_quarter_mean_gap);
    cmp.baseline_abs_gap = std::abs(cmp.baseline.final_quarter_mean_gap);
    cmp.run_gap_no_larger = cmp.run_abs_gap <= cmp.baseline_abs_gap;
    return cmp;
}

} // namespace sftgo
