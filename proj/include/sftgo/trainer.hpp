#pragma once

#include <optional>
#include <string>

#include <json.hpp>

#include "sftgo/engine/tiny_lm.hpp"
#include "sftgo/objective.hpp"

namespace sftgo {

enum class ObjectiveMode { baseline_ce, sft_go, rho1_selected };

ObjectiveMode mode_from_string(const std::string& s);
std::string mode_to_string(ObjectiveMode m);

struct OptimizerConfig {
    double lr = 3e-3;
    double beta1 = 0.9;
    double beta2 = 0.99;
    double eps = 1e-8;
    double weight_decay = 0.0;
    std::string lr_schedule = "constant"; // constant | cosine
};

struct LambdaConfig {
    double max = 0.9;
    double min = 0.01;
    bool is_static = false; // static lambda == max for every step
};

struct GroupingSection {
    GroupingConfig cfg;
    std::optional<std::string> scores_path;          // external strategy
    std::optional<std::string> reference_checkpoint; // excess_loss strategy
};

struct ModelSection {
    int d_model = 64;
    int n_layers = 2;
    int n_heads = 4;
    int max_seq_len = 128;
};

struct TrainConfig {
    std::string dataset;
    std::string output_dir;
    ObjectiveMode mode = ObjectiveMode::baseline_ce;
    uint64_t seed = 1;
    int epochs = 1;
    int batch_size = 16;
    std::string precision = "f32"; // f32 | f64
    int vocab_max_size = 2048;
    bool loss_on_prompt = false;
    bool record_wall_time = true;
    std::optional<GroupingSection> grouping;
    LambdaConfig lambda;
    ModelSection model;
    OptimizerConfig optimizer;

    void validate() const;
    nlohmann::ordered_json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
    static TrainConfig load(const std::string& path);

    // resolves relative output_dir against $SFTGO_RUN_ROOT when set
    std::string resolved_output_dir() const;
};

struct TrainSummary {
    std::string run_dir;
    long steps = 0;
    double final_ce_all = 0.0;
    std::optional<double> final_ce_important;
    std::optional<double> final_ce_unimportant;
    double final_combined = 0.0;
    long best_step = 0;
    double best_combined = 0.0;
    long tie_count = 0;
    long single_group_batches = 0;
    long skipped_records = 0;
    long truncated_records = 0;
    int vocab_size = 0;
    long param_count = 0;
};

// End-to-end run: preprocess, group, train, write metrics.csv, checkpoints,
// config.resolved.json, summary.json and (when grouping is active)
// assignment.jsonl into the run directory.
TrainSummary train(const TrainConfig& config);

struct GapReport {
    std::vector<long> steps;
    std::vector<double> gaps; // ce_important - ce_unimportant per step
    double final_quarter_mean_gap = 0.0;
    long final_quarter_rows = 0;
    long rows_with_both_groups = 0;
    bool identities_ok = true;
    std::string identities_note;
};

// Reads a run's metrics.csv, re-validates the per-row loss identities and
// reports the important/unimportant gap trajectory.
GapReport analyze_run(const std::string& run_dir);

struct GapComparison {
    GapReport run;
    GapReport baseline;
    double run_abs_gap = 0.0;
    double baseline_abs_gap = 0.0;
    bool run_gap_no_larger = false; // |run gap| <= |baseline gap| (final quarter)
};

GapComparison compare_runs(const std::string& run_dir, const std::string& baseline_dir);

} // namespace sftgo
