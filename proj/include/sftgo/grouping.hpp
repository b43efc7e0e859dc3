#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sftgo/corpus.hpp"

namespace sftgo {

enum class Strategy { tfidf, external, excess_loss };

Strategy strategy_from_string(const std::string& s);
std::string strategy_to_string(Strategy s);

struct GroupingConfig {
    Strategy strategy = Strategy::tfidf;
    // tokens above this percentile of the per-sequence score ranking are
    // labeled important; 70 means the top 30% of loss-bearing tokens
    double percentile = 70.0;
    // excess_loss only: step after which assignments stop being recomputed
    std::optional<long> freeze_after_step;

    void validate() const;
};

/// One score per loss-bearing position, ascending position order per document.
struct ImportanceScores {
    std::vector<std::vector<double>> per_doc;
};

enum class GroupLabel : uint8_t { excluded = 0, important = 1, unimportant = 2 };

/// Per-position labels, full sequence length per document; non-loss positions
/// are excluded.
struct GroupAssignment {
    std::vector<std::vector<GroupLabel>> per_doc;

    // important-position lists for the audit dump
    std::vector<std::vector<int>> important_positions() const;
};

// Number of important tokens for a sequence with n_loss loss-bearing tokens.
long important_count(double percentile, long n_loss);

// score(t, d) = tf(t, d) * idf(t) over loss-bearing tokens, with
// tf = count(t in d) / loss_count(d) and idf = ln((1+N)/(1+df(t))) + 1.
// Every occurrence of a token in a document receives the same score.
ImportanceScores tfidf_scores(const std::vector<Document>& corpus, const Vocab& vocab);

// JSONL file, one object per document with field "scores" holding one real
// per loss-bearing token. Mismatched lengths raise DataError with the
// document index.
ImportanceScores external_scores_load(const std::string& path, const std::vector<Document>& corpus);

// score = current per-token CE minus reference per-token CE, both in the
// canonical per-document flattening. Shapes must agree.
ImportanceScores excess_loss_scores(const std::vector<std::vector<double>>& current_ce,
                                    const std::vector<std::vector<double>>& reference_ce);

// Top max(1, round((1 - percentile/100) * L)) scores per document are
// important; ties broken by higher score first, then earlier position.
GroupAssignment assign_top_fraction(const ImportanceScores& scores,
                                    const std::vector<Document>& docs,
                                    const GroupingConfig& cfg);

// Canonical flattening of an assignment: for each doc, its loss-bearing
// labels in ascending position order (parallel to flattened per-token CE).
std::vector<GroupLabel> flatten_loss_labels(const GroupAssignment& assignment);

// Audit dump: {"doc": i, "important": [positions...]} per line.
void save_assignment_jsonl(const GroupAssignment& assignment, const std::string& path);

} // namespace sftgo
