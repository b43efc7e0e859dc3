#include "sftgo/grouping.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

namespace sftgo {

Strategy strategy_from_string(const std::string& s) {
    if (s == "tfidf") return Strategy::tfidf;
    if (s == "external") return Strategy::external;
    if (s == "excess_loss") return Strategy::excess_loss;
    throw ConfigError("unknown grouping strategy: " + s);
}

std::string strategy_to_string(Strategy s) {
    switch (s) {
        case Strategy::tfidf: return "tfidf";
        case Strategy::external: return "external";
        case Strategy::excess_loss: return "excess_loss";
    }
    throw ConfigError("invalid strategy value");
}

void GroupingConfig::validate() const {
    if (!(percentile >= 0.0 && percentile < 100.0))
        throw ConfigError("grouping percentile must be in [0, 100)");
    if (freeze_after_step && *freeze_after_step < 0)
        throw ConfigError("freeze_after_step must be >= 0");
}

std::vector<std::vector<int>> GroupAssignment::important_positions() const {
    std::vector<std::vector<int>> out(per_doc.size());
    for (size_t d = 0; d < per_doc.size(); ++d)
        for (size_t p = 0; p < per_doc[d].size(); ++p)
            if (per_doc[d][p] == GroupLabel::important) out[d].push_back(static_cast<int>(p));
    return out;
}

long important_count(double percentile, long n_loss) {
    if (n_loss <= 0) return 0;
    long n = std::llround((1.0 - percentile / 100.0) * static_cast<double>(n_loss));
    return std::max<long>(1, n);
}

ImportanceScores tfidf_scores(const std::vector<Document>& corpus, const Vocab& vocab) {
    (void)vocab;
    if (corpus.empty()) throw ConfigError("tfidf_scores: empty corpus");

    const double n_docs = static_cast<double>(corpus.size());
    std::unordered_map<int, long> df;
    for (const auto& doc : corpus) {
        std::unordered_set<int> seen;
        for (int p : doc.loss_positions()) seen.insert(doc.ids[static_cast<size_t>(p)]);
        for (int id : seen) ++df[id];
    }

    ImportanceScores scores;
    scores.per_doc.resize(corpus.size());
    for (size_t d = 0; d < corpus.size(); ++d) {
        const auto& doc = corpus[d];
        auto positions = doc.loss_positions();
        const double loss_len = static_cast<double>(positions.size());
        std::unordered_map<int, long> counts;
        for (int p : positions) ++counts[doc.ids[static_cast<size_t>(p)]];
        auto& out = scores.per_doc[d];
        out.reserve(positions.size());
        for (int p : positions) {
            int id = doc.ids[static_cast<size_t>(p)];
            double tf = static_cast<double>(counts[id]) / loss_len;
            double idf = std::log((1.0 + n_docs) / (1.0 + static_cast<double>(df[id]))) + 1.0;
            out.push_back(tf * idf);
        }
    }
    return scores;
}

ImportanceScores external_scores_load(const std::string& path, const std::vector<Document>& corpus) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open score file: " + path);

    ImportanceScores scores;
    scores.per_doc.resize(corpus.size());
    std::string line;
    size_t d = 0;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        if (d >= corpus.size())
            throw DataError("score file has more lines than documents (" + path + ")");
        nlohmann::json obj = nlohmann::json::parse(line, nullptr, false);
        if (obj.is_discarded() || !obj.is_object() || !obj.contains("scores") || !obj["scores"].is_array())
            throw DataError("score file line " + std::to_string(line_no) + ": expected object with array field \"scores\"");
        std::vector<double> vals = obj["scores"].get<std::vector<double>>();
        size_t expected = static_cast<size_t>(corpus[d].loss_token_count());
        if (vals.size() != expected)
            throw DataError("score length mismatch for document " + std::to_string(d) + ": got " +
                            std::to_string(vals.size()) + ", expected " + std::to_string(expected));
        for (double v : vals)
            if (!std::isfinite(v))
                throw DataError("non-finite score for document " + std::to_string(d));
        scores.per_doc[d] = std::move(vals);
        ++d;
    }
    if (d != corpus.size())
        throw DataError("score file has " + std::to_string(d) + " lines for " +
                        std::to_string(corpus.size()) + " documents");
    return scores;
}

ImportanceScores excess_loss_scores(const std::vector<std::vector<double>>& current_ce,
                                    const std::vector<std::vector<double>>& reference_ce) {
    if (current_ce.size() != reference_ce.size())
        throw ConfigError("excess_loss_scores: document count mismatch between current and reference");
    ImportanceScores scores;
    scores.per_doc.resize(current_ce.size());
    for (size_t d = 0; d < current_ce.size(); ++d) {
        if (current_ce[d].size() != reference_ce[d].size())
            throw ConfigError("excess_loss_scores: per-token CE length mismatch for document " + std::to_string(d));
        auto& out = scores.per_doc[d];
        out.resize(current_ce[d].size());
        for (size_t i = 0; i < out.size(); ++i) out[i] = current_ce[d][i] - reference_ce[d][i];
    }
    return scores;
}

GroupAssignment assign_top_fraction(const ImportanceScores& scores,
                                    const std::vector<Document>& docs,
                                    const GroupingConfig& cfg) {
    cfg.validate();
    if (scores.per_doc.size() != docs.size())
        throw ConfigError("assign_top_fraction: scores cover " + std::to_string(scores.per_doc.size()) +
                          " documents, corpus has " + std::to_string(docs.size()));

    GroupAssignment assignment;
    assignment.per_doc.resize(docs.size());
    for (size_t d = 0; d < docs.size(); ++d) {
        const auto& doc = docs[d];
        auto positions = doc.loss_positions();
        const auto& vals = scores.per_doc[d];
        if (vals.size() != positions.size())
            throw ConfigError("assign_top_fraction: document " + std::to_string(d) +
                              " has " + std::to_string(vals.size()) + " scores for " +
                              std::to_string(positions.size()) + " loss-bearing tokens");
        for (double v : vals)
            if (!std::isfinite(v)) throw NumericError("non-finite importance score in document " + std::to_string(d));

        auto& labels = assignment.per_doc[d];
        labels.assign(static_cast<size_t>(doc.length()), GroupLabel::excluded);
        if (positions.empty()) continue;

        std::vector<size_t> order(vals.size());
        std::iota(order.begin(), order.end(), size_t{0});
        std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
            if (vals[a] != vals[b]) return vals[a] > vals[b];
            return a < b;
        });

        long n_imp = important_count(cfg.percentile, static_cast<long>(positions.size()));
        for (size_t r = 0; r < order.size(); ++r) {
            int pos = positions[order[r]];
            labels[static_cast<size_t>(pos)] =
                (static_cast<long>(r) < n_imp) ? GroupLabel::important : GroupLabel::unimportant;
        }
    }
    return assignment;
}

std::vector<GroupLabel> flatten_loss_labels(const GroupAssignment& assignment) {
    std::vector<GroupLabel> flat;
    for (const auto& labels : assignment.per_doc)
        for (GroupLabel l : labels)
            if (l != GroupLabel::excluded) flat.push_back(l);
    return flat;
}

void save_assignment_jsonl(const GroupAssignment& assignment, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write assignment file: " + path);
    auto important = assignment.important_positions();
    for (size_t d = 0; d < important.size(); ++d) {
        nlohmann::ordered_json obj;
        obj["doc"] = d;
        obj["important"] = important[d];
        out << obj.dump() << '\n';
    }
}

} // namespace sftgo
