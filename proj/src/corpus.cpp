#include "sftgo/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <unordered_map>

#include <json.hpp>

namespace sftgo {

namespace {

const char* kReservedTokens[Vocab::kNumReserved] = {"<pad>", "<bos>", "<eos>", "<unk>"};

} // namespace

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    id_.reserve(tokens_.size());
    for (int i = 0; i < static_cast<int>(tokens_.size()); ++i) {
        auto [it, inserted] = id_.emplace(tokens_[static_cast<size_t>(i)], i);
        if (!inserted) throw ConfigError("duplicate token in vocabulary: " + tokens_[static_cast<size_t>(i)]);
    }
}

int Vocab::id_of(const std::string& token) const {
    auto it = id_.find(token);
    return it == id_.end() ? kUnkId : it->second;
}

void Vocab::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write vocabulary file: " + path);
    for (const auto& t : tokens_) out << t << '\n';
}

Vocab Vocab::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read vocabulary file: " + path);
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(in, line)) tokens.push_back(line);
    if (tokens.size() < Vocab::kNumReserved) throw DataError("vocabulary file too small: " + path);
    return Vocab(std::move(tokens));
}

int Document::loss_token_count() const {
    int n = 0;
    for (bool m : response_mask) n += m ? 1 : 0;
    return n;
}

std::vector<int> Document::loss_positions() const {
    std::vector<int> pos;
    for (int p = 0; p < length(); ++p)
        if (response_mask[static_cast<size_t>(p)]) pos.push_back(p);
    return pos;
}

std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> words;
    std::string cur;
    for (unsigned char c : text) {
        if (std::isspace(c) || (c < 0x80 && std::ispunct(c))) {
            if (!cur.empty()) {
                words.push_back(cur);
                cur.clear();
            }
        } else {
            cur.push_back(static_cast<char>(std::tolower(c)));
        }
    }
    if (!cur.empty()) words.push_back(cur);
    return words;
}

std::string detokenize(const std::vector<int>& ids, const Vocab& vocab, bool skip_reserved) {
    std::string out;
    for (int id : ids) {
        if (skip_reserved && id < Vocab::kNumReserved) continue;
        if (!out.empty()) out.push_back(' ');
        out += vocab.token(id);
    }
    return out;
}

Vocab build_vocab(const std::vector<RawRecord>& corpus, int max_size) {
    if (corpus.empty()) throw ConfigError("build_vocab: empty corpus");
    if (max_size < Vocab::kNumReserved + 1) throw ConfigError("build_vocab: max_size must be >= 5");

    std::unordered_map<std::string, long> counts;
    for (const auto& rec : corpus) {
        for (const auto& w : split_words(rec.prompt)) ++counts[w];
        for (const auto& w : split_words(rec.response)) ++counts[w];
    }

    std::vector<std::pair<std::string, long>> ranked(counts.begin(), counts.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });

    std::vector<std::string> tokens;
    tokens.reserve(static_cast<size_t>(max_size));
    for (int i = 0; i < Vocab::kNumReserved; ++i) tokens.emplace_back(kReservedTokens[i]);
    for (const auto& [word, count] : ranked) {
        if (static_cast<int>(tokens.size()) >= max_size) break;
        tokens.push_back(word);
    }
    return Vocab(std::move(tokens));
}

std::optional<Document> tokenize(const RawRecord& record, const Vocab& vocab, bool loss_on_prompt) {
    auto response_words = split_words(record.response);
    if (record.response.empty()) return std::nullopt;

    Document doc;
    doc.prompt_text = record.prompt;
    doc.response_text = record.response;
    doc.ids.push_back(Vocab::kBosId);
    doc.response_mask.push_back(false);
    for (const auto& w : split_words(record.prompt)) {
        doc.ids.push_back(vocab.id_of(w));
        doc.response_mask.push_back(loss_on_prompt);
    }
    for (const auto& w : response_words) {
        doc.ids.push_back(vocab.id_of(w));
        doc.response_mask.push_back(true);
    }
    doc.ids.push_back(Vocab::kEosId);
    doc.response_mask.push_back(true);
    return doc;
}

std::vector<Document> tokenize_corpus(const std::vector<RawRecord>& records, const Vocab& vocab,
                                      bool loss_on_prompt, int max_len, TokenizeStats* stats) {
    std::vector<Document> docs;
    docs.reserve(records.size());
    TokenizeStats local;
    for (const auto& rec : records) {
        auto doc = tokenize(rec, vocab, loss_on_prompt);
        if (!doc) {
            ++local.skipped_records;
            continue;
        }
        if (max_len > 0 && doc->length() > max_len) {
            doc->ids.resize(static_cast<size_t>(max_len));
            doc->response_mask.resize(static_cast<size_t>(max_len));
            ++local.truncated_records;
            if (doc->loss_token_count() == 0) {
                ++local.skipped_records;
                continue;
            }
        }
        docs.push_back(std::move(*doc));
    }
    if (stats) *stats = local;
    return docs;
}

std::vector<RawRecord> load_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open dataset file: " + path);

    std::vector<RawRecord> records;
    std::vector<std::string> problems;
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json obj = nlohmann::json::parse(line, nullptr, false);
        if (obj.is_discarded() || !obj.is_object()) {
            problems.push_back("line " + std::to_string(line_no) + ": not a JSON object");
            continue;
        }
        if (!obj.contains("prompt") || !obj["prompt"].is_string()) {
            problems.push_back("line " + std::to_string(line_no) + ": missing string field \"prompt\"");
            continue;
        }
        if (!obj.contains("response") || !obj["response"].is_string()) {
            problems.push_back("line " + std::to_string(line_no) + ": missing string field \"response\"");
            continue;
        }
        records.push_back({obj["prompt"].get<std::string>(), obj["response"].get<std::string>()});
    }
    if (!problems.empty()) {
        std::string msg = "malformed records in " + path + ":";
        for (const auto& p : problems) msg += "\n  " + p;
        throw DataError(msg);
    }
    return records;
}

void save_jsonl(const std::vector<RawRecord>& records, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write dataset file: " + path);
    for (const auto& rec : records) {
        nlohmann::ordered_json obj;
        obj["prompt"] = rec.prompt;
        obj["response"] = rec.response;
        out << obj.dump() << '\n';
    }
}

namespace {

std::vector<Batch> batches_in_order(const std::vector<Document>& docs, const std::vector<int>& order,
                                    int batch_size);

} // namespace

std::vector<Batch> make_batches(const std::vector<Document>& docs, int batch_size, uint64_t seed) {
    if (batch_size < 1) throw ConfigError("make_batches: batch_size must be >= 1");

    std::vector<int> order(docs.size());
    for (size_t i = 0; i < docs.size(); ++i) order[i] = static_cast<int>(i);
    Rng rng(seed);
    for (size_t i = docs.size(); i > 1; --i) {
        size_t j = static_cast<size_t>(rng.uniform_index(i));
        std::swap(order[i - 1], order[j]);
    }
    return batches_in_order(docs, order, batch_size);
}

std::vector<Batch> chunk_batches(const std::vector<Document>& docs, int batch_size) {
    if (batch_size < 1) throw ConfigError("chunk_batches: batch_size must be >= 1");
    std::vector<int> order(docs.size());
    for (size_t i = 0; i < docs.size(); ++i) order[i] = static_cast<int>(i);
    return batches_in_order(docs, order, batch_size);
}

namespace {

std::vector<Batch> batches_in_order(const std::vector<Document>& docs, const std::vector<int>& order,
                                    int batch_size) {
    std::vector<Batch> batches;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(batch_size)) {
        size_t end = std::min(order.size(), start + static_cast<size_t>(batch_size));
        Batch batch;
        int max_len = 0;
        for (size_t i = start; i < end; ++i)
            max_len = std::max(max_len, docs[static_cast<size_t>(order[i])].length());
        batch.max_len = max_len;
        for (size_t i = start; i < end; ++i) {
            Document padded = docs[static_cast<size_t>(order[i])];
            padded.ids.resize(static_cast<size_t>(max_len), Vocab::kPadId);
            padded.response_mask.resize(static_cast<size_t>(max_len), false);
            batch.documents.push_back(std::move(padded));
            batch.doc_indices.push_back(order[i]);
        }
        batches.push_back(std::move(batch));
    }
    return batches;
}

} // namespace

} // namespace sftgo
