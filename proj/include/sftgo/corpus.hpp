#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "sftgo/common.hpp"

namespace sftgo {

/// One prompt/response pair as read from a JSONL dataset.
struct RawRecord {
    std::string prompt;
    std::string response;
};

/// Word-level vocabulary with four reserved ids at the front.
class Vocab {
public:
    static constexpr int kPadId = 0;
    static constexpr int kBosId = 1;
    static constexpr int kEosId = 2;
    static constexpr int kUnkId = 3;
    static constexpr int kNumReserved = 4;

    Vocab() = default;
    explicit Vocab(std::vector<std::string> tokens);

    int size() const { return static_cast<int>(tokens_.size()); }
    const std::string& token(int id) const { return tokens_.at(static_cast<size_t>(id)); }
    const std::vector<std::string>& tokens() const { return tokens_; }

    // unk for out-of-vocabulary words
    int id_of(const std::string& token) const;
    bool contains(const std::string& token) const { return id_.count(token) > 0; }

    void save(const std::string& path) const;
    static Vocab load(const std::string& path);

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> id_;
};

/// A tokenized sequence. response_mask marks the positions whose prediction
/// contributes to the loss (never position 0, which is bos).
struct Document {
    std::vector<int> ids;
    std::vector<bool> response_mask;
    std::string prompt_text;
    std::string response_text;

    int length() const { return static_cast<int>(ids.size()); }
    int loss_token_count() const;
    // ascending positions p with response_mask[p] = true
    std::vector<int> loss_positions() const;
};

struct Batch {
    std::vector<Document> documents; // right-padded to max_len
    std::vector<int> doc_indices;    // position of each document in the source corpus
    int max_len = 0;
    int pad_id = Vocab::kPadId;
};

// Lowercases and splits on whitespace and punctuation; punctuation
// characters are separators and produce no tokens.
std::vector<std::string> split_words(const std::string& text);

// Joins tokens with single spaces (inverse of split_words on clean text).
std::string detokenize(const std::vector<int>& ids, const Vocab& vocab, bool skip_reserved = true);

// Most frequent words (ties broken lexicographically) plus the 4 reserved
// tokens, capped at max_size total entries.
Vocab build_vocab(const std::vector<RawRecord>& corpus, int max_size);

// ids = [bos] + prompt + response + [eos]; mask true on response ids and eos
// (and on prompt ids as well when loss_on_prompt is set).
// Returns nullopt for records with an empty response (callers count skips).
std::optional<Document> tokenize(const RawRecord& record, const Vocab& vocab,
                                 bool loss_on_prompt = false);

struct TokenizeStats {
    long skipped_records = 0;
    long truncated_records = 0;
};

// Tokenizes a whole corpus, skipping rejected records and truncating
// sequences longer than max_len (0 = no limit). Documents whose loss
// positions are all truncated away are skipped too.
std::vector<Document> tokenize_corpus(const std::vector<RawRecord>& records, const Vocab& vocab,
                                      bool loss_on_prompt, int max_len, TokenizeStats* stats = nullptr);

// JSONL I/O, fields "prompt" and "response". Malformed lines raise DataError
// naming every offending line number.
std::vector<RawRecord> load_jsonl(const std::string& path);
void save_jsonl(const std::vector<RawRecord>& records, const std::string& path);

// Deterministic shuffle (Fisher-Yates over a splitmix64 stream) followed by
// chunking; each document appears exactly once.
std::vector<Batch> make_batches(const std::vector<Document>& docs, int batch_size, uint64_t seed);

// Order-preserving chunking (no shuffle); used for scoring passes where the
// output must align with the dataset file.
std::vector<Batch> chunk_batches(const std::vector<Document>& docs, int batch_size);

} // namespace sftgo
