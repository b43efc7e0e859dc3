#pragma once

#include "sftgo/corpus.hpp"

namespace sftgo {

/// Synthetic instruction corpus for desk-scale experiments. Documents are
/// templated sentences over a fixed function-word skeleton plus topic nouns:
/// the skeleton and the noun-conditioned adjectives/verbs are predictable
/// from context, while topic nouns are high-entropy and rare across the
/// corpus, so TF-IDF ranks them important and a small model keeps a visible
/// loss gap between the two groups.
struct ToyCorpusConfig {
    long n_docs = 500;
    uint64_t seed = 1;
    int min_sentences = 3;
    int max_sentences = 5;
    int min_active_nouns = 2;
    int max_active_nouns = 4;
};

std::vector<RawRecord> make_toy_corpus(const ToyCorpusConfig& cfg);

} // namespace sftgo
