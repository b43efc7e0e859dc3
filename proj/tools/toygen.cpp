// Standalone generator for the synthetic instruction corpus used in the
// examples and tests.

#include <iostream>

#include <CLI11.hpp>

#include "sftgo/toy_corpus.hpp"

int main(int argc, char** argv) {
    CLI::App app{"synthetic instruction-corpus generator"};
    sftgo::ToyCorpusConfig cfg;
    std::string out;
    app.add_option("--docs", cfg.n_docs, "number of documents");
    app.add_option("--seed", cfg.seed, "generator seed");
    app.add_option("--out", out, "output JSONL path")->required();

    CLI11_PARSE(app, argc, argv);
    try {
        sftgo::save_jsonl(sftgo::make_toy_corpus(cfg), out);
        std::cout << "wrote " << cfg.n_docs << " documents to " << out << "\n";
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
