#include "sftgo/toy_corpus.hpp"

#include <array>

namespace sftgo {

namespace {

constexpr int kTopics = 12;
constexpr int kNounsPerTopic = 8;

const std::array<std::array<const char*, kNounsPerTopic>, kTopics> kNouns = {{
    {"comet", "nebula", "quasar", "pulsar", "meteor", "galaxy", "eclipse", "aurora"},
    {"neuron", "enzyme", "membrane", "ribosome", "synapse", "protein", "plasmid", "organelle"},
    {"basalt", "magma", "glacier", "fossil", "quartz", "sediment", "stratum", "erosion"},
    {"catalyst", "isotope", "polymer", "solvent", "reagent", "crystal", "titration", "monomer"},
    {"cyclone", "monsoon", "drizzle", "thunder", "blizzard", "humidity", "frost", "breeze"},
    {"plankton", "coral", "lagoon", "trench", "current", "tide", "reef", "kelp"},
    {"cadence", "tempo", "chord", "melody", "rhythm", "octave", "harmony", "timbre"},
    {"broth", "marinade", "glaze", "garnish", "dough", "pastry", "spice", "yeast"},
    {"turbine", "piston", "gearbox", "flywheel", "bearing", "valve", "rotor", "crankshaft"},
    {"canopy", "lichen", "sapling", "undergrowth", "mycelium", "bark", "moss", "fern"},
    {"loom", "weave", "bobbin", "spindle", "linen", "wool", "dye", "stitch"},
    {"archway", "buttress", "facade", "cornice", "vault", "column", "pediment", "lintel"},
}};

const std::array<const char*, 10> kAdjectives = {"small", "large",  "bright", "dark",  "rapid",
                                                 "slow",  "dense",  "hollow", "smooth", "rough"};
const std::array<const char*, 10> kVerbs = {"moves", "forms", "holds", "breaks", "turns",
                                            "grows", "binds", "flows", "rests",  "spins"};

// adjective/verb are functions of the noun, so they are predictable from the
// context once the noun has been emitted
int noun_global_index(int topic, int noun) { return topic * kNounsPerTopic + noun; }
const char* adj_for(int gidx) { return kAdjectives[static_cast<size_t>((gidx * 7 + 3) % 10)]; }
const char* verb_for(int gidx) { return kVerbs[static_cast<size_t>((gidx * 11 + 5) % 10)]; }

} // namespace

std::vector<RawRecord> make_toy_corpus(const ToyCorpusConfig& cfg) {
    if (cfg.n_docs < 1) throw ConfigError("make_toy_corpus: n_docs must be >= 1");
    if (cfg.min_sentences < 1 || cfg.max_sentences < cfg.min_sentences)
        throw ConfigError("make_toy_corpus: bad sentence range");
    if (cfg.min_active_nouns < 1 || cfg.max_active_nouns < cfg.min_active_nouns ||
        cfg.max_active_nouns > kNounsPerTopic)
        throw ConfigError("make_toy_corpus: bad active-noun range");

    std::vector<RawRecord> records;
    records.reserve(static_cast<size_t>(cfg.n_docs));
    for (long doc = 0; doc < cfg.n_docs; ++doc) {
        Rng rng(derive_seed(cfg.seed, static_cast<uint64_t>(doc)));
        int topic = static_cast<int>(rng.uniform_index(kTopics));

        int span = cfg.max_active_nouns - cfg.min_active_nouns + 1;
        int n_active = cfg.min_active_nouns + static_cast<int>(rng.uniform_index(static_cast<uint64_t>(span)));
        std::array<int, kNounsPerTopic> pool;
        for (int i = 0; i < kNounsPerTopic; ++i) pool[static_cast<size_t>(i)] = i;
        for (int i = kNounsPerTopic; i > 1; --i) {
            int j = static_cast<int>(rng.uniform_index(static_cast<uint64_t>(i)));
            std::swap(pool[static_cast<size_t>(i - 1)], pool[static_cast<size_t>(j)]);
        }
        auto active = [&](uint64_t r) {
            return noun_global_index(topic, pool[static_cast<size_t>(r)]);
        };
        auto noun_at = [&](int gidx) {
            return std::string(kNouns[static_cast<size_t>(gidx / kNounsPerTopic)]
                                     [static_cast<size_t>(gidx % kNounsPerTopic)]);
        };
        auto pick = [&]() { return active(rng.uniform_index(static_cast<uint64_t>(n_active))); };

        RawRecord rec;
        int head = active(0);
        switch (rng.uniform_index(3)) {
            case 0: rec.prompt = "tell me about the " + noun_at(head); break;
            case 1: rec.prompt = "what is a " + noun_at(head); break;
            default: rec.prompt = "describe the " + noun_at(head); break;
        }

        int n_sentences =
            cfg.min_sentences +
            static_cast<int>(rng.uniform_index(static_cast<uint64_t>(cfg.max_sentences - cfg.min_sentences + 1)));
        for (int s = 0; s < n_sentences; ++s) {
            int n1 = pick(), n2 = pick(), n3 = pick();
            std::string sentence;
            switch (rng.uniform_index(4)) {
                case 0:
                    sentence = "the " + noun_at(n1) + " is " + adj_for(n1) + " and it " + verb_for(n1) +
                               " near a " + noun_at(n2);
                    break;
                case 1:
                    sentence = "a " + noun_at(n1) + " " + verb_for(n1) + " with this " + noun_at(n2) +
                               " and its " + noun_at(n3);
                    break;
                case 2:
                    sentence = "each " + noun_at(n1) + " " + verb_for(n1) + " from one " + noun_at(n2) +
                               " to another " + noun_at(n3);
                    break;
                default:
                    sentence = "that " + noun_at(n1) + " in a " + noun_at(n2) + " is " + adj_for(n1);
                    break;
            }
            if (s > 0) rec.response += " ";
            rec.response += sentence + ".";
        }
        records.push_back(std::move(rec));
    }
    return records;
}

} // namespace sftgo
