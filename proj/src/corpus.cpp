#include "separator/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "separator/errors.hpp"

namespace separator {

// ---------------------------------------------------------------------------
// cluster I/O
// ---------------------------------------------------------------------------

std::vector<ParaphraseCluster> load_clusters(const std::string& path, const TextProc& tp) {
    std::ifstream in(path);
    if (!in) throw validation_error("cannot open cluster file " + path);
    std::vector<ParaphraseCluster> out;
    std::set<std::string> seen_ids;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::string where = path + " line " + std::to_string(lineno);
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw validation_error(where + ": malformed JSON: " + e.what());
        }
        if (!rec.is_object() || !rec.contains("id") || !rec.contains("questions"))
            throw validation_error(where + ": expected {\"id\", \"questions\"}");
        ParaphraseCluster c;
        if (!rec["id"].is_string())
            throw validation_error(where + ": \"id\" must be a string");
        c.id = rec["id"].get<std::string>();
        if (!seen_ids.insert(c.id).second)
            throw validation_error(where + ": duplicate cluster id \"" + c.id + "\"");
        if (!rec["questions"].is_array() || rec["questions"].empty())
            throw validation_error(where + ": cluster \"" + c.id +
                                   "\" has no questions");
        for (const auto& q : rec["questions"]) {
            if (!q.is_string())
                throw validation_error(where + ": questions must be strings");
            const std::string text = q.get<std::string>();
            auto toks = tp.tokenize(text);
            if (toks.empty())
                throw validation_error(where + ": empty question in cluster \"" + c.id +
                                       "\"");
            c.raw.push_back(text);
            c.questions.push_back(std::move(toks));
        }
        out.push_back(std::move(c));
    }
    return out;
}

void save_clusters(const std::vector<ParaphraseCluster>& clusters,
                   const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw validation_error("cannot write cluster file " + path);
    for (const auto& c : clusters) {
        nlohmann::json rec;
        rec["id"] = c.id;
        rec["questions"] = c.raw;
        out << rec.dump() << '\n';
    }
    if (!out) throw validation_error("write failed for " + path);
}

// ---------------------------------------------------------------------------
// splits
// ---------------------------------------------------------------------------

Dataset split_clusters(std::vector<ParaphraseCluster> clusters,
                       const std::array<double, 3>& weights, uint64_t seed) {
    const double wsum = weights[0] + weights[1] + weights[2];
    if (std::abs(wsum - 1.0) > 1e-9)
        throw validation_error("split weights must sum to 1, got " +
                               std::to_string(wsum));
    std::vector<size_t> order(clusters.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order);

    const size_t n = clusters.size();
    size_t n_train = static_cast<size_t>(std::llround(weights[0] * static_cast<double>(n)));
    size_t n_dev = static_cast<size_t>(std::llround(weights[1] * static_cast<double>(n)));
    n_train = std::min(n_train, n);
    n_dev = std::min(n_dev, n - n_train);

    Dataset ds;
    for (size_t i = 0; i < n; ++i) {
        auto& c = clusters[order[i]];
        if (i < n_train)
            ds.train.push_back(std::move(c));
        else if (i < n_train + n_dev)
            ds.dev.push_back(std::move(c));
        else
            ds.test.push_back(std::move(c));
    }
    return ds;
}

// ---------------------------------------------------------------------------
// vocabulary
// ---------------------------------------------------------------------------

Vocab Vocab::build(const std::vector<ParaphraseCluster>& train_clusters) {
    std::set<std::string> types;
    for (const auto& c : train_clusters)
        for (const auto& q : c.questions)
            for (const auto& t : q) types.insert(t.lowercased);
    Vocab v;
    v.rev_ = {"<pad>", "<bos>", "<eos>", "<unk>"};
    for (const auto& t : types) v.rev_.push_back(t);
    for (size_t i = 0; i < v.rev_.size(); ++i) v.map_[v.rev_[i]] = static_cast<int>(i);
    return v;
}

Vocab Vocab::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw validation_error("cannot open vocab file " + path);
    Vocab v;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        v.map_[line] = static_cast<int>(v.rev_.size());
        v.rev_.push_back(line);
    }
    if (v.rev_.size() < 4 || v.rev_[0] != "<pad>" || v.rev_[1] != "<bos>" ||
        v.rev_[2] != "<eos>" || v.rev_[3] != "<unk>")
        throw validation_error("vocab file " + path + " lacks the reserved header");
    return v;
}

void Vocab::save(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw validation_error("cannot write vocab file " + path);
    for (const auto& t : rev_) out << t << '\n';
}

int Vocab::id(const std::string& token) const {
    const auto it = map_.find(token);
    return it == map_.end() ? UNK : it->second;
}

const std::string& Vocab::token(int i) const {
    if (i < 0 || static_cast<size_t>(i) >= rev_.size())
        throw std::runtime_error("vocab id " + std::to_string(i) + " out of range");
    return rev_[static_cast<size_t>(i)];
}

std::vector<int> Vocab::encode(const std::vector<Token>& tokens) const {
    std::vector<int> out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) out.push_back(id(t.lowercased));
    return out;
}

std::string Vocab::decode(const std::vector<int>& ids) const {
    std::string out;
    for (int i : ids) {
        if (i == PAD || i == BOS || i == EOS) continue;
        if (!out.empty()) out.push_back(' ');
        out += token(i);
    }
    return out;
}

// ---------------------------------------------------------------------------
// exemplar index
// ---------------------------------------------------------------------------

ExemplarIndex ExemplarIndex::build(const std::vector<ParaphraseCluster>& train_clusters,
                                   const TextProc& tp) {
    ExemplarIndex idx;
    for (size_t ci = 0; ci < train_clusters.size(); ++ci)
        for (size_t qi = 0; qi < train_clusters[ci].questions.size(); ++qi) {
            const std::string key =
                tp.template_of(train_clusters[ci].questions[qi]).serialize();
            idx.map_[key].push_back({ci, qi});
        }
    return idx;
}

const std::vector<ExemplarRef>* ExemplarIndex::find(const std::string& key) const {
    const auto it = map_.find(key);
    return it == map_.end() ? nullptr : &it->second;
}

size_t ExemplarIndex::total_questions() const {
    size_t n = 0;
    for (const auto& [k, v] : map_) n += v.size();
    return n;
}

// ---------------------------------------------------------------------------
// triples
// ---------------------------------------------------------------------------

ChunkBank build_chunk_bank(const std::vector<ParaphraseCluster>& train_clusters,
                           const TextProc& tp) {
    std::map<std::string, std::set<std::string>> pools;
    for (const auto& c : train_clusters)
        for (const auto& q : c.questions)
            for (const auto& span : tp.chunk(q)) {
                if (span.label == ChunkLabel::O) continue;
                std::string phrase;
                for (size_t i = span.start; i < span.end; ++i) {
                    if (!phrase.empty()) phrase.push_back(' ');
                    phrase += q[i].lowercased;
                }
                pools[label_name(span.label)].insert(phrase);
            }
    ChunkBank bank;
    for (const auto& [label, phrases] : pools)
        bank[label] = std::vector<std::string>(phrases.begin(), phrases.end());
    return bank;
}

std::vector<TrainingTriple> make_triples(const std::vector<ParaphraseCluster>& train_clusters,
                                         const ExemplarIndex& index, const Vocab& vocab,
                                         const TextProc& tp, double p_td,
                                         const ChunkBank& bank, Rng& rng,
                                         TripleStats* stats) {
    if (p_td < 0.0 || p_td > 1.0)
        throw validation_error("p_td must lie in [0, 1], got " + std::to_string(p_td));
    if (train_clusters.empty()) throw validation_error("train split is empty");

    // per-question template keys, computed once
    std::vector<std::vector<std::string>> tmpl(train_clusters.size());
    for (size_t ci = 0; ci < train_clusters.size(); ++ci)
        for (const auto& q : train_clusters[ci].questions)
            tmpl[ci].push_back(tp.template_of(q).serialize());

    struct Pair {
        size_t c, i, j;
    };
    std::vector<Pair> pairs;
    TripleStats local;
    for (size_t ci = 0; ci < train_clusters.size(); ++ci) {
        const size_t m = train_clusters[ci].questions.size();
        if (m < 2) {
            ++local.singleton_clusters_skipped;
            continue;
        }
        for (size_t i = 0; i < m; ++i)
            for (size_t j = 0; j < m; ++j)
                if (i != j) pairs.push_back({ci, i, j});
    }
    rng.shuffle(pairs);

    std::vector<TrainingTriple> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs) {
        const auto& cluster = train_clusters[p.c];
        TrainingTriple t;
        t.cluster = p.c;
        t.x_sem = vocab.encode(cluster.questions[p.i]);
        t.y = vocab.encode(cluster.questions[p.j]);
        const std::string& ykey = tmpl[p.c][p.j];

        if (rng.bernoulli(p_td)) {
            // template dropout: an intra-cluster question with another template
            std::vector<size_t> cands;
            for (size_t qi = 0; qi < cluster.questions.size(); ++qi)
                if (tmpl[p.c][qi] != ykey) cands.push_back(qi);
            if (!cands.empty()) {
                const size_t pick = cands[rng.below(cands.size())];
                t.x_syn = vocab.encode(cluster.questions[pick]);
                t.dropout_branch = true;
            }
        }
        if (!t.dropout_branch) {
            std::vector<ExemplarRef> cands;
            if (const auto* refs = index.find(ykey))
                for (const auto& r : *refs)
                    if (r.cluster != p.c) cands.push_back(r);
            if (!cands.empty()) {
                const auto& r = cands[rng.below(cands.size())];
                t.x_syn = vocab.encode(train_clusters[r.cluster].questions[r.question]);
            } else {
                const Template yt = tp.template_of(cluster.questions[p.j]);
                t.x_syn = vocab.encode(tp.synthesize_exemplar(yt, bank, rng));
                t.synthesized = true;
            }
        }
        ++local.triples;
        if (t.dropout_branch) ++local.dropout;
        if (t.synthesized) ++local.synthesized;
        out.push_back(std::move(t));
    }
    if (stats) *stats = local;
    return out;
}

// ---------------------------------------------------------------------------
// synthetic corpus
// ---------------------------------------------------------------------------

SynthGrammar SynthGrammar::standard() {
    SynthGrammar g;
    g.family_patterns = {
        {
            "what is the {ATTR} of a {ENT} ?",
            "how {ADJ} is a {ENT} ?",
            "{ENT} {ATTR} ?",
            "what {ATTR} does a {ENT} have ?",
            "can you tell me the {ATTR} of a {ENT} ?",
            "how much {ATTR} does a {ENT} have ?",
        },
        {
            "where do {ENTPL} live ?",
            "what country do {ENTPL} live in ?",
            "in what country do {ENTPL} live ?",
            "where do {ENTPL} come from ?",
        },
        {
            "what is a {ENT} ?",
            "what does {ENT} mean ?",
            "define a {ENT} ?",
        },
    };
    g.entities = {
        {"parrot", "parrots"},   {"bear", "bears"},       {"moose", "moose"},
        {"tiger", "tigers"},     {"lion", "lions"},       {"panda", "pandas"},
        {"wolf", "wolves"},      {"fox", "foxes"},        {"rabbit", "rabbits"},
        {"deer", "deer"},        {"camel", "camels"},     {"horse", "horses"},
        {"donkey", "donkeys"},   {"goat", "goats"},       {"sheep", "sheep"},
        {"pig", "pigs"},         {"duck", "ducks"},       {"goose", "geese"},
        {"swan", "swans"},       {"crow", "crows"},       {"raven", "ravens"},
        {"falcon", "falcons"},   {"hawk", "hawks"},       {"turtle", "turtles"},
        {"tortoise", "tortoises"},{"python", "pythons"},  {"cobra", "cobras"},
        {"viper", "vipers"},     {"gecko", "geckos"},     {"lizard", "lizards"},
        {"toad", "toads"},       {"salmon", "salmon"},    {"trout", "trout"},
        {"shark", "sharks"},     {"whale", "whales"},     {"dolphin", "dolphins"},
        {"walrus", "walruses"},  {"badger", "badgers"},   {"beaver", "beavers"},
        {"hedgehog", "hedgehogs"},{"squirrel", "squirrels"},{"mole", "moles"},
        {"bat", "bats"},         {"mouse", "mice"},       {"rat", "rats"},
    };
    g.modifiers = {"red",    "blue",   "green",    "golden",   "silver",
                   "mountain","desert", "forest",   "river",    "arctic",
                   "giant",  "dwarf",  "wild",     "eastern",  "northern"};
    g.attributes = {
        {"weight", "heavy"},      {"height", "tall"},   {"length", "long"},
        {"speed", "fast"},        {"age", "old"},       {"size", "big"},
        {"width", "wide"},        {"depth", "deep"},    {"cost", "expensive"},
        {"strength", "strong"},   {"temperature", "hot"},{"population", "crowded"},
    };
    return g;
}

namespace {

std::string substitute(std::string pattern, const std::string& slot,
                       const std::string& value) {
    const std::string needle = "{" + slot + "}";
    size_t pos;
    while ((pos = pattern.find(needle)) != std::string::npos)
        pattern.replace(pos, needle.size(), value);
    return pattern;
}

struct Intent {
    size_t family, ent, mod, attr;  // mod 0 = bare entity; attr unused outside family 0
};

}  // namespace

std::vector<ParaphraseCluster> generate_synthetic_corpus(size_t n_clusters, uint64_t seed,
                                                         const TextProc& tp,
                                                         const SynthGrammar& grammar) {
    if (grammar.family_patterns.empty() || grammar.entities.empty())
        throw validation_error("synthetic grammar needs families and entities");
    for (size_t f = 0; f < grammar.family_patterns.size(); ++f)
        if (grammar.family_patterns[f].size() < 2)
            throw validation_error("synthetic grammar family " + std::to_string(f) +
                                   " has fewer than 2 templates");
    if (grammar.attributes.empty())
        throw validation_error("synthetic grammar needs attributes");

    Rng rng(seed);
    const size_t n_fam = grammar.family_patterns.size();
    const size_t n_mod = grammar.modifiers.size() + 1;  // slot 0 = no modifier

    // enumerate intent pools per family and shuffle them; drawing without
    // replacement keeps cluster meanings unique
    std::vector<std::vector<Intent>> pools(n_fam);
    for (size_t e = 0; e < grammar.entities.size(); ++e)
        for (size_t m = 0; m < n_mod; ++m) {
            for (size_t a = 0; a < grammar.attributes.size(); ++a)
                pools[0].push_back({0, e, m, a});
            for (size_t f = 1; f < n_fam; ++f) pools[f].push_back({f, e, m, 0});
        }
    for (auto& pool : pools) rng.shuffle(pool);
    std::vector<size_t> cursor(n_fam, 0);

    std::vector<ParaphraseCluster> out;
    out.reserve(n_clusters);
    for (size_t ci = 0; ci < n_clusters; ++ci) {
        // family mix: family 0 gets a double share, the rest one share each
        const size_t r = rng.below(n_fam + 1);
        size_t fam = r < 2 ? 0 : r - 1;
        if (cursor[fam] >= pools[fam].size()) fam = 0;  // overflow fallback
        if (cursor[fam] >= pools[fam].size())
            throw validation_error("synthetic intent space exhausted at cluster " +
                                   std::to_string(ci) + "; reduce --clusters");
        const Intent intent = pools[fam][cursor[fam]++];

        const auto& patterns = grammar.family_patterns[fam];
        const size_t max_size = std::min<size_t>(5, patterns.size());
        const size_t size = 2 + rng.below(max_size - 1);
        std::vector<size_t> tidx(patterns.size());
        for (size_t i = 0; i < tidx.size(); ++i) tidx[i] = i;
        rng.shuffle(tidx);

        const auto& [sing, plur] = grammar.entities[intent.ent];
        const std::string mod =
            intent.mod == 0 ? "" : grammar.modifiers[intent.mod - 1] + " ";
        const std::string ent = mod + sing;
        const std::string entpl = mod + plur;
        const auto& [attr, adj] = grammar.attributes[intent.attr];

        ParaphraseCluster cluster;
        char idbuf[32];
        std::snprintf(idbuf, sizeof idbuf, "c%05zu", ci);
        cluster.id = idbuf;
        for (size_t k = 0; k < size; ++k) {
            std::string q = patterns[tidx[k]];
            q = substitute(q, "ENT", ent);
            q = substitute(q, "ENTPL", entpl);
            q = substitute(q, "ATTR", attr);
            q = substitute(q, "ADJ", adj);
            cluster.raw.push_back(q);
            cluster.questions.push_back(tp.tokenize(q));
        }
        out.push_back(std::move(cluster));
    }
    return out;
}

nlohmann::json corpus_stats(const Dataset& ds) {
    auto split_stats = [](const std::vector<ParaphraseCluster>& cs) {
        size_t q = 0;
        for (const auto& c : cs) q += c.questions.size();
        return nlohmann::json{{"clusters", cs.size()}, {"questions", q}};
    };
    return nlohmann::json{{"train", split_stats(ds.train)},
                          {"dev", split_stats(ds.dev)},
                          {"test", split_stats(ds.test)}};
}

}  // namespace separator
