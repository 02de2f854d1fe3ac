#pragma once

#include <array>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "separator/rng.hpp"
#include "separator/textproc.hpp"

namespace separator {

struct ParaphraseCluster {
    std::string id;
    std::vector<std::string> raw;                  // original question text
    std::vector<std::vector<Token>> questions;     // tokenized, aligned with raw
};

struct Dataset {
    std::vector<ParaphraseCluster> train, dev, test;
};

class Vocab {
  public:
    static constexpr int PAD = 0, BOS = 1, EOS = 2, UNK = 3;

    static Vocab build(const std::vector<ParaphraseCluster>& train_clusters);
    static Vocab load(const std::string& path);
    void save(const std::string& path) const;

    int id(const std::string& token) const;  // UNK for unknown tokens
    const std::string& token(int id) const;
    size_t size() const { return rev_.size(); }

    std::vector<int> encode(const std::vector<Token>& tokens) const;
    std::string decode(const std::vector<int>& ids) const;  // skips specials

  private:
    std::unordered_map<std::string, int> map_;
    std::vector<std::string> rev_;
};

struct ExemplarRef {
    size_t cluster;   // index into the train cluster list
    size_t question;  // index within the cluster
};

class ExemplarIndex {
  public:
    static ExemplarIndex build(const std::vector<ParaphraseCluster>& train_clusters,
                               const TextProc& tp);
    const std::vector<ExemplarRef>* find(const std::string& template_key) const;
    const std::map<std::string, std::vector<ExemplarRef>>& entries() const { return map_; }
    size_t total_questions() const;

  private:
    std::map<std::string, std::vector<ExemplarRef>> map_;
};

struct TrainingTriple {
    std::vector<int> x_sem;  // paraphrase of y, same cluster
    std::vector<int> x_syn;  // exemplar sharing y's template (or dropout/synth)
    std::vector<int> y;      // target
    size_t cluster;          // y's cluster index
    bool dropout_branch = false;   // x_syn is an intra-cluster, other-template question
    bool synthesized = false;      // x_syn came from synthesize_exemplar
};

// Cluster JSONL I/O: {"id": "...", "questions": ["...", ...]} per line.
std::vector<ParaphraseCluster> load_clusters(const std::string& path, const TextProc& tp);
void save_clusters(const std::vector<ParaphraseCluster>& clusters,
                   const std::string& path);

// Cluster-level split, deterministic in (weights, seed).
Dataset split_clusters(std::vector<ParaphraseCluster> clusters,
                       const std::array<double, 3>& weights, uint64_t seed);

// One epoch of triples: every ordered (x_sem, y) pair inside each train
// cluster, shuffled; exemplar selection and template dropout per config.
struct TripleStats {
    size_t triples = 0;
    size_t dropout = 0;
    size_t synthesized = 0;
    size_t singleton_clusters_skipped = 0;
};
std::vector<TrainingTriple> make_triples(const std::vector<ParaphraseCluster>& train_clusters,
                                         const ExemplarIndex& index, const Vocab& vocab,
                                         const TextProc& tp, double p_td,
                                         const ChunkBank& bank, Rng& rng,
                                         TripleStats* stats = nullptr);

// A chunk bank usable by the synthesize_exemplar fallback, harvested from
// the train split's own chunk spans.
ChunkBank build_chunk_bank(const std::vector<ParaphraseCluster>& train_clusters,
                           const TextProc& tp);

// Question grammar for the synthetic corpus. Patterns carry {ENT} {ENTPL}
// {ATTR} {ADJ} slots; family 0 is attribute questions, 1 location, 2
// definition. One cluster = one intent rendered through 2-5 of its
// family's patterns.
struct SynthGrammar {
    std::vector<std::vector<std::string>> family_patterns;
    std::vector<std::pair<std::string, std::string>> entities;    // singular, plural
    std::vector<std::string> modifiers;                           // optional NP lead-ins
    std::vector<std::pair<std::string, std::string>> attributes;  // noun, adjective
    static SynthGrammar standard();
};

std::vector<ParaphraseCluster> generate_synthetic_corpus(size_t n_clusters, uint64_t seed,
                                                         const TextProc& tp,
                                                         const SynthGrammar& grammar =
                                                             SynthGrammar::standard());

nlohmann::json corpus_stats(const Dataset& ds);

}  // namespace separator
