#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "separator/corpus.hpp"
#include "separator/model.hpp"
#include "separator/textproc.hpp"

namespace separator {

// Corpus-level BLEU with brevity penalty; smoothing replaces zero clipped
// counts by eps. Scores are on the 0-100 scale.
struct BleuConfig {
    size_t max_order = 4;
    double eps = 1e-9;
    bool lowercase = true;  // case-insensitive token matching

    std::vector<std::string> validate() const;
};

using Sentence = std::vector<std::string>;

double bleu(const std::vector<Sentence>& outputs,
            const std::vector<std::vector<Sentence>>& reference_sets,
            const BleuConfig& cfg = {});

// BLEU of each output against its own input: high values mean copying.
double self_bleu(const std::vector<Sentence>& outputs,
                 const std::vector<Sentence>& inputs, const BleuConfig& cfg = {});

// alpha * BLEU(outputs, references) - (1 - alpha) * BLEU(outputs, inputs).
double ibleu_components(double bleu_score, double self_bleu_score, double alpha = 0.7);
double ibleu(const std::vector<Sentence>& outputs,
             const std::vector<std::vector<Sentence>>& reference_sets,
             const std::vector<Sentence>& inputs, double alpha = 0.7,
             const BleuConfig& cfg = {});

// One seeded random query per cluster with >= 2 members; each query ranks
// every other question by cosine similarity, and the accuracy is the
// fraction of queries whose top hit shares their cluster. Ties rank the
// lower index first; zero-norm encodings are an error.
double retrieval_accuracy(const std::vector<std::vector<double>>& encodings,
                          const std::vector<size_t>& cluster_of, uint64_t seed);

// Per-question latents for a whole corpus, encoded once and shared by the
// analysis functions below. n_threads > 1 splits the encode pass over
// worker threads; results are index-deterministic either way.
struct CorpusEncodings {
    std::vector<std::vector<double>> z_sem, z_syn, z;
    std::vector<std::vector<int>> codes;
    std::vector<size_t> para_cluster, tmpl_cluster;  // per-question labels
    std::vector<std::string> cluster_id, tmpl;
    std::vector<size_t> index_in_cluster;
    std::vector<std::vector<Token>> tokens;
};
CorpusEncodings encode_corpus(const std::vector<ParaphraseCluster>& data, const Vocab& vocab,
                              const TextProc& tp, SeparatorModel& model,
                              size_t n_threads = 1);

// Accuracy matrix over encoding {z_sem, z_syn, z} x clustering
// {paraphrase, template}.
struct RetrievalReport {
    std::array<std::array<double, 2>, 3> acc{};
    uint64_t seed = 0;
    nlohmann::json to_json() const;
};
RetrievalReport retrieval_report(const CorpusEncodings& enc, uint64_t seed);
RetrievalReport retrieval_report(const std::vector<ParaphraseCluster>& data,
                                 const Vocab& vocab, const TextProc& tp,
                                 SeparatorModel& model, uint64_t seed);

// Maps a question to a categorical property value.
using PropertyExtractor = std::function<std::string(const std::vector<Token>&)>;

// The four analysis properties: question (wh) word, its position,
// first preposition, and length bucket.
std::vector<std::pair<std::string, PropertyExtractor>> standard_properties();

// Mean Shannon entropy (natural log) of the property value distribution
// conditioned on each head's code; codes with no support are skipped.
// Returns one value per head.
std::vector<double> code_entropy(const std::vector<std::vector<int>>& codes, size_t K,
                                 const std::vector<std::string>& values);

struct EntropyReport {
    std::vector<std::string> properties;
    std::vector<std::vector<double>> entropy;  // [head][property]
    nlohmann::json to_json() const;
};
EntropyReport head_entropy(const CorpusEncodings& enc, size_t quant_heads, size_t K,
                           const std::vector<std::pair<std::string, PropertyExtractor>>& props);
EntropyReport head_entropy(const std::vector<ParaphraseCluster>& data, const Vocab& vocab,
                           SeparatorModel& model,
                           const std::vector<std::pair<std::string, PropertyExtractor>>& props);

// One row per question: id, cluster id, template, then z_sem and z_syn
// components, tab-separated.
void write_encodings_tsv(std::ostream& os, const CorpusEncodings& enc);
void write_encodings_tsv(std::ostream& os, const std::vector<ParaphraseCluster>& data,
                         const Vocab& vocab, const TextProc& tp, SeparatorModel& model);

}  // namespace separator
