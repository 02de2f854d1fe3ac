#include "separator/evalmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <stdexcept>
#include <thread>

#include "separator/errors.hpp"

namespace separator {

using nlohmann::json;

std::vector<std::string> BleuConfig::validate() const {
    std::vector<std::string> errs;
    if (max_order == 0) errs.push_back("max_order must be positive");
    if (eps <= 0.0) errs.push_back("eps must be positive");
    return errs;
}

namespace {

std::string lower_ascii(const std::string& s) {
    std::string out = s;
    for (char& c : out)
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    return out;
}

Sentence normalized(const Sentence& s, bool lowercase) {
    if (!lowercase) return s;
    Sentence out;
    out.reserve(s.size());
    for (const auto& t : s) out.push_back(lower_ascii(t));
    return out;
}

using NgramCounts = std::map<std::vector<std::string>, size_t>;

NgramCounts ngrams(const Sentence& s, size_t n) {
    NgramCounts c;
    if (s.size() < n) return c;
    for (size_t i = 0; i + n <= s.size(); ++i)
        ++c[std::vector<std::string>(s.begin() + i, s.begin() + i + n)];
    return c;
}

}  // namespace

double bleu(const std::vector<Sentence>& outputs,
            const std::vector<std::vector<Sentence>>& reference_sets,
            const BleuConfig& cfg) {
    {
        const auto errs = cfg.validate();
        if (!errs.empty()) throw std::invalid_argument("bleu: " + errs.front());
    }
    if (outputs.size() != reference_sets.size())
        throw std::invalid_argument("bleu: " + std::to_string(outputs.size()) +
                                    " outputs vs " +
                                    std::to_string(reference_sets.size()) +
                                    " reference sets");
    if (outputs.empty()) throw std::invalid_argument("bleu: empty corpus");
    const size_t N = cfg.max_order;
    std::vector<double> num(N, 0.0), den(N, 0.0);
    size_t out_len = 0, ref_len = 0;

    for (size_t i = 0; i < outputs.size(); ++i) {
        if (reference_sets[i].empty())
            throw std::invalid_argument("bleu: empty reference set at index " +
                                        std::to_string(i));
        const Sentence out = normalized(outputs[i], cfg.lowercase);
        std::vector<Sentence> refs;
        for (const auto& r : reference_sets[i]) refs.push_back(normalized(r, cfg.lowercase));

        out_len += out.size();
        // Closest reference length; ties go to the shorter reference.
        size_t best = refs[0].size();
        for (const auto& r : refs) {
            const auto d = [&](size_t len) {
                return len > out.size() ? len - out.size() : out.size() - len;
            };
            if (d(r.size()) < d(best) || (d(r.size()) == d(best) && r.size() < best))
                best = r.size();
        }
        ref_len += best;

        for (size_t n = 1; n <= N; ++n) {
            const NgramCounts oc = ngrams(out, n);
            NgramCounts max_rc;
            for (const auto& r : refs)
                for (const auto& [g, c] : ngrams(r, n))
                    max_rc[g] = std::max(max_rc[g], c);
            for (const auto& [g, c] : oc) {
                const auto it = max_rc.find(g);
                if (it != max_rc.end())
                    num[n - 1] += static_cast<double>(std::min(c, it->second));
            }
            if (out.size() >= n) den[n - 1] += static_cast<double>(out.size() - n + 1);
        }
    }

    if (out_len == 0) return 0.0;
    double log_p = 0.0;
    for (size_t n = 0; n < N; ++n) {
        const double d = den[n] > 0.0 ? den[n] : 1.0;
        const double m = num[n] > 0.0 ? num[n] : cfg.eps;
        log_p += std::log(m / d);
    }
    log_p /= static_cast<double>(N);
    const double bp =
        out_len >= ref_len
            ? 1.0
            : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(out_len));
    return 100.0 * bp * std::exp(log_p);
}

double self_bleu(const std::vector<Sentence>& outputs,
                 const std::vector<Sentence>& inputs, const BleuConfig& cfg) {
    if (outputs.size() != inputs.size())
        throw std::invalid_argument("self_bleu: outputs/inputs length mismatch");
    std::vector<std::vector<Sentence>> refs;
    refs.reserve(inputs.size());
    for (const auto& in : inputs) refs.push_back({in});
    return bleu(outputs, refs, cfg);
}

double ibleu_components(double bleu_score, double self_bleu_score, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0))
        throw std::invalid_argument("ibleu: alpha must be in [0, 1]");
    return alpha * bleu_score - (1.0 - alpha) * self_bleu_score;
}

double ibleu(const std::vector<Sentence>& outputs,
             const std::vector<std::vector<Sentence>>& reference_sets,
             const std::vector<Sentence>& inputs, double alpha, const BleuConfig& cfg) {
    return ibleu_components(bleu(outputs, reference_sets, cfg),
                            self_bleu(outputs, inputs, cfg), alpha);
}

namespace {

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0, na = 0, nb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return dot / std::sqrt(na * nb);
}

}  // namespace

double retrieval_accuracy(const std::vector<std::vector<double>>& encodings,
                          const std::vector<size_t>& cluster_of, uint64_t seed) {
    if (encodings.size() != cluster_of.size())
        throw std::invalid_argument("retrieval: encodings/cluster length mismatch");
    const size_t N = encodings.size();
    for (size_t i = 0; i < N; ++i) {
        double norm = 0;
        for (double v : encodings[i]) norm += v * v;
        if (!(norm > 0.0))
            throw std::invalid_argument("retrieval: zero-norm encoding at index " +
                                        std::to_string(i));
        if (i && encodings[i].size() != encodings[0].size())
            throw std::invalid_argument("retrieval: ragged encodings");
    }
    std::map<size_t, std::vector<size_t>> members;
    for (size_t i = 0; i < N; ++i) members[cluster_of[i]].push_back(i);
    if (members.size() < 2)
        throw std::invalid_argument("retrieval: need at least 2 clusters");

    Rng rng(seed);
    size_t queries = 0, hits = 0;
    for (const auto& [c, m] : members) {
        if (m.size() < 2) continue;  // a singleton's query can never succeed
        const size_t q = m[static_cast<size_t>(rng.below(m.size()))];
        double best = 0;
        size_t best_i = N;
        for (size_t i = 0; i < N; ++i) {
            if (i == q) continue;
            const double s = cosine(encodings[q], encodings[i]);
            if (best_i == N || s > best) {
                best = s;
                best_i = i;
            }
        }
        ++queries;
        if (cluster_of[best_i] == c) ++hits;
    }
    if (queries == 0)
        throw std::invalid_argument("retrieval: every cluster is a singleton");
    return static_cast<double>(hits) / static_cast<double>(queries);
}

json RetrievalReport::to_json() const {
    json rows = json::object();
    const char* enc[3] = {"z_sem", "z_syn", "z"};
    const char* kind[2] = {"paraphrase", "template"};
    for (int e = 0; e < 3; ++e) {
        json row = json::object();
        for (int k = 0; k < 2; ++k) row[kind[k]] = acc[e][k];
        rows[enc[e]] = row;
    }
    return json{{"seed", seed}, {"accuracy", rows}};
}

CorpusEncodings encode_corpus(const std::vector<ParaphraseCluster>& data, const Vocab& vocab,
                              const TextProc& tp, SeparatorModel& model, size_t n_threads) {
    if (data.empty()) throw std::invalid_argument("encode_corpus: empty dataset");
    CorpusEncodings enc;
    for (size_t c = 0; c < data.size(); ++c)
        for (size_t i = 0; i < data[c].questions.size(); ++i) {
            enc.tokens.push_back(data[c].questions[i]);
            enc.para_cluster.push_back(c);
            enc.cluster_id.push_back(data[c].id);
            enc.index_in_cluster.push_back(i);
        }
    const size_t n = enc.tokens.size();
    if (n == 0) throw std::invalid_argument("encode_corpus: no questions");
    enc.z_sem.resize(n);
    enc.z_syn.resize(n);
    enc.z.resize(n);
    enc.codes.resize(n);
    auto encode_range = [&](size_t lo, size_t hi) {
        for (size_t i = lo; i < hi; ++i) {
            LatentPair lp = model.encode_latents(vocab.encode(enc.tokens[i]));
            enc.z_sem[i] = std::move(lp.z_sem);
            enc.z_syn[i] = std::move(lp.z_syn);
            enc.z[i] = std::move(lp.z);
            enc.codes[i] = std::move(lp.codes);
        }
    };
    const size_t workers = std::max<size_t>(1, std::min(n_threads, n));
    if (workers == 1) {
        encode_range(0, n);
    } else {
        std::vector<std::thread> pool;
        for (size_t w = 0; w < workers; ++w) {
            const size_t lo = n * w / workers, hi = n * (w + 1) / workers;
            pool.emplace_back(encode_range, lo, hi);
        }
        for (auto& t : pool) t.join();
    }
    enc.tmpl.resize(n);
    enc.tmpl_cluster.resize(n);
    std::map<std::string, size_t> tmpl_ids;
    for (size_t i = 0; i < n; ++i) {
        enc.tmpl[i] = tp.template_of(enc.tokens[i]).serialize();
        enc.tmpl_cluster[i] = tmpl_ids.emplace(enc.tmpl[i], tmpl_ids.size()).first->second;
    }
    return enc;
}

RetrievalReport retrieval_report(const CorpusEncodings& enc, uint64_t seed) {
    RetrievalReport rep;
    rep.seed = seed;
    const std::vector<std::vector<double>>* encs[3] = {&enc.z_sem, &enc.z_syn, &enc.z};
    const std::vector<size_t>* kinds[2] = {&enc.para_cluster, &enc.tmpl_cluster};
    for (int e = 0; e < 3; ++e)
        for (int k = 0; k < 2; ++k)
            rep.acc[e][k] = retrieval_accuracy(*encs[e], *kinds[k],
                                               derive_seed(seed, e * 2 + k));
    return rep;
}

RetrievalReport retrieval_report(const std::vector<ParaphraseCluster>& data,
                                 const Vocab& vocab, const TextProc& tp,
                                 SeparatorModel& model, uint64_t seed) {
    if (data.empty()) throw std::invalid_argument("retrieval: empty dataset");
    return retrieval_report(encode_corpus(data, vocab, tp, model), seed);
}

namespace {

const std::set<std::string>& wh_words() {
    static const std::set<std::string> s = {"what", "how",  "where", "when", "why",
                                            "which", "who", "whose", "whom"};
    return s;
}

const std::vector<std::string>& prepositions() {
    static const std::vector<std::string> p = {"of", "in", "on", "for", "to",
                                               "with", "at", "from", "by", "about"};
    return p;
}

}  // namespace

std::vector<std::pair<std::string, PropertyExtractor>> standard_properties() {
    std::vector<std::pair<std::string, PropertyExtractor>> props;
    props.emplace_back("wh_word", [](const std::vector<Token>& q) {
        for (const auto& t : q)
            if (wh_words().count(t.lowercased)) return t.lowercased;
        return std::string("none");
    });
    props.emplace_back("wh_position", [](const std::vector<Token>& q) {
        for (size_t i = 0; i < q.size(); ++i)
            if (wh_words().count(q[i].lowercased))
                return std::to_string(std::min<size_t>(i, 4));
        return std::string("none");
    });
    props.emplace_back("preposition", [](const std::vector<Token>& q) {
        for (const auto& t : q)
            for (const auto& p : prepositions())
                if (t.lowercased == p) return p;
        return std::string("none");
    });
    props.emplace_back("length_bucket", [](const std::vector<Token>& q) {
        const size_t n = q.size();
        if (n <= 4) return std::string("short");
        if (n <= 7) return std::string("medium");
        if (n <= 10) return std::string("long");
        return std::string("very_long");
    });
    return props;
}

std::vector<double> code_entropy(const std::vector<std::vector<int>>& codes, size_t K,
                                 const std::vector<std::string>& values) {
    if (codes.empty()) throw std::invalid_argument("code_entropy: empty dataset");
    if (codes.size() != values.size())
        throw std::invalid_argument("code_entropy: codes/values length mismatch");
    const size_t H = codes[0].size();
    std::vector<double> out(H, 0.0);
    for (size_t h = 0; h < H; ++h) {
        // value histogram per code at this head
        std::vector<std::map<std::string, size_t>> hist(K);
        std::vector<size_t> support(K, 0);
        for (size_t i = 0; i < codes.size(); ++i) {
            if (codes[i].size() != H)
                throw std::invalid_argument("code_entropy: ragged code tuples");
            const int c = codes[i][h];
            if (c < 0 || static_cast<size_t>(c) >= K)
                throw std::invalid_argument("code_entropy: code out of range");
            ++hist[c][values[i]];
            ++support[c];
        }
        double sum = 0.0;
        size_t used = 0;
        for (size_t k = 0; k < K; ++k) {
            if (support[k] == 0) continue;  // unused codes carry no distribution
            double ent = 0.0;
            for (const auto& [v, n] : hist[k]) {
                const double p = static_cast<double>(n) / static_cast<double>(support[k]);
                ent -= p * std::log(p);
            }
            sum += ent;
            ++used;
        }
        out[h] = sum / static_cast<double>(used);
    }
    return out;
}

json EntropyReport::to_json() const {
    json heads = json::array();
    for (const auto& row : entropy) {
        json h = json::object();
        for (size_t p = 0; p < properties.size(); ++p) h[properties[p]] = row[p];
        heads.push_back(h);
    }
    return json{{"properties", properties}, {"heads", heads}};
}

EntropyReport head_entropy(const CorpusEncodings& enc, size_t quant_heads, size_t K,
                           const std::vector<std::pair<std::string, PropertyExtractor>>& props) {
    if (props.empty()) throw std::invalid_argument("head_entropy: no properties");
    if (enc.codes.empty()) throw std::invalid_argument("head_entropy: no questions");
    EntropyReport rep;
    rep.entropy.assign(quant_heads, {});
    for (const auto& [name, fn] : props) {
        rep.properties.push_back(name);
        std::vector<std::string> values;
        values.reserve(enc.tokens.size());
        for (const auto& q : enc.tokens) values.push_back(fn(q));
        const auto per_head = code_entropy(enc.codes, K, values);
        for (size_t h = 0; h < per_head.size(); ++h) rep.entropy[h].push_back(per_head[h]);
    }
    return rep;
}

EntropyReport head_entropy(const std::vector<ParaphraseCluster>& data, const Vocab& vocab,
                           SeparatorModel& model,
                           const std::vector<std::pair<std::string, PropertyExtractor>>& props) {
    if (data.empty()) throw std::invalid_argument("head_entropy: empty dataset");
    if (props.empty()) throw std::invalid_argument("head_entropy: no properties");
    const CorpusEncodings enc =
        encode_corpus(data, vocab, TextProc::builtin(), model);
    return head_entropy(enc, model.config().quant_heads, model.config().codebook_size, props);
}

void write_encodings_tsv(std::ostream& os, const CorpusEncodings& enc) {
    os << "id\tcluster\ttemplate\tz_sem\tz_syn\n";
    char buf[32];
    auto joined = [&](const std::vector<double>& v) {
        std::string s;
        for (size_t i = 0; i < v.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%.9g", v[i]);
            if (i) s += ' ';
            s += buf;
        }
        return s;
    };
    for (size_t i = 0; i < enc.tokens.size(); ++i) {
        os << enc.cluster_id[i] << '.' << enc.index_in_cluster[i] << '\t'
           << enc.cluster_id[i] << '\t' << enc.tmpl[i] << '\t'
           << joined(enc.z_sem[i]) << '\t' << joined(enc.z_syn[i]) << '\n';
    }
}

void write_encodings_tsv(std::ostream& os, const std::vector<ParaphraseCluster>& data,
                         const Vocab& vocab, const TextProc& tp, SeparatorModel& model) {
    write_encodings_tsv(os, encode_corpus(data, vocab, tp, model));
}

}  // namespace separator
