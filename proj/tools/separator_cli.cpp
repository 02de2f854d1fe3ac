// Command-line front end: synth | train | generate | eval | analyze.
//
// Every artifact embeds the run's config hash and seeds. Exit codes:
// 0 success, 1 validation error, 2 runtime failure; failures print one
// JSON object {"error":{"type","message"}} as the last stderr line.

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "separator/codepredict.hpp"
#include "separator/corpus.hpp"
#include "separator/errors.hpp"
#include "separator/evalmetrics.hpp"
#include "separator/hash.hpp"
#include "separator/model.hpp"
#include "separator/rng.hpp"
#include "separator/runconfig.hpp"
#include "separator/textproc.hpp"
#include "separator/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace separator;

namespace {

// SEPARATOR_THREADS caps the worker count; default is the hardware limit.
size_t worker_count(size_t items) {
    size_t cap = std::thread::hardware_concurrency();
    if (cap == 0) cap = 1;
    if (const char* s = std::getenv("SEPARATOR_THREADS")) {
        char* end = nullptr;
        const unsigned long long v = std::strtoull(s, &end, 10);
        if (*s == '\0' || *end != '\0' || v == 0)
            throw validation_error("SEPARATOR_THREADS must be a positive integer");
        cap = std::min<size_t>(cap, v);
    }
    return std::max<size_t>(1, std::min(cap, items));
}

// Index-parallel loop; the first worker exception is rethrown after join.
void parallel_for(size_t n, size_t workers, const std::function<void(size_t)>& f) {
    if (workers <= 1 || n <= 1) {
        for (size_t i = 0; i < n; ++i) f(i);
        return;
    }
    std::atomic<size_t> next{0};
    std::atomic<bool> stop{false};
    std::mutex mu;
    std::exception_ptr err;
    auto body = [&] {
        for (size_t i = next.fetch_add(1); i < n && !stop; i = next.fetch_add(1)) {
            try {
                f(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(mu);
                if (!err) err = std::current_exception();
                stop = true;
            }
        }
    };
    std::vector<std::thread> pool;
    for (size_t w = 0; w < workers; ++w) pool.emplace_back(body);
    for (auto& t : pool) t.join();
    if (err) std::rethrow_exception(err);
}

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw validation_error("cannot open " + path);
    std::vector<std::string> lines;
    std::string l;
    while (std::getline(in, l)) {
        if (!l.empty() && l.back() == '\r') l.pop_back();
        lines.push_back(l);
    }
    return lines;
}

json seeds_json(const RunConfig& rc) {
    return json{{"data", rc.seed_data}, {"model", rc.seed_model}, {"eval", rc.seed_eval}};
}

void emit(const json& j) { std::cout << j.dump() << "\n"; }

// ---------------------------------------------------------------------------
// synth

int cmd_synth(size_t clusters, uint64_t seed, const std::string& out,
              std::string lexicon, std::string stopwords, std::string stats_path) {
    if (clusters == 0) throw validation_error("--clusters must be positive");
    if (lexicon.empty()) lexicon = out + ".lexicon.txt";
    if (stopwords.empty()) stopwords = out + ".stopwords.txt";
    if (stats_path.empty()) stats_path = out + ".stats.json";

    TextProc tp = TextProc::builtin();
    const auto data = generate_synthetic_corpus(clusters, seed, tp);
    save_clusters(data, out);
    tp.save_files(stopwords, lexicon);

    size_t questions = 0, mn = SIZE_MAX, mx = 0;
    std::set<std::string> templates, tokens;
    for (const auto& c : data) {
        questions += c.questions.size();
        mn = std::min(mn, c.questions.size());
        mx = std::max(mx, c.questions.size());
        for (const auto& q : c.questions) {
            templates.insert(tp.template_of(q).serialize());
            for (const auto& t : q) tokens.insert(t.lowercased);
        }
    }
    const json params{{"clusters", clusters}, {"seed", seed}};
    const json stats{{"clusters", data.size()},
                     {"questions", questions},
                     {"min_cluster_size", mn},
                     {"max_cluster_size", mx},
                     {"mean_cluster_size", double(questions) / double(data.size())},
                     {"templates", templates.size()},
                     {"distinct_tokens", tokens.size()},
                     {"seeds", json{{"data", seed}}},
                     {"config_hash", fnv1a_hex(params.dump())},
                     {"files", json{{"corpus", out},
                                    {"lexicon", lexicon},
                                    {"stopwords", stopwords}}}};
    write_json_file(stats_path, stats);
    emit(json{{"status", "ok"}, {"command", "synth"}, {"corpus", out},
              {"stats", stats_path}, {"questions", questions}});
    return 0;
}

// ---------------------------------------------------------------------------
// train

// Drops CSV rows past the checkpointed step so a killed run resumes onto a
// consistent log.
void trim_loss_csv(const std::string& path, size_t max_step) {
    if (!fs::exists(path)) return;
    std::vector<std::string> keep;
    {
        std::ifstream in(path);
        std::string line;
        bool first = true;
        while (std::getline(in, line)) {
            if (first) {
                keep.push_back(line);
                first = false;
                continue;
            }
            try {
                if (std::stoull(line.substr(0, line.find(','))) <= max_step)
                    keep.push_back(line);
            } catch (...) {
                // malformed tail from a hard kill: drop
            }
        }
    }
    std::ofstream out(path, std::ios::trunc);
    for (const auto& l : keep) out << l << "\n";
}

json dev_metrics_json(const RunConfig& rc, SeparatorModel& model,
                      const std::vector<ParaphraseCluster>& dev, const Vocab& vocab,
                      const TextProc& tp) {
    json m = json::object();
    size_t qcount = 0;
    for (const auto& c : dev) qcount += c.questions.size();
    m["clusters"] = dev.size();
    m["questions"] = qcount;
    if (dev.empty()) {
        m["note"] = "dev split is empty";
        return m;
    }
    const ExemplarIndex idx = ExemplarIndex::build(dev, tp);
    const ChunkBank bank = build_chunk_bank(dev, tp);
    Rng rng(derive_seed(rc.seed_eval, 1));
    const auto triples = make_triples(dev, idx, vocab, tp, rc.p_td, bank, rng);
    if (triples.empty()) {
        m["note"] = "no usable dev pairs (all clusters are singletons)";
        return m;
    }
    ad::no_grad ng;
    double ly = 0, lc = 0, lk = 0;
    size_t n = 0;
    const size_t B = std::max<size_t>(1, rc.train.batch_size);
    for (size_t i = 0; i < triples.size(); i += B) {
        SeparatorModel::Batch b;
        for (size_t k = i; k < std::min(i + B, triples.size()); ++k) {
            b.x_sem.push_back(triples[k].x_sem);
            b.x_syn.push_back(triples[k].x_syn);
            b.y.push_back(triples[k].y);
        }
        auto f = model.forward(b, false, 1.0, nullptr);
        const double bs = double(b.y.size());
        ly += f.l_y.item() * bs;
        lc += f.l_cstr.item() * bs;
        lk += f.l_kl.item() * bs;
        n += b.y.size();
    }
    m["triples"] = triples.size();
    m["beta"] = 1.0;
    m["l_y"] = ly / double(n);
    m["l_cstr"] = lc / double(n);
    m["l_kl"] = lk / double(n);
    m["l_total"] = (ly + lc + lk) / double(n);
    return m;
}

int cmd_train_model(const RunConfig& rc, size_t max_steps, bool resume) {
    TextProc tp = TextProc::builtin();
    auto clusters = load_clusters(rc.corpus, tp);
    Dataset ds = split_clusters(std::move(clusters), rc.split_weights, rc.split_seed);
    if (ds.train.empty()) throw validation_error("train split is empty");

    const TrainConfig tc = rc.train_effective();
    const std::string ckpt_path = rc.out_dir + "/model.ckpt";
    const std::string csv_path = rc.out_dir + "/loss.csv";
    const bool have_ckpt = fs::exists(ckpt_path);
    if (have_ckpt && !resume)
        throw validation_error(rc.out_dir +
                               " already contains a run; pass --resume to continue it");
    if (resume && !have_ckpt)
        throw validation_error("--resume given but " + ckpt_path + " does not exist");

    Vocab vocab;
    std::unique_ptr<SeparatorModel> model;
    std::unique_ptr<Trainer> trainer;
    if (resume) {
        ModelBundle mb = load_model_bundle(rc.out_dir);
        if (mb.run.config_hash() != rc.config_hash())
            throw validation_error("config mismatch: " + rc.out_dir +
                                   "/config.json has hash " + mb.run.config_hash() +
                                   " but --config has " + rc.config_hash());
        vocab = std::move(mb.vocab);
        model = std::move(mb.model);
        trainer = std::make_unique<Trainer>(*model, ds.train, vocab, tp, tc);
        trainer->load(mb.ckpt);
        trim_loss_csv(csv_path, trainer->step());
    } else {
        std::error_code ec;
        fs::create_directories(rc.out_dir, ec);
        if (ec)
            throw validation_error("cannot create directory " + rc.out_dir + ": " +
                                   ec.message());
        vocab = Vocab::build(ds.train);
        model = std::make_unique<SeparatorModel>(rc.model, vocab.size(), rc.seed_model);
        trainer = std::make_unique<Trainer>(*model, ds.train, vocab, tp, tc);
    }

    const bool csv_exists = fs::exists(csv_path);
    std::ofstream csv(csv_path, resume && csv_exists ? std::ios::app : std::ios::trunc);
    if (!csv) throw validation_error("cannot write " + csv_path);
    if (!(resume && csv_exists)) Trainer::write_csv_header(csv);

    const size_t budget =
        max_steps == 0 ? tc.steps : std::min(max_steps, tc.steps - trainer->step());
    size_t used = 0;
    while (!trainer->done() && used < budget) {
        const size_t chunk = std::min<size_t>(100, budget - used);
        trainer->run(chunk, &csv);
        used += chunk;
        csv.flush();
        if (!trainer->history().empty()) {
            const LossRow& r = trainer->history().back();
            std::fprintf(stderr, "step %zu/%zu l_y=%.4f l_cstr=%.4f l_kl=%.4f beta=%.3f\n",
                         trainer->step(), tc.steps, r.l_y, r.l_cstr, r.l_kl, r.beta);
        }
    }
    csv.close();
    save_model_bundle(rc.out_dir, rc, tp, vocab, *model, trainer.get());
    if (trainer->done()) {
        json dm = dev_metrics_json(rc, *model, ds.dev, vocab, tp);
        dm["config_hash"] = rc.config_hash();
        dm["seeds"] = seeds_json(rc);
        write_json_file(rc.out_dir + "/dev_metrics.json", dm);
    }
    emit(json{{"status", "ok"},
              {"command", "train"},
              {"stage", "model"},
              {"step", trainer->step()},
              {"steps", tc.steps},
              {"done", trainer->done()},
              {"out_dir", rc.out_dir},
              {"config_hash", rc.config_hash()}});
    return 0;
}

int cmd_train_predictor(const RunConfig& rc) {
    ModelBundle mb = load_model_bundle(rc.base_checkpoint);
    auto clusters = load_clusters(rc.corpus, mb.tp);
    Dataset ds = split_clusters(std::move(clusters), rc.split_weights, rc.split_seed);
    if (ds.train.empty()) throw validation_error("train split is empty");

    LicensedCodes lc = build_licensed_codes(ds.train, mb.vocab, *mb.model);
    if (lc.entries.empty())
        throw validation_error(
            "no licensed codes: every train cluster is a singleton");
    std::vector<double> losses;
    CodePredictor pred = train_predictor(lc, *mb.model, rc.predictor_effective(), &losses);
    save_predictor_bundle(rc.out_dir, rc, pred);

    std::ofstream csv(rc.out_dir + "/predictor_loss.csv", std::ios::trunc);
    if (!csv) throw validation_error("cannot write " + rc.out_dir + "/predictor_loss.csv");
    csv << "step,loss\n";
    char buf[64];
    for (size_t i = 0; i < losses.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i + 1, losses[i]);
        csv << buf;
    }
    csv.close();

    // Licensed accuracy on the training entries: predicted tuple appears
    // among the cluster-licensed tuples.
    std::atomic<size_t> hits{0};
    std::vector<int> scratch;
    parallel_for(lc.entries.size(), worker_count(lc.entries.size()), [&](size_t i) {
        ad::no_grad ng;
        const auto got = predict_codes(lc.entries[i].x, pred, *mb.model);
        for (const auto& t : lc.entries[i].tuples)
            if (t == got) {
                hits.fetch_add(1);
                break;
            }
    });
    json m{{"examples", lc.entries.size()},
           {"final_loss", losses.empty() ? 0.0 : losses.back()},
           {"licensed_accuracy", double(hits) / double(lc.entries.size())},
           {"model_hash", lc.model_hash},
           {"base_checkpoint", rc.base_checkpoint},
           {"config_hash", rc.config_hash()},
           {"seeds", seeds_json(rc)}};
    write_json_file(rc.out_dir + "/predictor_metrics.json", m);
    emit(json{{"status", "ok"},
              {"command", "train"},
              {"stage", "predictor"},
              {"examples", lc.entries.size()},
              {"licensed_accuracy", m["licensed_accuracy"]},
              {"out_dir", rc.out_dir},
              {"config_hash", rc.config_hash()}});
    return 0;
}

int cmd_train(const std::string& config_path, size_t max_steps, bool resume) {
    const RunConfig rc = RunConfig::from_file(config_path);
    if (rc.stage == "predictor") return cmd_train_predictor(rc);
    return cmd_train_model(rc, max_steps, resume);
}

// ---------------------------------------------------------------------------
// generate

int cmd_generate(const std::string& ckpt_dir, const std::string& input_path,
                 const std::string& out_path, const std::string& exemplars_path,
                 const std::string& predictor_dir, size_t beam, size_t max_len,
                 std::string sidecar_path) {
    const bool oracle = !exemplars_path.empty();
    if (oracle == !predictor_dir.empty())
        throw validation_error(
            "exactly one of --oracle-exemplars or --predictor is required");
    if (sidecar_path.empty()) sidecar_path = out_path + ".codes.json";

    ModelBundle mb = load_model_bundle(ckpt_dir);
    const ModelConfig& mc = mb.model->config();
    const size_t W = beam ? beam : mc.beam_width;
    const size_t L = max_len ? max_len : mc.max_len;

    const auto inputs = read_lines(input_path);
    if (inputs.empty()) throw validation_error("input file is empty: " + input_path);

    std::vector<std::string> exemplars;
    std::unique_ptr<PredictorBundle> pb;
    const std::string model_hash = model_content_hash(*mb.model);
    if (oracle) {
        exemplars = read_lines(exemplars_path);
        if (exemplars.size() != inputs.size())
            throw validation_error(
                "misaligned files at line " +
                std::to_string(std::min(exemplars.size(), inputs.size()) + 1) + ": " +
                input_path + " has " + std::to_string(inputs.size()) + " lines, " +
                exemplars_path + " has " + std::to_string(exemplars.size()));
    } else {
        pb = std::make_unique<PredictorBundle>(load_predictor_bundle(predictor_dir));
        if (mc.mode != "separator")
            throw validation_error("predicted mode requires a separator-mode model");
        if (pb->pred->model_hash() != model_hash)
            throw validation_error("predictor/model mismatch: predictor was trained on " +
                                   pb->pred->model_hash() + " but the checkpoint is " +
                                   model_hash);
        if (pb->pred->in_dim() != mc.d_sem() + mc.d_zsyn())
            throw validation_error("predictor input dim " +
                                   std::to_string(pb->pred->in_dim()) +
                                   " does not match the model latent dim " +
                                   std::to_string(mc.d_sem() + mc.d_zsyn()));
    }
    for (size_t i = 0; i < inputs.size(); ++i) {
        if (mb.tp.tokenize(inputs[i]).empty())
            throw validation_error("input line " + std::to_string(i + 1) + " is empty");
        if (oracle && mb.tp.tokenize(exemplars[i]).empty())
            throw validation_error("exemplar line " + std::to_string(i + 1) + " is empty");
    }

    const size_t n = inputs.size();
    std::vector<GenResult> results(n);
    std::vector<std::vector<int>> used_codes(n);
    std::vector<std::string> out_lines(n);
    parallel_for(n, worker_count(n), [&](size_t i) {
        ad::no_grad ng;
        const LatentPair lin =
            mb.model->encode_latents(mb.vocab.encode(mb.tp.tokenize(inputs[i])));
        std::vector<double> z_syn;
        if (oracle) {
            LatentPair lex =
                mb.model->encode_latents(mb.vocab.encode(mb.tp.tokenize(exemplars[i])));
            z_syn = std::move(lex.z_syn);
            used_codes[i] = std::move(lex.codes);
        } else {
            std::vector<double> z = lin.z_sem;
            z.insert(z.end(), lin.z_syn.begin(), lin.z_syn.end());
            used_codes[i] = pb->pred->predict(z);
            z_syn = mb.model->quantizer().lookup_codes({used_codes[i]}).values();
        }
        results[i] = mb.model->generate_beam(lin.z_sem, z_syn, W, L);
        out_lines[i] = mb.vocab.decode(results[i].ids);
    });

    std::ofstream out(out_path, std::ios::trunc);
    if (!out) throw validation_error("cannot write " + out_path);
    for (const auto& l : out_lines) out << l << "\n";
    out.close();

    json lines = json::array();
    for (size_t i = 0; i < n; ++i)
        lines.push_back(json{{"codes", used_codes[i]},
                             {"score", results[i].score},
                             {"completed", results[i].completed}});
    json side{{"mode", oracle ? "oracle" : "predicted"},
              {"beam", W},
              {"max_len", L},
              {"checkpoint", ckpt_dir},
              {"checkpoint_hash", model_hash},
              {"config_hash", mb.run.config_hash()},
              {"seeds", seeds_json(mb.run)},
              {"lines", lines}};
    if (!oracle) side["predictor_hash"] = pb->pred->model_hash();
    write_json_file(sidecar_path, side);
    emit(json{{"status", "ok"},
              {"command", "generate"},
              {"mode", side["mode"]},
              {"lines", n},
              {"out", out_path},
              {"sidecar", sidecar_path}});
    return 0;
}

// ---------------------------------------------------------------------------
// eval

Sentence to_sentence(const TextProc& tp, const std::string& line) {
    Sentence s;
    for (const auto& t : tp.tokenize(line)) s.push_back(t.surface);
    return s;
}

int cmd_eval(const std::string& outputs_path, const std::string& refs_path,
             const std::string& inputs_path, double alpha, const std::string& out_path) {
    const auto outs = read_lines(outputs_path);
    const auto refs = read_lines(refs_path);
    const auto ins = read_lines(inputs_path);
    if (outs.size() != refs.size() || outs.size() != ins.size())
        throw validation_error("line counts differ: " + outputs_path + " has " +
                               std::to_string(outs.size()) + ", " + refs_path + " has " +
                               std::to_string(refs.size()) + ", " + inputs_path + " has " +
                               std::to_string(ins.size()));
    if (outs.empty()) throw validation_error("no lines to evaluate");

    const TextProc tp = TextProc::builtin();
    std::vector<Sentence> O, I;
    std::vector<std::vector<Sentence>> R;
    for (size_t i = 0; i < outs.size(); ++i) {
        O.push_back(to_sentence(tp, outs[i]));
        I.push_back(to_sentence(tp, ins[i]));
        std::vector<Sentence> alts;
        size_t start = 0;
        const std::string& line = refs[i];
        while (start <= line.size()) {
            const size_t tab = line.find('\t', start);
            const std::string part =
                line.substr(start, tab == std::string::npos ? tab : tab - start);
            Sentence s = to_sentence(tp, part);
            if (!s.empty()) alts.push_back(std::move(s));
            if (tab == std::string::npos) break;
            start = tab + 1;
        }
        if (alts.empty())
            throw validation_error("refs line " + std::to_string(i + 1) +
                                   " has no reference text");
        R.push_back(std::move(alts));
    }

    const BleuConfig bc;
    const double b = bleu(O, R, bc);
    const double sb = self_bleu(O, I, bc);
    const double ib = ibleu_components(b, sb, alpha);
    const json cfg{{"alpha", alpha},
                   {"eps", bc.eps},
                   {"lowercase", bc.lowercase},
                   {"max_order", bc.max_order}};
    const json result{{"bleu", b},
                      {"self_bleu", sb},
                      {"ibleu", ib},
                      {"alpha", alpha},
                      {"pairs", O.size()},
                      {"config", cfg},
                      {"config_hash", fnv1a_hex(cfg.dump())},
                      {"seeds", json::object()},
                      {"files", json{{"outputs", outputs_path},
                                     {"refs", refs_path},
                                     {"inputs", inputs_path}}}};
    if (!out_path.empty()) write_json_file(out_path, result);
    emit(result);
    return 0;
}

// ---------------------------------------------------------------------------
// analyze

int cmd_analyze(const std::string& ckpt_dir, const std::string& corpus_path,
                const std::string& out_dir, bool seed_given, uint64_t seed_flag) {
    ModelBundle mb = load_model_bundle(ckpt_dir);
    const auto clusters = load_clusters(corpus_path, mb.tp);
    if (clusters.empty()) throw validation_error("corpus has no clusters: " + corpus_path);
    const uint64_t seed = seed_given ? seed_flag : mb.run.seed_eval;

    size_t questions = 0;
    for (const auto& c : clusters) questions += c.questions.size();
    const CorpusEncodings enc =
        encode_corpus(clusters, mb.vocab, mb.tp, *mb.model, worker_count(questions));

    const RetrievalReport rr = retrieval_report(enc, seed);
    json entropy = nullptr;
    if (mb.model->config().mode == "separator") {
        const EntropyReport er =
            head_entropy(enc, mb.model->config().quant_heads,
                         mb.model->config().codebook_size, standard_properties());
        entropy = er.to_json();
    }

    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw validation_error("cannot create directory " + out_dir + ": " + ec.message());
    std::ofstream tsv(out_dir + "/encodings.tsv", std::ios::trunc);
    if (!tsv) throw validation_error("cannot write " + out_dir + "/encodings.tsv");
    write_encodings_tsv(tsv, enc);
    tsv.close();

    const json report{{"retrieval", rr.to_json()},
                      {"head_entropy", entropy},
                      {"clusters", clusters.size()},
                      {"questions", questions},
                      {"corpus", corpus_path},
                      {"checkpoint", ckpt_dir},
                      {"checkpoint_hash", model_content_hash(*mb.model)},
                      {"mode", mb.model->config().mode},
                      {"config_hash", mb.run.config_hash()},
                      {"seeds", json{{"data", mb.run.seed_data},
                                     {"model", mb.run.seed_model},
                                     {"eval", seed}}}};
    write_json_file(out_dir + "/analyze.json", report);
    emit(json{{"status", "ok"},
              {"command", "analyze"},
              {"out_dir", out_dir},
              {"questions", questions},
              {"retrieval", rr.to_json()}});
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"paraphrase generation with separated semantic and syntactic latents"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic paraphrase corpus");
    size_t sy_clusters = 0;
    uint64_t sy_seed = 1;
    std::string sy_out, sy_lex, sy_stop, sy_stats;
    synth->add_option("--clusters", sy_clusters, "number of clusters")->required();
    synth->add_option("--seed", sy_seed, "generator seed");
    synth->add_option("--out", sy_out, "corpus JSONL path")->required();
    synth->add_option("--lexicon", sy_lex, "lexicon path (default: <out>.lexicon.txt)");
    synth->add_option("--stopwords", sy_stop,
                      "stopword list path (default: <out>.stopwords.txt)");
    synth->add_option("--stats", sy_stats, "stats JSON path (default: <out>.stats.json)");

    // train
    auto* train = app.add_subcommand("train", "train a model or code predictor");
    std::string tr_config;
    size_t tr_max_steps = 0;
    bool tr_resume = false;
    train->add_option("--config", tr_config, "run config JSON")->required();
    train->add_option("--max-steps", tr_max_steps,
                      "cap on steps for this invocation (0 = run to completion)");
    train->add_flag("--resume", tr_resume, "continue from the checkpoint in out_dir");

    // generate
    auto* gen = app.add_subcommand("generate", "paraphrase an input file line by line");
    std::string g_ckpt, g_input, g_out, g_ex, g_pred, g_side;
    size_t g_beam = 0, g_maxlen = 0;
    gen->add_option("--checkpoint", g_ckpt, "model run directory")->required();
    gen->add_option("--input", g_input, "input questions, one per line")->required();
    gen->add_option("--out", g_out, "output path")->required();
    gen->add_option("--oracle-exemplars", g_ex, "aligned exemplar file (oracle mode)");
    gen->add_option("--predictor", g_pred, "predictor run directory (predicted mode)");
    gen->add_option("--beam", g_beam, "beam width (default: model config)");
    gen->add_option("--max-len", g_maxlen, "generation cap (default: model config)");
    gen->add_option("--sidecar", g_side, "codes JSON path (default: <out>.codes.json)");

    // eval
    auto* ev = app.add_subcommand("eval", "score outputs with BLEU / Self-BLEU / iBLEU");
    std::string e_out, e_refs, e_in, e_json;
    double e_alpha = 0.7;
    ev->add_option("--outputs", e_out, "system outputs, one per line")->required();
    ev->add_option("--refs", e_refs, "references, tab-separated alternatives per line")
        ->required();
    ev->add_option("--inputs", e_in, "source inputs, one per line")->required();
    ev->add_option("--alpha", e_alpha, "iBLEU interpolation weight");
    ev->add_option("--out", e_json, "also write the metric JSON here");

    // analyze
    auto* an = app.add_subcommand("analyze", "retrieval + head-entropy analysis");
    std::string a_ckpt, a_corpus, a_out;
    uint64_t a_seed = 0;
    an->add_option("--checkpoint", a_ckpt, "model run directory")->required();
    an->add_option("--corpus", a_corpus, "cluster JSONL to analyze")->required();
    an->add_option("--out", a_out, "output directory")->required();
    auto* a_seed_opt = an->add_option("--seed", a_seed, "retrieval sampling seed "
                                      "(default: the run's eval seed)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        std::cerr << json{{"error", {{"type", "validation"}, {"message", e.what()}}}}.dump()
                  << "\n";
        return 1;
    }

    try {
        if (app.got_subcommand(synth))
            return cmd_synth(sy_clusters, sy_seed, sy_out, sy_lex, sy_stop, sy_stats);
        if (app.got_subcommand(train)) return cmd_train(tr_config, tr_max_steps, tr_resume);
        if (app.got_subcommand(gen))
            return cmd_generate(g_ckpt, g_input, g_out, g_ex, g_pred, g_beam, g_maxlen,
                                g_side);
        if (app.got_subcommand(ev)) return cmd_eval(e_out, e_refs, e_in, e_alpha, e_json);
        if (app.got_subcommand(an))
            return cmd_analyze(a_ckpt, a_corpus, a_out, a_seed_opt->count() > 0, a_seed);
        return 0;
    } catch (const validation_error& e) {
        std::cerr << json{{"error", {{"type", "validation"}, {"message", e.what()}}}}.dump()
                  << "\n";
        return 1;
    } catch (const std::invalid_argument& e) {
        std::cerr << json{{"error", {{"type", "validation"}, {"message", e.what()}}}}.dump()
                  << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << json{{"error", {{"type", "runtime"}, {"message", e.what()}}}}.dump()
                  << "\n";
        return 2;
    }
}
