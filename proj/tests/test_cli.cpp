#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "separator/codepredict.hpp"
#include "separator/corpus.hpp"
#include "separator/evalmetrics.hpp"
#include "separator/rng.hpp"
#include "separator/runconfig.hpp"

// Drives the installed binary through std::system; SEPARATOR_CLI_PATH is
// injected by the build.

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using namespace separator;

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void spit(const fs::path& p, const std::string& content) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << content;
}

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> ls;
    std::istringstream in(text);
    std::string l;
    while (std::getline(in, l)) ls.push_back(l);
    return ls;
}

struct CliResult {
    int exit_code = -1;
    std::string out, err;

    // Last stderr line parsed as the error JSON the binary promises.
    json error_json() const {
        auto ls = lines_of(err);
        for (auto it = ls.rbegin(); it != ls.rend(); ++it)
            if (!it->empty()) return json::parse(*it);
        return json();
    }
    json last_stdout_json() const {
        auto ls = lines_of(out);
        for (auto it = ls.rbegin(); it != ls.rend(); ++it)
            if (!it->empty()) return json::parse(*it);
        return json();
    }
};

CliResult run_cli(const std::string& args, const fs::path& workdir,
                  const std::string& env = "") {
    static int counter = 0;
    const fs::path so = workdir / (".stdout." + std::to_string(counter));
    const fs::path se = workdir / (".stderr." + std::to_string(counter));
    ++counter;
    std::string cmd = "cd " + workdir.string() + " && " + env + (env.empty() ? "" : " ") +
                      std::string(SEPARATOR_CLI_PATH) + " " + args + " >" + so.string() +
                      " 2>" + se.string();
    const int rc = std::system(cmd.c_str());
    CliResult r;
    r.exit_code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
    r.out = slurp(so);
    r.err = slurp(se);
    return r;
}

json tiny_model_json() {
    return json{{"d_model", 32},     {"heads", 2},   {"enc_layers", 1}, {"dec_layers", 1},
                {"ff_dim", 64},      {"h_sem", 1},   {"h_syn", 1},      {"quant_heads", 2},
                {"codebook_size", 8}, {"d_code", 8}, {"max_len", 24}};
}

json run_config_json(const std::string& out_dir) {
    return json{{"schema_version", 1},
                {"stage", "model"},
                {"corpus", "corpus.jsonl"},
                {"split", json{{"weights", {0.9, 0.05, 0.05}}, {"seed", 13}}},
                {"out_dir", out_dir},
                {"seeds", json{{"data", 17}, {"model", 17}, {"eval", 3}}},
                {"p_td", 0.3},
                {"model", tiny_model_json()},
                {"train", json{{"steps", 120}, {"batch_size", 32}, {"lr", 0.005}}}};
}

// One shared sandbox: synth corpus + trained base run + trained predictor,
// built through the CLI itself on first use.
struct CliWorld {
    bool ok = false;
    std::string fail;
    fs::path root;
    fs::path corpus, run_a, pred_a, inputs;
    json train_status, pred_status, synth_stats;
};

CliWorld& world() {
    static CliWorld w = [] {
        CliWorld x;
        x.root = fs::temp_directory_path() / ("sepcli_" + std::to_string(::getpid()));
        fs::remove_all(x.root);
        fs::create_directories(x.root);
        x.corpus = x.root / "corpus.jsonl";
        x.run_a = x.root / "run_a";
        x.pred_a = x.root / "pred_a";
        x.inputs = x.root / "inputs.txt";

        auto r = run_cli("synth --clusters 60 --seed 7 --out corpus.jsonl", x.root);
        if (r.exit_code != 0) {
            x.fail = "synth failed: " + r.err;
            return x;
        }
        x.synth_stats = json::parse(slurp(x.root / "corpus.jsonl.stats.json"));

        spit(x.root / "run.json", run_config_json("run_a").dump(2));
        r = run_cli("train --config run.json", x.root);
        if (r.exit_code != 0) {
            x.fail = "train failed: " + r.err;
            return x;
        }
        x.train_status = r.last_stdout_json();

        json pc{{"schema_version", 1},
                {"stage", "predictor"},
                {"base_checkpoint", "run_a"},
                {"corpus", "corpus.jsonl"},
                {"split", json{{"weights", {0.9, 0.05, 0.05}}, {"seed", 13}}},
                {"out_dir", "pred_a"},
                {"seeds", json{{"data", 4}, {"model", 17}, {"eval", 3}}},
                {"model", tiny_model_json()},
                {"predictor",
                 json{{"hidden", 32}, {"steps", 200}, {"batch_size", 25}, {"lr", 0.005}}}};
        spit(x.root / "pred.json", pc.dump(2));
        r = run_cli("train --config pred.json", x.root);
        if (r.exit_code != 0) {
            x.fail = "predictor train failed: " + r.err;
            return x;
        }
        x.pred_status = r.last_stdout_json();

        // Five input questions, one per cluster.
        TextProc tp = TextProc::builtin();
        const auto data = load_clusters(x.corpus.string(), tp);
        std::string in;
        for (size_t c = 0; c < 5 && c < data.size(); ++c) in += data[c].raw[0] + "\n";
        spit(x.inputs, in);
        x.ok = true;
        return x;
    }();
    return w;
}

}  // namespace

TEST_CASE("cli: synth corpus is reproducible and round-trips") {
    CliWorld& w = world();
    REQUIRE_MESSAGE(w.ok, w.fail);

    CHECK(w.synth_stats.at("clusters").get<size_t>() == 60);
    CHECK(w.synth_stats.at("questions").get<size_t>() >= 2 * 60);
    CHECK(w.synth_stats.at("min_cluster_size").get<size_t>() >= 2);
    CHECK(w.synth_stats.at("config_hash").get<std::string>().size() == 16);
    CHECK(w.synth_stats.at("seeds").at("data").get<uint64_t>() == 7);

    auto r = run_cli("synth --clusters 60 --seed 7 --out again.jsonl", w.root);
    REQUIRE(r.exit_code == 0);
    CHECK(slurp(w.root / "again.jsonl") == slurp(w.corpus));

    r = run_cli("synth --clusters 60 --seed 8 --out other.jsonl", w.root);
    REQUIRE(r.exit_code == 0);
    CHECK(slurp(w.root / "other.jsonl") != slurp(w.corpus));

    // Re-ingesting with the emitted lexicon reproduces the in-memory corpus.
    TextProc filed = TextProc::from_files((w.root / "corpus.jsonl.stopwords.txt").string(),
                                          (w.root / "corpus.jsonl.lexicon.txt").string());
    const auto loaded = load_clusters(w.corpus.string(), filed);
    TextProc tp = TextProc::builtin();
    const auto direct = generate_synthetic_corpus(60, 7, tp);
    REQUIRE(loaded.size() == direct.size());
    for (size_t c = 0; c < loaded.size(); ++c) {
        CHECK(loaded[c].id == direct[c].id);
        REQUIRE(loaded[c].raw == direct[c].raw);
        REQUIRE(loaded[c].questions.size() == direct[c].questions.size());
        for (size_t i = 0; i < loaded[c].questions.size(); ++i) {
            REQUIRE(loaded[c].questions[i].size() == direct[c].questions[i].size());
            for (size_t t = 0; t < loaded[c].questions[i].size(); ++t)
                CHECK(loaded[c].questions[i][t].lowercased ==
                      direct[c].questions[i][t].lowercased);
        }
    }
    save_clusters(loaded, (w.root / "reencoded.jsonl").string());
    CHECK(slurp(w.root / "reencoded.jsonl") == slurp(w.corpus));
}

TEST_CASE("cli: train writes a consistent loss log and artifacts") {
    CliWorld& w = world();
    REQUIRE_MESSAGE(w.ok, w.fail);

    CHECK(w.train_status.at("done").get<bool>());
    CHECK(w.train_status.at("step").get<size_t>() == 120);

    const auto csv = lines_of(slurp(w.run_a / "loss.csv"));
    REQUIRE(csv.size() == 121);
    CHECK(csv[0] == "step,l_y,l_cstr,l_kl,beta,l_total");
    for (size_t i = 1; i < csv.size(); ++i) {
        std::istringstream row(csv[i]);
        std::string f;
        std::vector<double> v;
        while (std::getline(row, f, ',')) v.push_back(std::stod(f));
        REQUIRE(v.size() == 6);
        CHECK(size_t(v[0]) == i);
        CHECK(std::abs(v[5] - (v[1] + v[2] + v[4] * v[3])) <= 1e-9);
    }

    // config.json round-trips with a verified hash.
    const RunConfig rc = RunConfig::from_file((w.run_a / "config.json").string());
    const json stored = json::parse(slurp(w.run_a / "config.json"));
    CHECK(stored.at("config_hash").get<std::string>() == rc.config_hash());

    // The checkpoint embeds the same hash and seeds.
    const Checkpoint ck = Checkpoint::load((w.run_a / "model.ckpt").string());
    REQUIRE(ck.meta.contains("artifact"));
    CHECK(ck.meta.at("artifact").at("config_hash").get<std::string>() == rc.config_hash());
    CHECK(ck.meta.at("artifact").at("seeds").at("data").get<uint64_t>() == 17);
    CHECK(ck.meta.at("artifact").at("seeds").at("model").get<uint64_t>() == 17);

    const json dm = json::parse(slurp(w.run_a / "dev_metrics.json"));
    CHECK(dm.at("config_hash").get<std::string>() == rc.config_hash());
    const double lt = dm.at("l_total").get<double>();
    CHECK(std::abs(lt - (dm.at("l_y").get<double>() + dm.at("l_cstr").get<double>() +
                         dm.at("l_kl").get<double>())) <= 1e-9);
}

TEST_CASE("cli: train guards the out_dir and resumes bit-exactly") {
    CliWorld& w = world();
    REQUIRE_MESSAGE(w.ok, w.fail);

    spit(w.root / "run_b.json", run_config_json("run_b").dump(2));
    auto r = run_cli("train --config run_b.json --max-steps 60", w.root);
    REQUIRE(r.exit_code == 0);
    CHECK_FALSE(r.last_stdout_json().at("done").get<bool>());
    CHECK(r.last_stdout_json().at("step").get<size_t>() == 60);

    // A second invocation must refuse without --resume.
    r = run_cli("train --config run_b.json", w.root);
    CHECK(r.exit_code == 1);
    CHECK(r.error_json().at("error").at("type") == "validation");
    CHECK(r.error_json().at("error").at("message").get<std::string>().find("--resume") !=
          std::string::npos);

    r = run_cli("train --config run_b.json --resume", w.root);
    REQUIRE(r.exit_code == 0);
    CHECK(r.last_stdout_json().at("done").get<bool>());

    // Interrupted-and-resumed equals uninterrupted, to the byte.
    CHECK(slurp(w.root / "run_b" / "loss.csv") == slurp(w.run_a / "loss.csv"));
    const auto ck_a = Checkpoint::load((w.run_a / "model.ckpt").string());
    const auto ck_b = Checkpoint::load((w.root / "run_b" / "model.ckpt").string());
    CHECK(checkpoint_hash(ck_a) == checkpoint_hash(ck_b));
    json dm_a = json::parse(slurp(w.run_a / "dev_metrics.json"));
    json dm_b = json::parse(slurp(w.root / "run_b" / "dev_metrics.json"));
    dm_a.erase("config_hash");
    dm_b.erase("config_hash");
    CHECK(dm_a == dm_b);

    r = run_cli("train --config run.json --resume --max-steps 5", w.root);
    CHECK(r.exit_code == 0);  // already done: no-op resume is fine

    spit(w.root / "run_empty.json", run_config_json("run_empty").dump(2));
    r = run_cli("train --config run_empty.json --resume", w.root);
    CHECK(r.exit_code == 1);
    CHECK(r.error_json().at("error").at("message").get<std::string>().find(
              "does not exist") != std::string::npos);
}

TEST_CASE("cli: config validation lists every problem at once") {
    CliWorld& w = world();
    REQUIRE_MESSAGE(w.ok, w.fail);

    const json bad{{"stage", "nope"},
                   {"mystery", 1},
                   {"train", json{{"steps", 0}, {"seed", 5}}}};
    spit(w.root / "bad.json", bad.dump());
    auto r = run_cli("train --config bad.json", w.root);
    CHECK(r.exit_code == 1);
    const std::string msg = r.error_json().at("error").at("message").get<std::string>();
    for (const char* want :
         {"unknown key: mystery", "train.seed is not configurable", "steps must be positive",
          "stage must be", "corpus path is required", "out_dir is required"})
        CHECK_MESSAGE(msg.find(want) != std::string::npos, "missing: ", want, " in ", msg);

    // Editing a config without refreshing its hash is caught.
    json tampered = json::parse(slurp(w.run_a / "config.json"));
    tampered["p_td"] = 0.25;
    spit(w.root / "tampered.json", tampered.dump(2));
    r = run_cli("train --config tampered.json", w.root);
    CHECK(r.exit_code == 1);
    CHECK(r.error_json().at("error").at("message").get<std::string>().find(
              "config hash mismatch") != std::string::npos);
}

TEST_CASE("cli: oracle generation aligns inputs and exemplars") {
    CliWorld& w = world();
    REQUIRE_MESSAGE(w.ok, w.fail);

    auto r = run_cli("generate --checkpoint run_a --input inputs.txt --out gen.txt "
                     "--oracle-exemplars inputs.txt",
                     w.root);
    REQUIRE_MESSAGE(r.exit_code == 0, r.err);
    const auto outs = lines_of(slurp(w.root / "gen.txt"));
    REQUIRE(outs.size() == 5);
    for (const auto& l : outs) CHECK_FALSE(l.empty());

    const json side = json::parse(slurp(w.root / "gen.txt.codes.json"));
    CHECK(side.at("mode") == "oracle");
    CHECK(side.at("checkpoint_hash").get<std::string>().size() == 16);
    CHECK(side.at("config_hash").get<std::string>().size() == 16);
    REQUIRE(side.at("lines").size() == 5);
    for (const auto& ln : side.at("lines")) {
        REQUIRE(ln.at("codes").size() == 2);
        for (const auto& c : ln.at("codes")) {
            CHECK(c.get<int>() >= 0);
            CHECK(c.get<int>() < 8);
        }
        CHECK(ln.at("score").get<double>() <= 0.0);
        CHECK(ln.at("completed").is_boolean());
    }

    spit(w.root / "short.txt", "one question here ?\ntwo questions here ?\n");
    r = run_cli("generate --checkpoint run_a --input inputs.txt --out z.txt "
                "--oracle-exemplars short.txt",
                w.root);
    CHECK(r.exit_code == 1);
    CHECK(r.error_json().at("error").at("message").get<std::string>().find("line 3") !=
          std::string::npos);

    r = run_cli("generate --checkpoint run_a --input inputs.txt --out z.txt", w.root);
    CHECK(r.exit_code == 1);
    CHECK(r.error_json().at("error").at("message").get<std::string>().find("exactly one") !=
          std::string::npos);
    r = run_cli("generate --checkpoint run_a --input inputs.txt --out z.txt "
                "--oracle-exemplars inputs.txt --predictor pred_a",
                w.root);
    CHECK(r.exit_code == 1);

    spit(w.root / "hole.txt", "what is a dog ?\n\nwhat is a cat ?\n");
    r = run_cli("generate --checkpoint run_a --input hole.txt --out z.txt "
                "--oracle-exemplars hole.txt",
                w.root);
    CHECK(r.exit_code == 1);
    CHECK(r.error_json().at("error").at("message").get<std::string>().find("line 2") !=
          std::string::npos);
}

TEST_CASE("cli: predicted generation pins the base checkpoint") {
    CliWorld& w = world();
    REQUIRE_MESSAGE(w.ok, w.fail);

    const json pm = json::parse(slurp(w.pred_a / "predictor_metrics.json"));
    CHECK(pm.at("examples").get<size_t>() >= 100);
    CHECK(pm.at("licensed_accuracy").get<double>() >= 0.5);
    CHECK(pm.at("model_hash").get<std::string>().size() == 16);

    auto r = run_cli("generate --checkpoint run_a --input inputs.txt --out genp.txt "
                     "--predictor pred_a",
                     w.root);
    REQUIRE_MESSAGE(r.exit_code == 0, r.err);
    const json side = json::parse(slurp(w.root / "genp.txt.codes.json"));
    CHECK(side.at("mode") == "predicted");
    CHECK(side.at("predictor_hash") == pm.at("model_hash"));
    for (const auto& ln : side.at("lines")) {
        REQUIRE(ln.at("codes").size() == 2);
        for (const auto& c : ln.at("codes")) {
            CHECK(c.get<int>() >= 0);
            CHECK(c.get<int>() < 8);
        }
    }

    // A different base model must be rejected by hash.
    json other = run_config_json("run_c");
    other["seeds"]["model"] = 18;
    other["train"]["steps"] = 30;
    spit(w.root / "run_c.json", other.dump(2));
    r = run_cli("train --config run_c.json", w.root);
    REQUIRE(r.exit_code == 0);
    r = run_cli("generate --checkpoint run_c --input inputs.txt --out z.txt "
                "--predictor pred_a",
                w.root);
    CHECK(r.exit_code == 1);
    CHECK(r.error_json().at("error").at("message").get<std::string>().find("mismatch") !=
          std::string::npos);
}

TEST_CASE("cli: eval reproduces the identity arithmetic") {
    CliWorld& w = world();
    REQUIRE_MESSAGE(w.ok, w.fail);

    auto r = run_cli("eval --outputs inputs.txt --refs inputs.txt --inputs inputs.txt "
                     "--out metrics.json",
                     w.root);
    REQUIRE_MESSAGE(r.exit_code == 0, r.err);
    const json m = r.last_stdout_json();
    CHECK(m.at("bleu").get<double>() == doctest::Approx(100.0).epsilon(1e-12));
    CHECK(m.at("self_bleu").get<double>() == doctest::Approx(100.0).epsilon(1e-12));
    CHECK(m.at("ibleu").get<double>() == doctest::Approx(40.0).epsilon(1e-12));
    CHECK(m.at("pairs").get<size_t>() == 5);
    CHECK(json::parse(slurp(w.root / "metrics.json")) == m);

    // Tab-separated alternatives: any exact match still scores 100.
    const auto ins = lines_of(slurp(w.inputs));
    std::string refs;
    for (const auto& l : ins) refs += "completely unrelated junk text\t" + l + "\n";
    spit(w.root / "refs.txt", refs);
    r = run_cli("eval --outputs inputs.txt --refs refs.txt --inputs inputs.txt", w.root);
    REQUIRE(r.exit_code == 0);
    CHECK(r.last_stdout_json().at("bleu").get<double>() ==
          doctest::Approx(100.0).epsilon(1e-12));

    spit(w.root / "two.txt", "a b c\nd e f\n");
    r = run_cli("eval --outputs two.txt --refs inputs.txt --inputs inputs.txt", w.root);
    CHECK(r.exit_code == 1);
    CHECK(r.error_json().at("error").at("message").get<std::string>().find(
              "line counts differ") != std::string::npos);

    r = run_cli("eval --outputs inputs.txt --refs inputs.txt --inputs inputs.txt "
                "--alpha 1.5",
                w.root);
    CHECK(r.exit_code == 1);
}

TEST_CASE("cli: analyze emits the report matrix, entropy table, and encodings") {
    CliWorld& w = world();
    REQUIRE_MESSAGE(w.ok, w.fail);

    auto r = run_cli("analyze --checkpoint run_a --corpus corpus.jsonl --out an", w.root);
    REQUIRE_MESSAGE(r.exit_code == 0, r.err);
    const json rep = json::parse(slurp(w.root / "an" / "analyze.json"));

    const json& acc = rep.at("retrieval").at("accuracy");
    REQUIRE(acc.size() == 3);
    for (const char* enc : {"z_sem", "z_syn", "z"}) {
        REQUIRE(acc.contains(enc));
        REQUIRE(acc.at(enc).size() == 2);
        for (const char* kind : {"paraphrase", "template"}) {
            const double a = acc.at(enc).at(kind).get<double>();
            CHECK(a >= 0.0);
            CHECK(a <= 1.0);
        }
    }
    REQUIRE(rep.at("head_entropy").at("heads").size() == 2);
    REQUIRE(rep.at("head_entropy").at("properties").size() == 4);
    for (const auto& h : rep.at("head_entropy").at("heads"))
        for (const auto& [prop, v] : h.items()) CHECK(v.get<double>() >= 0.0);
    CHECK(rep.at("seeds").at("eval").get<uint64_t>() == 3);
    CHECK(rep.at("config_hash").get<std::string>().size() == 16);

    const size_t questions = w.synth_stats.at("questions").get<size_t>();
    CHECK(rep.at("questions").get<size_t>() == questions);
    const auto tsv = lines_of(slurp(w.root / "an" / "encodings.tsv"));
    REQUIRE(tsv.size() == questions + 1);
    CHECK(tsv[0] == "id\tcluster\ttemplate\tz_sem\tz_syn");
    {
        std::istringstream row(tsv[1]);
        std::string col;
        std::vector<std::string> cols;
        while (std::getline(row, col, '\t')) cols.push_back(col);
        REQUIRE(cols.size() == 5);
        auto comps = [](const std::string& s) {
            std::istringstream in(s);
            std::string t;
            size_t n = 0;
            while (in >> t) ++n;
            return n;
        };
        CHECK(comps(cols[3]) == 16);
        CHECK(comps(cols[4]) == 16);
    }

    // Deterministic, and invariant to the worker count.
    r = run_cli("analyze --checkpoint run_a --corpus corpus.jsonl --out an2", w.root,
                "SEPARATOR_THREADS=1");
    REQUIRE(r.exit_code == 0);
    auto r3 = run_cli("analyze --checkpoint run_a --corpus corpus.jsonl --out an3", w.root,
                      "SEPARATOR_THREADS=3");
    REQUIRE(r3.exit_code == 0);
    CHECK(slurp(w.root / "an" / "analyze.json") == slurp(w.root / "an2" / "analyze.json"));
    CHECK(slurp(w.root / "an2" / "analyze.json") == slurp(w.root / "an3" / "analyze.json"));
    CHECK(slurp(w.root / "an2" / "encodings.tsv") == slurp(w.root / "an3" / "encodings.tsv"));

    r = run_cli("analyze --checkpoint run_a --corpus corpus.jsonl --out an_seed --seed 99",
                w.root);
    REQUIRE(r.exit_code == 0);
    CHECK(json::parse(slurp(w.root / "an_seed" / "analyze.json"))
              .at("seeds")
              .at("eval")
              .get<uint64_t>() == 99);
}

TEST_CASE("cli: analyze on an untrained model reads near chance on paraphrases") {
    CliWorld& w = world();
    REQUIRE_MESSAGE(w.ok, w.fail);

    // Random-init model; the codebook gets a random seeding because an
    // untouched one is all zeros and licenses nothing.
    const RunConfig rc = RunConfig::from_file((w.run_a / "config.json").string());
    TextProc tp = TextProc::builtin();
    const auto data = load_clusters(w.corpus.string(), tp);
    const Vocab vocab = Vocab::build(data);
    SeparatorModel model(rc.model, vocab.size(), 2);
    Rng qrng(derive_seed(2, 99));
    std::vector<double> init;
    for (size_t i = 0; i < 32 * model.quantizer().dim(); ++i) init.push_back(qrng.normal());
    model.quantizer().init_from_batch(init, 32, qrng);
    RunConfig rc2 = rc;
    rc2.out_dir = "run_untrained";
    save_model_bundle((w.root / "run_untrained").string(), rc2, tp, vocab, model, nullptr);

    auto r = run_cli("analyze --checkpoint run_untrained --corpus corpus.jsonl --out anu",
                     w.root);
    REQUIRE_MESSAGE(r.exit_code == 0, r.err);
    const json acc =
        json::parse(slurp(w.root / "anu" / "analyze.json")).at("retrieval").at("accuracy");
    // Paraphrase-cluster chance level here is about 0.011; template columns
    // stay high even untrained because template mates share surface tokens.
    for (const char* enc : {"z_sem", "z_syn", "z"})
        CHECK(acc.at(enc).at("paraphrase").get<double>() <= 0.15);
}

TEST_CASE("cli: exit codes separate validation from runtime failures") {
    CliWorld& w = world();
    REQUIRE_MESSAGE(w.ok, w.fail);

    auto r = run_cli("train --config does_not_exist.json", w.root);
    CHECK(r.exit_code == 1);
    CHECK(r.error_json().at("error").at("type") == "validation");

    r = run_cli("frobnicate --fast", w.root);
    CHECK(r.exit_code == 1);
    CHECK(r.error_json().at("error").at("type") == "validation");

    r = run_cli("synth --clusters 10 --seed 1 --out /nonexistent_dir_xyz/c.jsonl", w.root);
    CHECK(r.exit_code == 1);
    CHECK(r.error_json().at("error").at("type") == "validation");

    r = run_cli("analyze --checkpoint run_a --corpus corpus.jsonl --out anx", w.root,
                "SEPARATOR_THREADS=zero");
    CHECK(r.exit_code == 1);
    CHECK(r.error_json().at("error").at("type") == "validation");

    // A corrupted checkpoint is a runtime failure, not a validation error.
    fs::create_directories(w.root / "run_broken");
    for (const char* f : {"config.json", "vocab.txt", "stopwords.txt", "lexicon.txt"})
        fs::copy_file(w.run_a / f, w.root / "run_broken" / f,
                      fs::copy_options::overwrite_existing);
    const std::string bytes = slurp(w.run_a / "model.ckpt");
    spit(w.root / "run_broken" / "model.ckpt", bytes.substr(0, bytes.size() / 2));
    r = run_cli("analyze --checkpoint run_broken --corpus corpus.jsonl --out anb", w.root);
    CHECK(r.exit_code == 2);
    CHECK(r.error_json().at("error").at("type") == "runtime");
}
