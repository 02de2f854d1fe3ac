#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "separator/corpus.hpp"
#include "separator/errors.hpp"
#include "separator/model.hpp"
#include "separator/trainer.hpp"
#include "trained_fixture.hpp"

using namespace separator;

namespace {

struct TempFile {
    std::string path;
    explicit TempFile(std::string p) : path(std::move(p)) {}
    ~TempFile() { std::remove(path.c_str()); }
};

ModelConfig trainer_tiny_cfg() {
    ModelConfig c;
    c.d_model = 16;
    c.heads = 2;
    c.h_sem = 1;
    c.h_syn = 1;
    c.enc_layers = 1;
    c.dec_layers = 1;
    c.ff_dim = 24;
    c.quant_heads = 2;
    c.codebook_size = 6;
    c.d_code = 4;
    c.max_len = 16;
    return c;
}

struct Toy {
    TextProc tp = TextProc::builtin();
    std::vector<ParaphraseCluster> clusters;
    Vocab vocab;
    Toy(size_t n_clusters, uint64_t seed)
        : clusters(generate_synthetic_corpus(n_clusters, seed, tp)),
          vocab(Vocab::build(clusters)) {}
};

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

bool rows_equal(const LossRow& a, const LossRow& b) {
    return a.step == b.step && a.l_y == b.l_y && a.l_cstr == b.l_cstr &&
           a.l_kl == b.l_kl && a.beta == b.beta && a.l_total == b.l_total;
}

}  // namespace

TEST_CASE("train config json round-trip and defaults") {
    TrainConfig c;
    c.steps = 123;
    c.lr = 0.01;
    c.p_td = 0.4;
    c.seed = 77;
    c.reseed_every = 25;
    TrainConfig back = TrainConfig::from_json(c.to_json());
    CHECK(back.steps == c.steps);
    CHECK(back.batch_size == c.batch_size);
    CHECK(back.lr == c.lr);
    CHECK(back.p_td == c.p_td);
    CHECK(back.seed == c.seed);
    CHECK(back.log_every == c.log_every);
    CHECK(back.reseed_every == c.reseed_every);
    CHECK(back.min_usage == c.min_usage);

    TrainConfig d = TrainConfig::from_json(nlohmann::json::object());
    CHECK(d.steps == TrainConfig{}.steps);
    CHECK(d.lr == TrainConfig{}.lr);
}

TEST_CASE("train config validation reports every error at once") {
    nlohmann::json j{{"steps", 0}, {"lr", -1.0}, {"p_td", 2.0}, {"mystery", 5}};
    try {
        TrainConfig::from_json(j);
        FAIL("expected validation_error");
    } catch (const validation_error& e) {
        const std::string msg = e.what();
        CHECK(msg.find("steps") != std::string::npos);
        CHECK(msg.find("lr") != std::string::npos);
        CHECK(msg.find("p_td") != std::string::npos);
        CHECK(msg.find("mystery") != std::string::npos);
    }
    CHECK_THROWS_AS(TrainConfig::from_json(nlohmann::json::array()), validation_error);
}

TEST_CASE("beta warmup and tau anneal schedules") {
    Toy toy(4, 5);
    ModelConfig mc = trainer_tiny_cfg();  // kl_warmup_frac 0.1, tau 2.0->0.5 over 0.25
    SeparatorModel model(mc, toy.vocab.size(), 1);
    TrainConfig tc;
    tc.steps = 200;
    Trainer tr(model, toy.clusters, toy.vocab, toy.tp, tc);

    // warmup = ceil(0.1 * 200) = 20 steps: beta hits 1 on the 20th step.
    CHECK(tr.beta_at(0) == doctest::Approx(0.05).epsilon(1e-12));
    CHECK(tr.beta_at(9) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(tr.beta_at(19) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(tr.beta_at(20) == 1.0);
    CHECK(tr.beta_at(199) == 1.0);

    // anneal = ceil(0.25 * 200) = 50 steps, linear from tau_start at s=0.
    CHECK(tr.tau_at(0) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(tr.tau_at(25) == doctest::Approx(2.0 - 1.5 * 25.0 / 50.0).epsilon(1e-12));
    CHECK(tr.tau_at(49) == doctest::Approx(2.0 - 1.5 * 49.0 / 50.0).epsilon(1e-12));
    CHECK(tr.tau_at(50) <= 0.0);   // hard assignments from here on
    CHECK(tr.tau_at(199) <= 0.0);

    // Disabled warmup means beta is 1 from the first step.
    ModelConfig mc2 = trainer_tiny_cfg();
    mc2.kl_warmup_frac = 0.0;
    SeparatorModel model2(mc2, toy.vocab.size(), 1);
    Trainer tr2(model2, toy.clusters, toy.vocab, toy.tp, tc);
    CHECK(tr2.beta_at(0) == 1.0);

    // Ceiling on a non-divisible fraction: 30 steps, 10% -> 3 warmup steps.
    TrainConfig tc3;
    tc3.steps = 30;
    SeparatorModel model3(trainer_tiny_cfg(), toy.vocab.size(), 1);
    Trainer tr3(model3, toy.clusters, toy.vocab, toy.tp, tc3);
    CHECK(tr3.beta_at(0) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(tr3.beta_at(2) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("two runs with the same seed produce identical loss sequences") {
    Toy toy(12, 21);
    TrainConfig tc;
    tc.steps = 10;
    tc.batch_size = 8;
    tc.seed = 9;

    std::vector<LossRow> hist[2];
    for (int r = 0; r < 2; ++r) {
        SeparatorModel model(trainer_tiny_cfg(), toy.vocab.size(), 42);
        Trainer tr(model, toy.clusters, toy.vocab, toy.tp, tc);
        tr.run(10);
        hist[r] = tr.history();
    }
    REQUIRE(hist[0].size() == 10);
    REQUIRE(hist[1].size() == 10);
    for (size_t i = 0; i < 10; ++i) CHECK(rows_equal(hist[0][i], hist[1][i]));

    // A different data seed must change the trajectory.
    SeparatorModel model(trainer_tiny_cfg(), toy.vocab.size(), 42);
    TrainConfig tc2 = tc;
    tc2.seed = 10;
    Trainer tr(model, toy.clusters, toy.vocab, toy.tp, tc2);
    tr.run(10);
    bool any_diff = false;
    for (size_t i = 0; i < 10; ++i) any_diff = any_diff || !rows_equal(tr.history()[i], hist[0][i]);
    CHECK(any_diff);
}

TEST_CASE("loss rows satisfy the additive identity") {
    Toy toy(10, 3);
    SeparatorModel model(trainer_tiny_cfg(), toy.vocab.size(), 7);
    TrainConfig tc;
    tc.steps = 15;
    tc.batch_size = 8;
    Trainer tr(model, toy.clusters, toy.vocab, toy.tp, tc);
    tr.run(15);
    REQUIRE(tr.history().size() == 15);
    for (const LossRow& r : tr.history()) {
        CHECK(std::abs(r.l_total - (r.l_y + r.l_cstr + r.beta * r.l_kl)) <= 1e-9);
        CHECK(r.l_y >= 0.0);
        CHECK(r.l_cstr >= 0.0);
        CHECK(r.l_kl >= 0.0);
    }
}

TEST_CASE("csv log format and cadence") {
    std::ostringstream header;
    Trainer::write_csv_header(header);
    CHECK(header.str() == "step,l_y,l_cstr,l_kl,beta,l_total\n");

    Toy toy(6, 13);
    SeparatorModel model(trainer_tiny_cfg(), toy.vocab.size(), 3);
    TrainConfig tc;
    tc.steps = 6;
    tc.batch_size = 4;
    tc.log_every = 2;
    Trainer tr(model, toy.clusters, toy.vocab, toy.tp, tc);
    std::ostringstream csv;
    tr.run(6, &csv);

    std::istringstream lines(csv.str());
    std::string line;
    std::vector<std::string> rows;
    while (std::getline(lines, line))
        if (!line.empty()) rows.push_back(line);
    REQUIRE(rows.size() == 3);  // steps 2, 4, 6

    // %.17g columns parse back to the exact doubles in the history.
    for (size_t i = 0; i < rows.size(); ++i) {
        const LossRow& want = tr.history()[2 * i + 1];
        std::istringstream fields(rows[i]);
        std::string f;
        std::vector<std::string> cols;
        while (std::getline(fields, f, ',')) cols.push_back(f);
        REQUIRE(cols.size() == 6);
        CHECK(std::stoull(cols[0]) == want.step);
        CHECK(std::stod(cols[1]) == want.l_y);
        CHECK(std::stod(cols[2]) == want.l_cstr);
        CHECK(std::stod(cols[3]) == want.l_kl);
        CHECK(std::stod(cols[4]) == want.beta);
        CHECK(std::stod(cols[5]) == want.l_total);
    }
}

TEST_CASE("non-finite loss aborts with diagnostics") {
    Toy toy(6, 31);
    SeparatorModel model(trainer_tiny_cfg(), toy.vocab.size(), 3);
    model.params().find("out.b")->values()[0] =
        std::numeric_limits<double>::quiet_NaN();
    TrainConfig tc;
    tc.steps = 5;
    tc.batch_size = 4;
    Trainer tr(model, toy.clusters, toy.vocab, toy.tp, tc);
    try {
        tr.run(1);
        FAIL("expected runtime_error");
    } catch (const std::runtime_error& e) {
        const std::string msg = e.what();
        CHECK(msg.find("non-finite loss") != std::string::npos);
        CHECK(msg.find("step 1") != std::string::npos);
        CHECK(msg.find("l_y=") != std::string::npos);
    }
}

TEST_CASE("corpus of singleton clusters has no trainable pairs") {
    TextProc tp = TextProc::builtin();
    std::vector<ParaphraseCluster> clusters;
    for (int i = 0; i < 3; ++i) {
        ParaphraseCluster c;
        c.id = "s" + std::to_string(i);
        c.raw = {"what is a cat"};
        c.questions = {tp.tokenize(c.raw[0])};
        clusters.push_back(c);
    }
    Vocab vocab = Vocab::build(clusters);
    SeparatorModel model(trainer_tiny_cfg(), vocab.size(), 3);
    Trainer tr(model, clusters, vocab, tp, TrainConfig{});
    CHECK_THROWS_AS(tr.run(1), validation_error);
}

TEST_CASE("determinism holds across epoch rollover") {
    Toy toy(2, 17);  // few triples per epoch, so 8 steps roll over repeatedly
    TrainConfig tc;
    tc.steps = 8;
    tc.batch_size = 64;
    std::vector<LossRow> hist[2];
    for (int r = 0; r < 2; ++r) {
        SeparatorModel model(trainer_tiny_cfg(), toy.vocab.size(), 2);
        Trainer tr(model, toy.clusters, toy.vocab, toy.tp, tc);
        tr.run(8);
        hist[r] = tr.history();
    }
    REQUIRE(hist[0].size() == 8);
    for (size_t i = 0; i < 8; ++i) CHECK(rows_equal(hist[0][i], hist[1][i]));
}

TEST_CASE("reseed window resets usage counters") {
    Toy toy(8, 23);
    TrainConfig tc;
    tc.steps = 10;
    tc.batch_size = 4;

    auto usage_sum = [](const SeparatorModel& m) {
        double s = 0;
        for (size_t h = 0; h < m.config().quant_heads; ++h)
            for (double u : m.quantizer().usage(h)) s += u;
        return s;
    };

    // reseed_every 0 disables the window: usage accumulates one count per
    // row per head for the whole run.
    SeparatorModel m1(trainer_tiny_cfg(), toy.vocab.size(), 5);
    TrainConfig t1 = tc;
    t1.reseed_every = 0;
    Trainer tr1(m1, toy.clusters, toy.vocab, toy.tp, t1);
    tr1.run(10);
    CHECK(usage_sum(m1) == doctest::Approx(10.0 * 4.0 * 2.0));

    // A window of 5 resets at steps 5 and 10, leaving zero usage at the end.
    SeparatorModel m2(trainer_tiny_cfg(), toy.vocab.size(), 5);
    TrainConfig t2 = tc;
    t2.reseed_every = 5;
    Trainer tr2(m2, toy.clusters, toy.vocab, toy.tp, t2);
    tr2.run(10);
    CHECK(usage_sum(m2) == 0.0);
}

TEST_CASE("resume from checkpoint matches the uninterrupted run") {
    Toy toy(10, 41);
    TrainConfig tc;
    tc.steps = 10;
    tc.batch_size = 8;
    tc.seed = 4;

    SeparatorModel ma(trainer_tiny_cfg(), toy.vocab.size(), 11);
    Trainer tra(ma, toy.clusters, toy.vocab, toy.tp, tc);
    tra.run(6);
    Checkpoint mid;
    tra.save(mid);
    TempFile f1("trainer_mid.ckpt"), f2("trainer_mid2.ckpt");
    mid.save(f1.path);
    Checkpoint::load(f1.path).save(f2.path);
    CHECK(read_file(f1.path) == read_file(f2.path));  // save/load/save stable
    tra.run(4);
    REQUIRE(tra.history().size() == 10);

    SeparatorModel mb(trainer_tiny_cfg(), toy.vocab.size(), 999);  // seed overwritten by load
    Trainer trb(mb, toy.clusters, toy.vocab, toy.tp, tc);
    trb.load(Checkpoint::load(f1.path));
    CHECK(trb.step() == 6);
    trb.run(4);
    REQUIRE(trb.history().size() == 4);
    for (size_t i = 0; i < 4; ++i) CHECK(rows_equal(trb.history()[i], tra.history()[6 + i]));

    // Both trainers now describe the same state, byte for byte.
    Checkpoint enda, endb;
    tra.save(enda);
    trb.save(endb);
    TempFile fa("trainer_end_a.ckpt"), fb("trainer_end_b.ckpt");
    enda.save(fa.path);
    endb.save(fb.path);
    CHECK(read_file(fa.path) == read_file(fb.path));
}

TEST_CASE("run stops at the configured step budget") {
    Toy toy(5, 51);
    SeparatorModel model(trainer_tiny_cfg(), toy.vocab.size(), 2);
    TrainConfig tc;
    tc.steps = 4;
    tc.batch_size = 4;
    Trainer tr(model, toy.clusters, toy.vocab, toy.tp, tc);
    tr.run(100);
    CHECK(tr.step() == 4);
    CHECK(tr.done());
    tr.run(100);
    CHECK(tr.history().size() == 4);
}

TEST_CASE("training smoke: reconstruction loss halves on a 50-cluster corpus") {
    auto& toy = testfix::trained_toy();
    REQUIRE(toy.history.size() == 600);
    const double first = toy.history.front().l_y;
    double best = first;
    for (const LossRow& r : toy.history) best = std::min(best, r.l_y);
    INFO("first l_y ", first, " best l_y ", best);
    CHECK(best <= 0.5 * first);

    // After training, questions that share a surface template should land on
    // identical syntactic codes (at this pinned seed, agreement is total;
    // assert a comfortable qualitative margin).
    std::map<std::string, std::vector<const std::vector<Token>*>> by_template;
    for (const auto& c : toy.clusters)
        for (const auto& q : c.questions)
            by_template[toy.tp.template_of(q).serialize()].push_back(&q);
    size_t checked = 0, matched = 0;
    for (const auto& [key, qs] : by_template) {
        if (qs.size() < 2) continue;
        std::vector<std::vector<int>> codes;
        for (const auto* q : qs)
            codes.push_back(toy.model->encode_latents(toy.vocab.encode(*q)).codes);
        for (size_t i = 1; i < codes.size(); ++i) {
            ++checked;
            if (codes[i] == codes[0]) ++matched;
        }
    }
    REQUIRE(checked >= 50);
    INFO("matched ", matched, " of ", checked, " template pairs");
    CHECK(matched * 10 >= checked * 8);
}
