#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "separator/codepredict.hpp"
#include "separator/errors.hpp"
#include "trained_fixture.hpp"

using namespace separator;

namespace {

// A tiny separator whose codebook is initialized (but untrained): enough
// for encode_latents to produce codes.
struct TinySep {
    TextProc tp = TextProc::builtin();
    ModelConfig mc;
    Vocab vocab;
    std::unique_ptr<SeparatorModel> model;
    explicit TinySep(const std::vector<ParaphraseCluster>& clusters) {
        mc.d_model = 16;
        mc.heads = 2;
        mc.h_sem = 1;
        mc.h_syn = 1;
        mc.enc_layers = 1;
        mc.dec_layers = 1;
        mc.ff_dim = 24;
        mc.quant_heads = 2;
        mc.codebook_size = 6;
        mc.d_code = 4;
        mc.max_len = 16;
        vocab = Vocab::build(clusters);
        model = std::make_unique<SeparatorModel>(mc, vocab.size(), 3);
        Rng rng(99);
        std::vector<double> flat(12 * model->quantizer().dim());
        for (double& v : flat) v = rng.normal();
        model->quantizer().init_from_batch(flat, 12, rng);
    }
};

std::vector<ParaphraseCluster> two_clusters(const TextProc& tp) {
    std::vector<ParaphraseCluster> cs;
    ParaphraseCluster a;
    a.id = "a";
    a.raw = {"what is the size of a cat", "how big is a cat"};
    for (const auto& r : a.raw) a.questions.push_back(tp.tokenize(r));
    ParaphraseCluster b;
    b.id = "b";
    b.raw = {"where do lions live"};
    b.questions = {tp.tokenize(b.raw[0])};
    cs.push_back(a);
    cs.push_back(b);
    return cs;
}

}  // namespace

TEST_CASE("predictor config round-trip and validation") {
    PredictorConfig c;
    c.hidden = 64;
    c.steps = 77;
    c.lr = 0.01;
    c.seed = 5;
    PredictorConfig back = PredictorConfig::from_json(c.to_json());
    CHECK(back.hidden == c.hidden);
    CHECK(back.steps == c.steps);
    CHECK(back.batch_size == c.batch_size);
    CHECK(back.lr == c.lr);
    CHECK(back.seed == c.seed);

    try {
        PredictorConfig::from_json(nlohmann::json{{"hidden", 0}, {"lr", -2.0}, {"what", 1}});
        FAIL("expected validation_error");
    } catch (const validation_error& e) {
        const std::string msg = e.what();
        CHECK(msg.find("hidden") != std::string::npos);
        CHECK(msg.find("lr") != std::string::npos);
        CHECK(msg.find("what") != std::string::npos);
    }
}

TEST_CASE("checkpoint hash is deterministic and content-sensitive") {
    TextProc tp = TextProc::builtin();
    auto clusters = two_clusters(tp);
    TinySep sep(clusters);
    const std::string h1 = model_content_hash(*sep.model);
    const std::string h2 = model_content_hash(*sep.model);
    CHECK(h1 == h2);
    CHECK(h1.size() == 16);
    sep.model->params().find("out.b")->values()[0] += 1e-9;
    CHECK(model_content_hash(*sep.model) != h1);
}

TEST_CASE("licensed codes follow the cluster definition") {
    TextProc tp = TextProc::builtin();
    auto clusters = two_clusters(tp);
    TinySep sep(clusters);
    LicensedCodes lc = build_licensed_codes(clusters, sep.vocab, *sep.model);

    CHECK(lc.model_hash == model_content_hash(*sep.model));
    // The singleton cluster contributes nothing; the pair contributes both
    // directions.
    REQUIRE(lc.entries.size() == 2);
    for (const auto& e : lc.entries) CHECK(e.cluster == 0);

    // Each question licenses exactly the other's tuple, and the tuples
    // re-derive from encode_latents exactly.
    const auto ids0 = sep.vocab.encode(clusters[0].questions[0]);
    const auto ids1 = sep.vocab.encode(clusters[0].questions[1]);
    const auto c0 = sep.model->encode_latents(ids0).codes;
    const auto c1 = sep.model->encode_latents(ids1).codes;
    REQUIRE(lc.entries[0].tuples.size() == 1);
    REQUIRE(lc.entries[1].tuples.size() == 1);
    CHECK(lc.entries[0].x == ids0);
    CHECK(lc.entries[0].tuples[0] == c1);
    CHECK(lc.entries[1].x == ids1);
    CHECK(lc.entries[1].tuples[0] == c0);
}

TEST_CASE("licensed target distributions") {
    // One tuple -> one-hot per head.
    auto t = licensed_target({{2, 1}}, 2, 8);
    REQUIRE(t.size() == 16);
    for (size_t k = 0; k < 8; ++k) {
        CHECK(t[k] == (k == 2 ? 1.0 : 0.0));
        CHECK(t[8 + k] == (k == 1 ? 1.0 : 0.0));
    }

    // Head values {2,7} -> 0.5 at each; repeats collapse to the set.
    t = licensed_target({{2, 0}, {7, 0}, {2, 0}}, 2, 8);
    for (size_t k = 0; k < 8; ++k)
        CHECK(t[k] == ((k == 2 || k == 7) ? 0.5 : 0.0));
    CHECK(t[8] == 1.0);

    CHECK_THROWS_AS(licensed_target({}, 2, 8), std::invalid_argument);
    CHECK_THROWS_AS(licensed_target({{1}}, 2, 8), std::invalid_argument);
    CHECK_THROWS_AS(licensed_target({{8, 0}}, 2, 8), std::invalid_argument);
}

TEST_CASE("per-head probabilities normalize for every input") {
    CodePredictor pred(10, 3, 5, 32, 7);
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> z(10);
        for (double& v : z) v = rng.normal(0.0, 3.0);
        auto probs = pred.probabilities(z);
        REQUIRE(probs.size() == 3);
        for (const auto& p : probs) {
            REQUIRE(p.size() == 5);
            double s = 0;
            for (double v : p) {
                CHECK(v >= 0.0);
                s += v;
            }
            CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
        }
        auto codes = pred.predict(z);
        REQUIRE(codes.size() == 3);
        for (int c : codes) {
            CHECK(c >= 0);
            CHECK(c < 5);
        }
    }
}

TEST_CASE("uniform logits tie-break to code zero") {
    CodePredictor pred(6, 2, 4, 16, 3);
    for (const char* n : {"out.w", "out.b"})
        for (double& v : pred.params().find(n)->values()) v = 0.0;
    Rng rng(5);
    std::vector<double> z(6);
    for (double& v : z) v = rng.normal();
    auto codes = pred.predict(z);
    CHECK(codes == std::vector<int>{0, 0});
}

TEST_CASE("argmax and probabilities are invariant to per-head logit shifts") {
    CodePredictor pred(6, 2, 4, 16, 9);
    Rng rng(13);
    std::vector<double> z(6);
    for (double& v : z) v = rng.normal();
    const auto codes = pred.predict(z);
    const auto probs = pred.probabilities(z);
    // Shift every logit of head 0 by a constant via its bias block.
    for (size_t k = 0; k < 4; ++k) pred.params().find("out.b")->values()[k] += 3.7;
    CHECK(pred.predict(z) == codes);
    const auto probs2 = pred.probabilities(z);
    for (size_t k = 0; k < 4; ++k)
        CHECK(probs2[0][k] == doctest::Approx(probs[0][k]).epsilon(1e-9));
}

TEST_CASE("separable task by construction reaches 0.9 accuracy") {
    // Marker m in {0..3} is encoded one-hot in the input with mild noise;
    // the licensed tuple is a fixed function of m. The predictor must
    // recover that mapping.
    const size_t heads = 2, K = 6, in_dim = 8, n_per = 25;
    PredictorDataset ds;
    ds.in_dim = in_dim;
    ds.heads = heads;
    ds.K = K;
    Rng rng(23);
    std::vector<std::vector<int>> want;
    for (size_t m = 0; m < 4; ++m) {
        const std::vector<std::vector<int>> tuple = {
            {static_cast<int>(m % K), static_cast<int>((2 * m + 1) % K)}};
        for (size_t i = 0; i < n_per; ++i) {
            std::vector<double> in(in_dim, 0.0);
            in[m] = 1.0;
            for (double& v : in) v += rng.normal(0.0, 0.05);
            ds.inputs.push_back(in);
            ds.targets.push_back(licensed_target(tuple, heads, K));
            want.push_back(tuple[0]);
        }
    }
    PredictorConfig cfg;
    cfg.hidden = 32;
    cfg.steps = 300;
    cfg.batch_size = 25;
    cfg.lr = 0.005;
    cfg.seed = 4;
    std::vector<double> losses;
    CodePredictor pred = train_predictor(ds, cfg, &losses);
    REQUIRE(losses.size() == cfg.steps);
    CHECK(losses.back() < losses.front());
    size_t hit = 0;
    for (size_t i = 0; i < ds.inputs.size(); ++i)
        if (pred.predict(ds.inputs[i]) == want[i]) ++hit;
    INFO("hits ", hit, " of ", ds.inputs.size());
    CHECK(hit * 10 >= ds.inputs.size() * 9);
}

TEST_CASE("predictor training is deterministic in the seed") {
    const size_t in_dim = 5;
    PredictorDataset ds;
    ds.in_dim = in_dim;
    ds.heads = 2;
    ds.K = 4;
    Rng rng(31);
    for (int i = 0; i < 40; ++i) {
        std::vector<double> in(in_dim);
        for (double& v : in) v = rng.normal();
        ds.inputs.push_back(in);
        ds.targets.push_back(
            licensed_target({{i % 4, (i / 2) % 4}}, ds.heads, ds.K));
    }
    PredictorConfig cfg;
    cfg.hidden = 16;
    cfg.steps = 50;
    cfg.seed = 8;
    std::vector<double> la, lb;
    CodePredictor a = train_predictor(ds, cfg, &la);
    CodePredictor b = train_predictor(ds, cfg, &lb);
    CHECK(la == lb);
    for (const auto& [name, t] : a.params().items())
        CHECK(t.values() == b.params().find(name)->values());

    PredictorConfig cfg2 = cfg;
    cfg2.seed = 9;
    std::vector<double> lc;
    train_predictor(ds, cfg2, &lc);
    CHECK(la != lc);
}

TEST_CASE("predictor checkpoint round-trip") {
    CodePredictor pred(7, 2, 5, 24, 77);
    pred.set_model_hash("deadbeef01234567");
    Checkpoint ck;
    pred.save(ck);
    CodePredictor back = CodePredictor::load(ck);
    CHECK(back.in_dim() == 7);
    CHECK(back.heads() == 2);
    CHECK(back.K() == 5);
    CHECK(back.hidden() == 24);
    CHECK(back.model_hash() == "deadbeef01234567");
    Rng rng(3);
    std::vector<double> z(7);
    for (double& v : z) v = rng.normal();
    CHECK(pred.predict(z) == back.predict(z));
    CHECK(pred.probabilities(z) == back.probabilities(z));
}

TEST_CASE("trained predictor on the toy separator stays frozen and accurate") {
    auto& toy = testfix::trained_toy();
    const std::string before = model_content_hash(*toy.model);

    LicensedCodes lc = build_licensed_codes(toy.clusters, toy.vocab, *toy.model);
    REQUIRE(!lc.entries.empty());
    CHECK(lc.model_hash == before);

    PredictorConfig cfg;
    cfg.hidden = 64;
    cfg.steps = 400;
    cfg.batch_size = 32;
    cfg.lr = 0.005;
    cfg.seed = 6;
    CodePredictor pred = train_predictor(lc, *toy.model, cfg);
    CHECK(pred.model_hash() == before);

    // Frozen-model contract: nothing in the pipeline touched the separator.
    CHECK(model_content_hash(*toy.model) == before);

    // Per-head top-1 licensed accuracy, far above the 1/K = 0.125 chance.
    size_t hit = 0, total = 0;
    for (const auto& e : lc.entries) {
        const auto codes = predict_codes(e.x, pred, *toy.model);
        for (size_t h = 0; h < codes.size(); ++h) {
            std::set<int> licensed;
            for (const auto& t : e.tuples) licensed.insert(t[h]);
            ++total;
            if (licensed.count(codes[h])) ++hit;
        }
    }
    const double acc = static_cast<double>(hit) / static_cast<double>(total);
    INFO("licensed accuracy ", acc);
    CHECK(acc >= 0.625);  // 5x chance, the acceptance bar for the full preset

    // End to end: predicted codes drive generation through the frozen
    // codebooks and decoder.
    const auto& q = toy.clusters[0].questions[0];
    const auto ids = toy.vocab.encode(q);
    LatentPair lp = toy.model->encode_latents(ids);
    const auto codes = predict_codes(ids, pred, *toy.model);
    REQUIRE(codes.size() == toy.model->config().quant_heads);
    for (int c : codes) {
        CHECK(c >= 0);
        CHECK(c < static_cast<int>(toy.model->config().codebook_size));
    }
    const auto z_syn = toy.model->quantizer().lookup_codes({codes}).values();
    auto gen = toy.model->generate_beam(lp.z_sem, z_syn, 4, 24);
    CHECK(!gen.ids.empty());
}
