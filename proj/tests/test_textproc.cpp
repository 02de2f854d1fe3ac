#include <cstdio>

#include "doctest.h"
#include "separator/rng.hpp"
#include "separator/textproc.hpp"

using namespace separator;

namespace {
std::vector<std::string> lowered(const std::vector<Token>& toks) {
    std::vector<std::string> out;
    for (const auto& t : toks) out.push_back(t.lowercased);
    return out;
}
}  // namespace

TEST_CASE("tokenize splits words and punctuation") {
    TextProc tp = TextProc::builtin();
    auto toks = tp.tokenize("How heavy is a moose?");
    CHECK(lowered(toks) ==
          std::vector<std::string>{"how", "heavy", "is", "a", "moose", "?"});
    CHECK(toks[0].surface == "How");
    CHECK(toks[0].is_stopword);
    CHECK_FALSE(toks[4].is_stopword);
}

TEST_CASE("tokenize of empty and whitespace input is empty") {
    TextProc tp = TextProc::builtin();
    CHECK(tp.tokenize("").empty());
    CHECK(tp.tokenize("   \t \n ").empty());
}

TEST_CASE("tokenize splits apostrophes as single tokens") {
    TextProc tp = TextProc::builtin();
    CHECK(lowered(tp.tokenize("don't stop")) ==
          std::vector<std::string>{"don", "'", "t", "stop"});
}

TEST_CASE("tokenize keeps multi-byte codepoints whole") {
    TextProc tp = TextProc::builtin();
    auto toks = tp.tokenize("caf\xc3\xa9 now");
    REQUIRE(toks.size() == 3);
    CHECK(toks[0].lowercased == "caf");
    CHECK(toks[1].surface == "\xc3\xa9");
    CHECK(toks[2].lowercased == "now");
}

TEST_CASE("tokens never contain whitespace and are non-empty") {
    TextProc tp = TextProc::builtin();
    Rng rng(31);
    const std::string alphabet = "abc XY? 9,.'-\t!";
    for (int trial = 0; trial < 200; ++trial) {
        std::string text;
        const size_t len = rng.below(40);
        for (size_t i = 0; i < len; ++i) text.push_back(alphabet[rng.below(alphabet.size())]);
        for (const auto& t : tp.tokenize(text)) {
            CHECK_FALSE(t.surface.empty());
            for (char c : t.surface) {
                CHECK(c != ' ');
                CHECK(c != '\t');
            }
        }
    }
}

TEST_CASE("chunker reproduces the heavy moose labels") {
    TextProc tp = TextProc::builtin();
    auto toks = tp.tokenize("How heavy is a moose ?");
    auto spans = tp.chunk(toks);
    // expected: O(how) ADVP(heavy) O(is a) NP(moose) O(?)
    REQUIRE(spans.size() == 5);
    CHECK(spans[0].label == ChunkLabel::O);
    CHECK(spans[1].label == ChunkLabel::ADVP);
    CHECK(spans[1].start == 1);
    CHECK(spans[1].end == 2);
    CHECK(spans[2].label == ChunkLabel::O);
    CHECK(spans[3].label == ChunkLabel::NP);
    CHECK(spans[3].start == 4);
    CHECK(spans[4].label == ChunkLabel::O);
}

TEST_CASE("chunker labels the parrot question") {
    TextProc tp = TextProc::builtin();
    auto toks = tp.tokenize("What country do parrots live in ?");
    auto spans = tp.chunk(toks);
    std::vector<std::pair<std::string, ChunkLabel>> got;
    for (const auto& s : spans)
        for (size_t i = s.start; i < s.end; ++i) got.emplace_back(toks[i].lowercased, s.label);
    CHECK(got[1] == std::pair<std::string, ChunkLabel>{"country", ChunkLabel::NP});
    CHECK(got[3] == std::pair<std::string, ChunkLabel>{"parrots", ChunkLabel::NP});
    CHECK(got[4] == std::pair<std::string, ChunkLabel>{"live", ChunkLabel::VP});
}

TEST_CASE("all-stopword sentences chunk as O") {
    TextProc tp = TextProc::builtin();
    auto spans = tp.chunk(tp.tokenize("is it that they are ?"));
    for (const auto& s : spans) CHECK(s.label == ChunkLabel::O);
}

TEST_CASE("chunk spans partition the sentence") {
    TextProc tp = TextProc::builtin();
    Rng rng(32);
    const std::vector<std::string> words = {"how",  "heavy", "is",     "a",    "moose",
                                            "fast", "країна","parrots","live", "in",
                                            "?",    "red",   "quickly","the",  "'"};
    for (int trial = 0; trial < 300; ++trial) {
        std::string text;
        const size_t len = 1 + rng.below(12);
        for (size_t i = 0; i < len; ++i) {
            if (!text.empty()) text.push_back(' ');
            text += words[rng.below(words.size())];
        }
        auto toks = tp.tokenize(text);
        auto spans = tp.chunk(toks);
        size_t cursor = 0;
        for (const auto& s : spans) {
            CHECK(s.start == cursor);
            CHECK(s.start < s.end);
            cursor = s.end;
        }
        CHECK(cursor == toks.size());
        // adjacent spans never share a label (they would have merged)
        for (size_t i = 1; i < spans.size(); ++i)
            CHECK(spans[i].label != spans[i - 1].label);
    }
}

TEST_CASE("templates match the published worked examples") {
    TextProc tp = TextProc::builtin();
    CHECK(tp.template_of("How heavy is a moose ?").serialize() == "How ADVP is a NP ?");
    CHECK(tp.template_of("What country do parrots live in ?").serialize() ==
          "What NP do NP VP in ?");
}

TEST_CASE("template of a stopword-only sentence is the sentence") {
    TextProc tp = TextProc::builtin();
    CHECK(tp.template_of("Is it that ?").serialize() == "Is it that ?");
}

TEST_CASE("template equality is byte equality of serializations") {
    TextProc tp = TextProc::builtin();
    Template a = tp.template_of("how heavy is a moose ?");
    Template b = tp.template_of("How tall is a parrot ?");
    Template c = tp.template_of("What country do parrots live in ?");
    CHECK(a == b);
    CHECK_FALSE(a == c);
}

TEST_CASE("synthesize with singleton banks is forced") {
    TextProc tp = TextProc::builtin();
    Rng rng(33);
    Template t = tp.template_of("How heavy is a moose ?");
    ChunkBank bank{{"ADVP", {"fast"}}, {"NP", {"car"}}};
    auto toks = tp.synthesize_exemplar(t, bank, rng);
    CHECK(join_tokens(toks) == "how fast is a car ?");
    CHECK(tp.template_of(toks) == t);
}

TEST_CASE("synthesize without labels returns the template verbatim") {
    TextProc tp = TextProc::builtin();
    Rng rng(34);
    Template t = tp.template_of("Is it that ?");
    auto toks = tp.synthesize_exemplar(t, {}, rng);
    CHECK(join_tokens(toks) == "is it that ?");
}

TEST_CASE("synthesize names the missing label") {
    TextProc tp = TextProc::builtin();
    Rng rng(35);
    Template t = tp.template_of("How heavy is a moose ?");
    try {
        tp.synthesize_exemplar(t, {{"NP", {"car"}}}, rng);
        FAIL("expected error");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("ADVP") != std::string::npos);
    }
}

TEST_CASE("synthesized exemplars keep the template") {
    TextProc tp = TextProc::builtin();
    Rng rng(36);
    // label-consistent pools: every phrase chunks as its own label
    const ChunkBank bank{
        {"NP", {"moose", "car", "parrot", "red car", "mountain lion"}},
        {"VP", {"live", "come", "eat"}},
        {"ADVP", {"fast", "heavy", "quickly", "tall"}},
        {"ADJP", {"afraid", "alone"}},
    };
    const std::vector<std::string> sentences = {
        "How heavy is a moose ?",
        "What country do parrots live in ?",
        "Where do parrots come from ?",
        "Is the car fast ?",
        "Why are they afraid of the dark ?",
        "What is a mountain lion ?",
    };
    for (int trial = 0; trial < 1000; ++trial) {
        const auto& s = sentences[rng.below(sentences.size())];
        Template t = tp.template_of(s);
        auto toks = tp.synthesize_exemplar(t, bank, rng);
        CHECK(tp.template_of(toks) == t);
    }
}

TEST_CASE("template extraction is idempotent on chunk-free templates") {
    TextProc tp = TextProc::builtin();
    for (const std::string s : {"Is it that ?", "Do you ?", "The of a ."}) {
        Template t = tp.template_of(s);
        REQUIRE_FALSE(t.has_labels());
        CHECK(tp.template_of(t.serialize()) == t);
    }
}

TEST_CASE("stopword and lexicon files round-trip") {
    TextProc tp = TextProc::builtin();
    const std::string swp = "tp_stopwords_test.txt";
    const std::string lxp = "tp_lexicon_test.txt";
    tp.save_files(swp, lxp);
    TextProc back = TextProc::from_files(swp, lxp);
    CHECK(back.stopwords() == tp.stopwords());
    CHECK(back.lexicon() == tp.lexicon());
    std::remove(swp.c_str());
    std::remove(lxp.c_str());
}

TEST_CASE("lexicon entries drive chunk labels") {
    TextProc tp({}, {{"zork", ChunkLabel::VP}});
    auto spans = tp.chunk(tp.tokenize("zork zork blat"));
    REQUIRE(spans.size() == 2);
    CHECK(spans[0].label == ChunkLabel::VP);
    CHECK(spans[0].end == 2);  // adjacent same-label tokens merge
    CHECK(spans[1].label == ChunkLabel::NP);
}

TEST_CASE("suffix heuristics cover ly and auxiliary participles") {
    TextProc tp = TextProc::builtin();
    auto toks = tp.tokenize("they are running quickly");
    auto spans = tp.chunk(toks);
    std::vector<ChunkLabel> per_token(toks.size());
    for (const auto& s : spans)
        for (size_t i = s.start; i < s.end; ++i) per_token[i] = s.label;
    CHECK(per_token[2] == ChunkLabel::VP);    // running after "are"
    CHECK(per_token[3] == ChunkLabel::ADVP);  // -ly
    auto spans2 = tp.chunk(tp.tokenize("the wedding"));
    CHECK(spans2.back().label == ChunkLabel::NP);  // -ed without auxiliary
}
