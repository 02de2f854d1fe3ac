#include "separator/textproc.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace separator {

namespace {

bool is_word_char(unsigned char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9');
}

bool is_space_char(unsigned char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r';
}

std::string ascii_lower(const std::string& s) {
    std::string out = s;
    for (char& c : out)
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    return out;
}

bool ends_with(const std::string& s, const std::string& suf) {
    return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
}

const char* kStopwords[] = {
    "a",       "about",   "above",    "after",   "again",      "against",  "all",
    "am",      "an",      "and",      "any",     "are",        "as",       "at",
    "be",      "because", "been",     "before",  "being",      "below",    "between",
    "both",    "but",     "by",       "can",     "could",      "did",      "do",
    "does",    "doing",   "down",     "during",  "each",       "few",      "for",
    "from",    "further", "had",      "has",     "have",       "having",   "he",
    "her",     "here",    "hers",     "herself", "him",        "himself",  "his",
    "how",     "i",       "if",       "in",      "into",       "is",       "it",
    "its",     "itself",  "just",     "me",      "might",      "more",     "most",
    "much",    "must",    "my",       "myself",  "no",         "nor",      "not",
    "now",     "of",      "off",      "on",      "once",       "only",     "or",
    "other",   "our",     "ours",     "out",     "over",       "own",      "same",
    "shall",   "she",     "should",   "so",      "some",       "such",     "than",
    "that",    "the",     "their",    "theirs",  "them",       "then",     "there",
    "these",   "they",    "this",     "those",   "through",    "to",       "too",
    "under",   "until",   "up",       "very",    "was",        "we",       "were",
    "what",    "when",    "where",    "which",   "while",      "who",      "whom",
    "whose",   "why",     "will",     "with",    "would",      "you",      "your",
    "yours",
};

struct LexEntry {
    const char* word;
    ChunkLabel label;
};

// Small tagged lexicon for the synthetic question domain. Anything not
// listed here falls through to the suffix heuristics.
const LexEntry kLexicon[] = {
    {"heavy", ChunkLabel::ADVP},    {"tall", ChunkLabel::ADVP},
    {"long", ChunkLabel::ADVP},     {"fast", ChunkLabel::ADVP},
    {"old", ChunkLabel::ADVP},      {"big", ChunkLabel::ADVP},
    {"wide", ChunkLabel::ADVP},     {"deep", ChunkLabel::ADVP},
    {"expensive", ChunkLabel::ADVP},{"strong", ChunkLabel::ADVP},
    {"hot", ChunkLabel::ADVP},      {"crowded", ChunkLabel::ADVP},
    {"live", ChunkLabel::VP},       {"come", ChunkLabel::VP},
    {"mean", ChunkLabel::VP},       {"define", ChunkLabel::VP},
    {"weigh", ChunkLabel::VP},      {"eat", ChunkLabel::VP},
    {"found", ChunkLabel::VP},      {"tell", ChunkLabel::VP},
    {"afraid", ChunkLabel::ADJP},   {"alone", ChunkLabel::ADJP},
};

const std::set<std::string> kAuxiliaries = {
    "do",   "does", "did",  "is",    "are",  "was",    "were", "am",
    "be",   "been", "being","has",   "have", "had",    "will", "would",
    "can",  "could","shall","should","must", "might",
};

}  // namespace

std::string label_name(ChunkLabel l) {
    switch (l) {
        case ChunkLabel::NP: return "NP";
        case ChunkLabel::VP: return "VP";
        case ChunkLabel::ADVP: return "ADVP";
        case ChunkLabel::ADJP: return "ADJP";
        case ChunkLabel::PP: return "PP";
        case ChunkLabel::O: return "O";
    }
    throw std::logic_error("label_name: bad label");
}

ChunkLabel label_from(const std::string& name) {
    if (name == "NP") return ChunkLabel::NP;
    if (name == "VP") return ChunkLabel::VP;
    if (name == "ADVP") return ChunkLabel::ADVP;
    if (name == "ADJP") return ChunkLabel::ADJP;
    if (name == "PP") return ChunkLabel::PP;
    if (name == "O") return ChunkLabel::O;
    throw std::runtime_error("label_from: unknown chunk label " + name);
}

std::string Template::serialize() const {
    std::string out;
    for (const auto& item : items) {
        if (!out.empty()) out.push_back(' ');
        out += item.text;
    }
    if (!out.empty() && out[0] >= 'a' && out[0] <= 'z')
        out[0] = static_cast<char>(out[0] - 'a' + 'A');
    return out;
}

bool Template::has_labels() const {
    for (const auto& item : items)
        if (item.is_label) return true;
    return false;
}

TextProc::TextProc(std::set<std::string> stopwords, std::map<std::string, ChunkLabel> lexicon)
    : stopwords_(std::move(stopwords)), lexicon_(std::move(lexicon)) {}

TextProc TextProc::builtin() {
    std::set<std::string> sw;
    for (const char* w : kStopwords) sw.insert(w);
    std::map<std::string, ChunkLabel> lex;
    for (const auto& e : kLexicon) lex[e.word] = e.label;
    return TextProc(std::move(sw), std::move(lex));
}

TextProc TextProc::from_files(const std::string& stopword_path,
                              const std::string& lexicon_path) {
    std::ifstream sf(stopword_path);
    if (!sf) throw std::runtime_error("cannot open stopword file " + stopword_path);
    std::set<std::string> sw;
    std::string line;
    while (std::getline(sf, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) sw.insert(line);
    }
    std::ifstream lf(lexicon_path);
    if (!lf) throw std::runtime_error("cannot open lexicon file " + lexicon_path);
    std::map<std::string, ChunkLabel> lex;
    size_t lineno = 0;
    while (std::getline(lf, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const size_t tab = line.find('\t');
        if (tab == std::string::npos)
            throw std::runtime_error("lexicon " + lexicon_path + " line " +
                                     std::to_string(lineno) + ": expected word<TAB>LABEL");
        lex[line.substr(0, tab)] = label_from(line.substr(tab + 1));
    }
    return TextProc(std::move(sw), std::move(lex));
}

void TextProc::save_files(const std::string& stopword_path,
                          const std::string& lexicon_path) const {
    std::ofstream sf(stopword_path, std::ios::trunc);
    if (!sf) throw std::runtime_error("cannot write stopword file " + stopword_path);
    for (const auto& w : stopwords_) sf << w << '\n';
    std::ofstream lf(lexicon_path, std::ios::trunc);
    if (!lf) throw std::runtime_error("cannot write lexicon file " + lexicon_path);
    for (const auto& [w, l] : lexicon_) lf << w << '\t' << label_name(l) << '\n';
}

std::vector<Token> TextProc::tokenize(const std::string& text) const {
    std::vector<Token> out;
    size_t i = 0;
    while (i < text.size()) {
        const unsigned char c = static_cast<unsigned char>(text[i]);
        if (is_space_char(c)) {
            ++i;
            continue;
        }
        std::string surface;
        if (is_word_char(c)) {
            size_t j = i;
            while (j < text.size() && is_word_char(static_cast<unsigned char>(text[j]))) ++j;
            surface = text.substr(i, j - i);
            i = j;
        } else {
            // one token per codepoint; multi-byte UTF-8 sequences stay intact
            size_t len = 1;
            if ((c & 0xE0) == 0xC0) len = 2;
            else if ((c & 0xF0) == 0xE0) len = 3;
            else if ((c & 0xF8) == 0xF0) len = 4;
            len = std::min(len, text.size() - i);
            surface = text.substr(i, len);
            i += len;
        }
        Token t;
        t.surface = surface;
        t.lowercased = ascii_lower(surface);
        t.is_stopword = stopwords_.count(t.lowercased) > 0;
        out.push_back(std::move(t));
    }
    return out;
}

ChunkLabel TextProc::classify(const std::vector<Token>& tokens, size_t i) const {
    const Token& t = tokens[i];
    if (t.is_stopword) return ChunkLabel::O;
    if (!is_word_char(static_cast<unsigned char>(t.lowercased[0]))) return ChunkLabel::O;
    const auto it = lexicon_.find(t.lowercased);
    if (it != lexicon_.end()) return it->second;
    const std::string& w = t.lowercased;
    if (w.size() > 2 && ends_with(w, "ly")) return ChunkLabel::ADVP;
    // participle heuristic needs a real stem: "red" or "king" are not verbs
    const bool looks_participle = (w.size() >= 4 && ends_with(w, "ed")) ||
                                  (w.size() >= 5 && ends_with(w, "ing"));
    if (looks_participle && i > 0 && kAuxiliaries.count(tokens[i - 1].lowercased))
        return ChunkLabel::VP;
    return ChunkLabel::NP;
}

std::vector<ChunkSpan> TextProc::chunk(const std::vector<Token>& tokens) const {
    std::vector<ChunkSpan> spans;
    for (size_t i = 0; i < tokens.size(); ++i) {
        const ChunkLabel lab = classify(tokens, i);
        if (!spans.empty() && spans.back().label == lab && spans.back().end == i)
            spans.back().end = i + 1;
        else
            spans.push_back({lab, i, i + 1});
    }
    return spans;
}

Template TextProc::template_of(const std::vector<Token>& tokens) const {
    Template tmpl;
    for (const ChunkSpan& span : chunk(tokens)) {
        if (span.label == ChunkLabel::O) {
            for (size_t i = span.start; i < span.end; ++i)
                tmpl.items.push_back({false, tokens[i].lowercased});
        } else {
            tmpl.items.push_back({true, label_name(span.label)});
        }
    }
    return tmpl;
}

Template TextProc::template_of(const std::string& text) const {
    return template_of(tokenize(text));
}

std::vector<Token> TextProc::synthesize_exemplar(const Template& tmpl, const ChunkBank& bank,
                                                 Rng& rng) const {
    std::vector<Token> out;
    for (const auto& item : tmpl.items) {
        if (!item.is_label) {
            auto toks = tokenize(item.text);
            out.insert(out.end(), toks.begin(), toks.end());
            continue;
        }
        const auto it = bank.find(item.text);
        if (it == bank.end() || it->second.empty())
            throw std::runtime_error("synthesize_exemplar: no bank entries for label " +
                                     item.text);
        const std::string& phrase = it->second[rng.below(it->second.size())];
        auto toks = tokenize(phrase);
        out.insert(out.end(), toks.begin(), toks.end());
    }
    return out;
}

std::string join_tokens(const std::vector<Token>& tokens) {
    std::string out;
    for (const auto& t : tokens) {
        if (!out.empty()) out.push_back(' ');
        out += t.lowercased;
    }
    return out;
}

}  // namespace separator
