#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "separator/rng.hpp"

namespace separator {

struct Token {
    std::string surface;     // original slice, no internal whitespace
    std::string lowercased;  // ascii-lowered form used everywhere downstream
    bool is_stopword = false;
};

enum class ChunkLabel { NP, VP, ADVP, ADJP, PP, O };

std::string label_name(ChunkLabel l);
ChunkLabel label_from(const std::string& name);

struct ChunkSpan {
    ChunkLabel label;
    size_t start;  // token index, inclusive
    size_t end;    // token index, exclusive
};

struct TemplateItem {
    bool is_label;
    std::string text;  // lowercased token if verbatim, label name otherwise
};

struct Template {
    std::vector<TemplateItem> items;

    // Canonical form: items single-space joined, labels uppercase, then the
    // first character uppercased. Byte equality of serializations defines
    // template equality.
    std::string serialize() const;
    bool has_labels() const;
    bool operator==(const Template& o) const { return serialize() == o.serialize(); }
};

// Phrase bank for exemplar synthesis: label name -> candidate phrases.
using ChunkBank = std::map<std::string, std::vector<std::string>>;

class TextProc {
  public:
    TextProc(std::set<std::string> stopwords, std::map<std::string, ChunkLabel> lexicon);

    // Compiled-in default stopword list and synthetic-corpus lexicon.
    static TextProc builtin();
    static TextProc from_files(const std::string& stopword_path,
                               const std::string& lexicon_path);
    void save_files(const std::string& stopword_path,
                    const std::string& lexicon_path) const;

    std::vector<Token> tokenize(const std::string& text) const;
    std::vector<ChunkSpan> chunk(const std::vector<Token>& tokens) const;
    Template template_of(const std::vector<Token>& tokens) const;
    Template template_of(const std::string& text) const;
    std::vector<Token> synthesize_exemplar(const Template& tmpl, const ChunkBank& bank,
                                           Rng& rng) const;

    const std::set<std::string>& stopwords() const { return stopwords_; }
    const std::map<std::string, ChunkLabel>& lexicon() const { return lexicon_; }

  private:
    ChunkLabel classify(const std::vector<Token>& tokens, size_t i) const;

    std::set<std::string> stopwords_;
    std::map<std::string, ChunkLabel> lexicon_;
};

std::string join_tokens(const std::vector<Token>& tokens);

}  // namespace separator
