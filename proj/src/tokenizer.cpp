#include "tscir/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

#include "tscir/errors.hpp"

namespace tscir {

void TokenSequence::pad_to(int len) {
    while (length() < len) {
        token_ids.push_back(TOK_PAD);
        attention_mask.push_back(0);
    }
}

namespace {

// Closed grammar vocabulary: template words, caption words, edit-grammar
// words, and every attribute value. Order is load-bearing for id stability.
const char* kWords[] = {
    // function words
    "a", "photo", "of", "that", "the", "at", "on", "is", "it", "and", "to",
    "background", "change", "make", "move", "set", "color", "shape",
    // shapes
    "circle", "square", "triangle", "cross",
    // colors
    "red", "green", "blue", "yellow", "orange", "purple", "cyan", "magenta",
    // sizes
    "small", "medium", "large",
    // positions
    "center", "left", "right", "top", "bottom",
    // backgrounds
    "white", "gray", "black",
};

}  // namespace

Vocabulary::Vocabulary() {
    words_ = {"<pad>", "<bos>", "<eos>", "$", "<unk>"};
    for (const char* w : kWords) words_.push_back(w);
    for (int i = 0; i < static_cast<int>(words_.size()); ++i) index_.push_back({words_[i], i});
    std::sort(index_.begin(), index_.end());
}

int Vocabulary::id_of(const std::string& word) const {
    auto it = std::lower_bound(index_.begin(), index_.end(),
                               std::pair<std::string, int>{word, -1});
    if (it != index_.end() && it->first == word) return it->second;
    return TOK_UNK;
}

const std::string& Vocabulary::word_of(int id) const {
    if (id < 0 || id >= size()) throw ArgumentError("token id out of range");
    return words_[id];
}

TokenSequence Vocabulary::tokenize(const std::string& text, int max_tokens) const {
    TokenSequence seq;
    seq.token_ids.push_back(TOK_BOS);

    std::string lowered = text;
    std::transform(lowered.begin(), lowered.end(), lowered.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    std::stringstream ss(lowered);
    std::string word;
    while (ss >> word) {
        if (word == "$") {
            if (seq.pseudo_slot)
                throw ArgumentError("multiple '$' placeholders in one sequence");
            seq.pseudo_slot = seq.length();
            seq.token_ids.push_back(TOK_PSEUDO);
        } else {
            seq.token_ids.push_back(id_of(word));
        }
    }
    seq.token_ids.push_back(TOK_EOS);

    if (seq.length() > max_tokens) {
        seq.token_ids.resize(max_tokens);
        seq.token_ids.back() = TOK_EOS;
        if (seq.pseudo_slot && *seq.pseudo_slot >= max_tokens - 1) seq.pseudo_slot.reset();
    }
    seq.attention_mask.assign(seq.token_ids.size(), 1);
    return seq;
}

void PromptTemplate::validate() const {
    size_t first = pattern.find('$');
    if (first == std::string::npos || pattern.find('$', first + 1) != std::string::npos)
        throw ArgumentError("template must contain exactly one '$': " + pattern);
}

TokenSequence expand_template(const PromptTemplate& tmpl,
                              const std::optional<std::string>& modification,
                              const Vocabulary& vocab, int max_tokens) {
    tmpl.validate();
    std::string text = tmpl.pattern;
    if (tmpl.has_modification_slot()) {
        if (!modification || modification->empty())
            throw ArgumentError("template requires a modification string: " + tmpl.pattern);
        text.replace(text.find("{T}"), 3, *modification);
    } else if (modification) {
        throw ArgumentError("template has no modification slot: " + tmpl.pattern);
    }
    TokenSequence seq = vocab.tokenize(text, max_tokens);
    if (!seq.pseudo_slot) throw ArgumentError("template lost its '$' slot after expansion");
    return seq;
}

}  // namespace tscir
