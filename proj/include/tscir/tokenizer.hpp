#pragma once

#include <optional>
#include <string>
#include <vector>

namespace tscir {

// Reserved token ids.
enum ReservedToken : int {
    TOK_PAD = 0,
    TOK_BOS = 1,
    TOK_EOS = 2,
    TOK_PSEUDO = 3,
    TOK_UNK = 4,
};

struct TokenSequence {
    std::vector<int> token_ids;
    std::optional<int> pseudo_slot;
    std::vector<uint8_t> attention_mask;  // 1 = attend, 0 = PAD

    int length() const { return static_cast<int>(token_ids.size()); }
    // Appends PAD tokens (mask 0) up to len.
    void pad_to(int len);
};

// Word-level vocabulary over the closed toy-caption/edit grammar. The word
// list is fixed in code so ids are stable across runs and platforms.
class Vocabulary {
public:
    Vocabulary();

    int id_of(const std::string& word) const;  // TOK_UNK for OOV
    const std::string& word_of(int id) const;
    int size() const { return static_cast<int>(words_.size()); }

    // Lowercased whitespace-split tokenization; "$" marks the pseudo slot.
    // Truncates to max_tokens keeping EOS last.
    TokenSequence tokenize(const std::string& text, int max_tokens) const;

private:
    std::vector<std::string> words_;
    std::vector<std::pair<std::string, int>> index_;  // sorted for lookup
};

struct PromptTemplate {
    std::string pattern;  // contains exactly one "$", optionally one "{T}"

    bool has_modification_slot() const { return pattern.find("{T}") != std::string::npos; }
    void validate() const;

    static PromptTemplate p1() { return {"a photo of $"}; }
    static PromptTemplate p2() { return {"a photo of $ that {T}"}; }
};

TokenSequence expand_template(const PromptTemplate& tmpl,
                              const std::optional<std::string>& modification,
                              const Vocabulary& vocab, int max_tokens);

}  // namespace tscir
