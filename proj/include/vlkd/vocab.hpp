#pragma once

#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "vlkd/errors.hpp"

namespace vlkd {

enum class TextKind { teacher_text, student_text, decoder_target };

struct TokenSequence {
    std::vector<int> ids;
    TextKind kind = TextKind::student_text;

    int length() const { return static_cast<int>(ids.size()); }
};

inline std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    std::string w;
    while (in >> w) out.push_back(w);
    return out;
}

inline std::string join_words(const std::vector<std::string>& words) {
    std::string out;
    for (size_t i = 0; i < words.size(); ++i) {
        if (i) out += ' ';
        out += words[i];
    }
    return out;
}

// Word-level vocabulary with fixed low ids for the special tokens. The
// student brackets text with BOS/EOS, the teacher with SOS/EOS; MASK is the
// student's infilling token. Word ids are assigned in sorted order so the
// same corpus always yields the same table.
class Vocab {
public:
    static constexpr int pad_id = 0;
    static constexpr int bos_id = 1;
    static constexpr int eos_id = 2;
    static constexpr int mask_id = 3;
    static constexpr int sos_id = 4;
    static constexpr int reserved_count = 5;

    Vocab() = default;

    static Vocab build(const std::vector<std::string>& corpus) {
        if (corpus.empty()) throw ContractError("Vocab::build: empty corpus");
        std::set<std::string> words;
        for (const auto& line : corpus)
            for (const auto& w : split_words(line)) words.insert(w);
        Vocab v;
        v.id_to_word_ = {"<pad>", "<bos>", "<eos>", "<mask>", "<sos>"};
        for (const auto& w : words) {
            v.word_to_id_[w] = static_cast<int>(v.id_to_word_.size());
            v.id_to_word_.push_back(w);
        }
        return v;
    }

    int size() const { return static_cast<int>(id_to_word_.size()); }

    bool contains(const std::string& w) const { return word_to_id_.count(w) > 0; }

    int id_of(const std::string& w) const {
        auto it = word_to_id_.find(w);
        if (it == word_to_id_.end()) throw VocabError("unknown word '" + w + "'");
        return it->second;
    }

    const std::string& word_of(int id) const {
        if (id < 0 || id >= size()) throw VocabError("unknown token id " + std::to_string(id));
        return id_to_word_[static_cast<size_t>(id)];
    }

    static bool is_special(int id) { return id < reserved_count; }

    TokenSequence tokenize(const std::string& text, TextKind kind) const {
        TokenSequence seq;
        seq.kind = kind;
        if (kind == TextKind::teacher_text)
            seq.ids.push_back(sos_id);
        else if (kind == TextKind::student_text)
            seq.ids.push_back(bos_id);
        for (const auto& w : split_words(text)) seq.ids.push_back(id_of(w));
        seq.ids.push_back(eos_id);
        return seq;
    }

    // Inverse of tokenize on in-vocab text: drops the bracketing specials,
    // renders MASK visibly so corrupted sequences stay readable.
    std::string detokenize(const std::vector<int>& ids) const {
        std::vector<std::string> words;
        for (int id : ids) {
            if (id == pad_id || id == bos_id || id == eos_id || id == sos_id) continue;
            words.push_back(word_of(id));
        }
        return join_words(words);
    }

    std::string detokenize(const TokenSequence& seq) const { return detokenize(seq.ids); }

    // words only, specials and masks dropped
    std::vector<std::string> content_words(const std::vector<int>& ids) const {
        std::vector<std::string> words;
        for (int id : ids)
            if (!is_special(id)) words.push_back(word_of(id));
        return words;
    }

private:
    std::map<std::string, int> word_to_id_;
    std::vector<std::string> id_to_word_;
};

} // namespace vlkd
