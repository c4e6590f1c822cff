#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace cirlab {

// Marker a template uses to request the image prefix; stripped on encode.
inline constexpr std::string_view kImageMarker = "<IMG>";

// Fixed whitespace vocabulary over the synthetic world's closed grammar.
// Immutable after build; safe to share across threads.
struct Vocab {
    static constexpr int kPad = 0;
    static constexpr int kEos = 1;
    static constexpr int kImg = 2;
    static constexpr int kUnk = 3;

    std::vector<std::string> id_to_token; // reserved tokens first, then sorted words
    std::unordered_map<std::string, int> token_to_id;

    int size() const { return static_cast<int>(id_to_token.size()); }
    int id_of(const std::string& token) const; // kUnk when absent
    const std::string& token_of(int id) const;
};

struct TokenSeq {
    std::vector<int> ids; // always ends with EOS; IMG only at position 0
    bool has_image_prefix = false;

    int length() const { return static_cast<int>(ids.size()); }
};

// Reserved tokens, then the sorted unique union of both word lists.
Vocab build_vocab(const std::vector<std::string>& grammar_words,
                  const std::vector<std::string>& template_words);

// Lowercases, strips template punctuation (:,.;!?"), splits on whitespace,
// maps unknown words to UNK, prepends IMG when image_prefixed, appends EOS.
TokenSeq encode(const std::string& text, const Vocab& vocab, bool image_prefixed);

// encode() after detecting and stripping a leading "<IMG>" marker.
TokenSeq encode_marked(const std::string& text, const Vocab& vocab);

// Space-joined words; reserved ids are skipped.
std::string decode(const TokenSeq& seq, const Vocab& vocab);

} // namespace cirlab
