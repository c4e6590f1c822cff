#include "cirlab/tokenizer.hpp"

#include "cirlab/errors.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>

namespace cirlab {

namespace {

const char* kReserved[] = {"<pad>", "<eos>", "<img>", "<unk>"};

std::string normalize(const std::string& text) {
    std::string out;
    out.reserve(text.size());
    for (char c : text) {
        const unsigned char u = static_cast<unsigned char>(c);
        if (c == ':' || c == ',' || c == '.' || c == ';' || c == '!' || c == '?' || c == '"') {
            continue; // template punctuation carries no content
        }
        out.push_back(static_cast<char>(std::tolower(u)));
    }
    return out;
}

std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> words;
    std::istringstream is(text);
    std::string w;
    while (is >> w) words.push_back(w);
    return words;
}

} // namespace

int Vocab::id_of(const std::string& token) const {
    auto it = token_to_id.find(token);
    return it == token_to_id.end() ? kUnk : it->second;
}

const std::string& Vocab::token_of(int id) const {
    if (id < 0 || id >= size()) throw DimensionError("token_of: id " + std::to_string(id) + " out of range");
    return id_to_token[static_cast<std::size_t>(id)];
}

Vocab build_vocab(const std::vector<std::string>& grammar_words,
                  const std::vector<std::string>& template_words) {
    if (grammar_words.empty() || template_words.empty()) {
        throw ContractError("build_vocab: word lists must be nonempty");
    }
    std::set<std::string> words;
    for (const auto* list : {&grammar_words, &template_words}) {
        for (const auto& raw : *list) {
            for (const auto& w : split_words(normalize(raw))) words.insert(w);
        }
    }
    Vocab v;
    for (const char* r : kReserved) v.id_to_token.emplace_back(r);
    for (const auto& w : words) v.id_to_token.push_back(w);
    for (int i = 0; i < v.size(); ++i) v.token_to_id[v.id_to_token[static_cast<std::size_t>(i)]] = i;
    return v;
}

TokenSeq encode(const std::string& text, const Vocab& vocab, bool image_prefixed) {
    TokenSeq seq;
    seq.has_image_prefix = image_prefixed;
    if (image_prefixed) seq.ids.push_back(Vocab::kImg);
    for (const auto& w : split_words(normalize(text))) {
        seq.ids.push_back(vocab.id_of(w));
    }
    seq.ids.push_back(Vocab::kEos);
    return seq;
}

TokenSeq encode_marked(const std::string& text, const Vocab& vocab) {
    std::string body = text;
    bool image = false;
    const auto pos = body.find(kImageMarker);
    if (pos != std::string::npos) {
        if (pos != 0) throw ContractError("encode_marked: image marker must lead the text: " + text);
        body = body.substr(kImageMarker.size());
        image = true;
    }
    return encode(body, vocab, image);
}

std::string decode(const TokenSeq& seq, const Vocab& vocab) {
    std::string out;
    for (int id : seq.ids) {
        if (id == Vocab::kPad || id == Vocab::kEos || id == Vocab::kImg) continue;
        if (!out.empty()) out.push_back(' ');
        out += vocab.token_of(id);
    }
    return out;
}

} // namespace cirlab
