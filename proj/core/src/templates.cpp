#include "cirlab/templates.hpp"

#include "cirlab/errors.hpp"
#include "cirlab/tokenizer.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>

namespace cirlab {

namespace {

constexpr const char* kModPlaceholder = "{MOD}";

std::size_t count_occurrences(const std::string& s, const std::string& needle) {
    std::size_t count = 0, pos = 0;
    while ((pos = s.find(needle, pos)) != std::string::npos) {
        ++count;
        pos += needle.size();
    }
    return count;
}

} // namespace

void TemplateSet::validate() const {
    if (templates.empty()) throw ConfigError("template set is empty");
    for (const auto& t : templates) {
        const bool has_img = t.find(kImageMarker) != std::string::npos;
        const std::size_t mods = count_occurrences(t, kModPlaceholder);
        switch (kind) {
        case TemplateKind::image_modification:
        case TemplateKind::inference_modification:
            if (t.rfind(kImageMarker, 0) != 0) {
                throw ConfigError("modification template must begin with <IMG>: " + t);
            }
            if (mods != 1) {
                throw ConfigError("modification template must contain {MOD} exactly once: " + t);
            }
            break;
        case TemplateKind::caption_summary:
            if (has_img || mods != 0) {
                throw ConfigError("caption summary template must contain neither <IMG> nor {MOD}: " + t);
            }
            break;
        case TemplateKind::stage1_summary:
            if (mods != 0) throw ConfigError("stage-1 prompt must not contain {MOD}: " + t);
            break;
        case TemplateKind::inference_caption:
            if (t.rfind(kImageMarker, 0) != 0) {
                throw ConfigError("inference caption template must begin with <IMG>: " + t);
            }
            if (mods != 0) throw ConfigError("inference caption template must not contain {MOD}: " + t);
            break;
        }
    }
}

const TemplateSet& modification_templates() {
    static const TemplateSet set = [] {
        TemplateSet s;
        s.kind = TemplateKind::image_modification;
        s.templates = {
            "<IMG> The image is conditioned on the following prompt: {MOD}, summarize the image and the "
            "prompt to retrieve a description of the image changed by the condition:",
            "<IMG> Given the image conditioned by the prompt: {MOD}, condense the essence of the image and "
            "the prompt into a single word to fetch a description of the altered image:",
            "<IMG> Using the prompt to condition the image: {MOD}, provide one word that encapsulates the "
            "overall concept of the conditioned image to retrieve its description:",
            "<IMG> Based on the image influenced by this prompt: {MOD}, distill the description of the "
            "conditioned image and the prompt into one word to access the altered description:",
            "<IMG> With the image modified according to the prompt: {MOD}, summarize both the image and the "
            "prompt to obtain a description of the conditioned image:",
            "<IMG> Condition the image with this condition: {MOD}. Summarize the result:",
            "<IMG> Using this prompt: {MOD}, describe the conditioned image:",
            "<IMG> Apply the prompt: {MOD} to the image. Provide one word for the conditioned image:",
            "<IMG> Given this prompt: {MOD}, condense the conditioned image into one word:",
            "<IMG> {MOD}:",
        };
        s.validate();
        return s;
    }();
    return set;
}

const TemplateSet& summary_templates() {
    static const TemplateSet set = [] {
        TemplateSet s;
        s.kind = TemplateKind::caption_summary;
        s.templates = {
            "Summary:",
            "Summarize the caption for retrieval:",
            "A shorter description is:",
            "Shorter caption:",
            "", // caption alone, no instruction
        };
        s.validate();
        return s;
    }();
    return set;
}

std::string sample_template(const TemplateSet& set, Rng& rng) {
    if (set.templates.empty()) throw ConfigError("sample_template: empty template set");
    const int i = rng.uniform_int(static_cast<int>(set.templates.size()));
    return set.templates[static_cast<std::size_t>(i)];
}

std::string format_modification(const std::string& tpl, const std::string& modifier) {
    const auto pos = tpl.find(kModPlaceholder);
    if (pos == std::string::npos) {
        throw ContractError("format_modification: template lacks {MOD}: " + tpl);
    }
    std::string out = tpl;
    out.replace(pos, std::string(kModPlaceholder).size(), modifier);
    return out;
}

std::string format_summary(const std::string& tpl, const std::string& caption) {
    if (tpl.empty()) return caption;
    return caption + " " + tpl;
}

std::string stage1_prompt(Stage1Kind kind) {
    switch (kind) {
    case Stage1Kind::image: return "Summarize the image in one word:";
    case Stage1Kind::caption: return "Summarize the caption in one word:";
    }
    throw ConfigError("stage1_prompt: unknown kind");
}

InferenceTemplates inference_templates(Benchmark benchmark) {
    switch (benchmark) {
    case Benchmark::synthetic_cirr_like:
    case Benchmark::synthetic_circo_like:
        return InferenceTemplates{
            "<IMG> Describe this image in one word:",
            "<IMG> Modify this image with {MOD}, describe the modified image in one word:",
        };
    }
    throw ConfigError("inference_templates: unknown benchmark");
}

std::vector<std::string> template_vocabulary_words() {
    std::set<std::string> words;
    auto harvest = [&](const std::string& text) {
        std::string cleaned;
        cleaned.reserve(text.size());
        for (char c : text) {
            if (c == ':' || c == ',' || c == '.' || c == ';' || c == '!' || c == '?' || c == '"' ||
                c == '{' || c == '}' || c == '<' || c == '>') {
                cleaned.push_back(' ');
            } else {
                cleaned.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
            }
        }
        std::istringstream is(cleaned);
        std::string w;
        while (is >> w) {
            if (w == "mod" || w == "img") continue; // markers, not words
            words.insert(w);
        }
    };
    for (const auto& t : modification_templates().templates) harvest(t);
    for (const auto& t : summary_templates().templates) harvest(t);
    harvest(stage1_prompt(Stage1Kind::image));
    harvest(stage1_prompt(Stage1Kind::caption));
    const auto inf = inference_templates(Benchmark::synthetic_circo_like);
    harvest(inf.caption);
    harvest(inf.modification);
    return {words.begin(), words.end()};
}

TemplateLibrary load_template_library(const std::string& json_path) {
    std::ifstream in(json_path);
    if (!in) throw IoError("cannot open template file: " + json_path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("template file " + json_path + ": " + e.what());
    }
    TemplateLibrary lib;
    if (j.contains("image_modification")) {
        lib.modification.templates = j.at("image_modification").get<std::vector<std::string>>();
    }
    if (j.contains("caption_summary")) {
        lib.summary.templates = j.at("caption_summary").get<std::vector<std::string>>();
    }
    lib.modification.validate();
    lib.summary.validate();
    return lib;
}

} // namespace cirlab
