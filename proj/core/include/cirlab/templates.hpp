#pragma once

#include "cirlab/rng.hpp"

#include <string>
#include <vector>

namespace cirlab {

enum class TemplateKind {
    image_modification, // starts with <IMG>, contains {MOD} exactly once
    caption_summary,    // plain suffix appended after a caption
    stage1_summary,
    inference_caption,
    inference_modification,
};

enum class Benchmark {
    synthetic_cirr_like,
    synthetic_circo_like,
};

struct TemplateSet {
    TemplateKind kind;
    std::vector<std::string> templates;

    // Enforces the placeholder rules for this kind; ConfigError on violation.
    void validate() const;
};

// Built-in training sets: 10 image-modification templates and 5 caption
// summaries (including the empty suffix).
const TemplateSet& modification_templates();
const TemplateSet& summary_templates();

// Uniform choice; ConfigError on an empty set.
std::string sample_template(const TemplateSet& set, Rng& rng);

// Replaces {MOD} with the modifier verbatim; the <IMG> marker stays in place
// for the tokenizer. ContractError when the placeholder is missing.
std::string format_modification(const std::string& tpl, const std::string& modifier);

// Caption followed by the summary suffix ("" keeps the caption alone).
std::string format_summary(const std::string& tpl, const std::string& caption);

enum class Stage1Kind { image, caption };
std::string stage1_prompt(Stage1Kind kind);

struct InferenceTemplates {
    std::string caption;      // embeds index images
    std::string modification; // composes (image, instruction) queries
};
InferenceTemplates inference_templates(Benchmark benchmark);

// Words used across every built-in template and prompt; feeds build_vocab.
std::vector<std::string> template_vocabulary_words();

// Override the two training sets from a JSON file:
//   {"image_modification": ["..."], "caption_summary": ["..."]}
// Missing keys keep the built-in set. Sets are validated after load.
struct TemplateLibrary {
    TemplateSet modification = modification_templates();
    TemplateSet summary = summary_templates();
};
TemplateLibrary load_template_library(const std::string& json_path);

} // namespace cirlab
