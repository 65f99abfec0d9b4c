#include "annobench/prompt.hpp"

#include <cstdio>
#include <stdexcept>

namespace annobench {

PromptStyle PromptStyle::persona(std::string t) {
    if (t.empty()) throw std::invalid_argument("persona text must be non-empty");
    return {PromptStyleVariant::Persona, std::move(t)};
}

PromptStyle PromptStyle::chain_of_thought(std::string t) {
    if (t.empty()) throw std::invalid_argument("chain-of-thought text must be non-empty");
    return {PromptStyleVariant::ChainOfThought, std::move(t)};
}

const char* PromptStyle::name() const {
    switch (variant) {
        case PromptStyleVariant::Standard: return "standard";
        case PromptStyleVariant::Persona: return "persona";
        case PromptStyleVariant::ChainOfThought: return "cot";
    }
    return "?";
}

PromptStyle prompt_style_from_name(const std::string& name, const std::string& text) {
    if (name == "standard") return PromptStyle::standard();
    if (name == "persona") return text.empty() ? PromptStyle::persona() : PromptStyle::persona(text);
    if (name == "cot" || name == "chain_of_thought")
        return text.empty() ? PromptStyle::chain_of_thought()
                            : PromptStyle::chain_of_thought(text);
    throw std::invalid_argument("unknown prompt style '" + name + "'");
}

LearningApproach LearningApproach::few_shot(std::optional<int> max) {
    if (max && *max < 1) throw std::invalid_argument("few-shot max_examples must be >= 1");
    return {LearningApproachVariant::FewShot, max};
}

const char* LearningApproach::name() const {
    return variant == LearningApproachVariant::ZeroShot ? "zero-shot" : "few-shot";
}

LearningApproach learning_approach_from_name(const std::string& name,
                                             std::optional<int> max_examples) {
    if (name == "zero-shot" || name == "zero_shot") return LearningApproach::zero_shot();
    if (name == "few-shot" || name == "few_shot") return LearningApproach::few_shot(max_examples);
    throw std::invalid_argument("unknown learning approach '" + name + "'");
}

namespace {

std::string json_escape(const std::string& s) {
    std::string out;
    out.reserve(s.size() + 2);
    for (char c : s) {
        switch (c) {
            case '"': out += "\\\""; break;
            case '\\': out += "\\\\"; break;
            case '\n': out += "\\n"; break;
            case '\r': out += "\\r"; break;
            case '\t': out += "\\t"; break;
            default:
                if (static_cast<unsigned char>(c) < 0x20) {
                    char buf[8];
                    std::snprintf(buf, sizeof(buf), "\\u%04x", c);
                    out += buf;
                } else {
                    out += c;
                }
        }
    }
    return out;
}

std::string demonstration_label(const AnnotationItem& item, const AnnotationValue& label) {
    // Demonstrations mirror the requested output envelope exactly:
    // categorical labels quoted, binary/Likert integers bare.
    if (std::holds_alternative<std::string>(label))
        return "{\"response\": \"" + json_escape(std::get<std::string>(label)) + "\"}";
    (void)item;
    return "{\"response\": " + std::to_string(std::get<int>(label)) + "}";
}

}  // namespace

std::string response_constraint_line(const ItemKind& kind) {
    if (std::holds_alternative<BinaryKind>(kind))
        return "Respond with 1 if \"Yes\" or 0 if \"No\".";
    if (const auto* cat = std::get_if<CategoricalKind>(&kind)) {
        std::string line = "Respond with ";
        for (size_t i = 0; i < cat->options.size(); ++i) {
            if (i > 0) line += ", or ";
            line += cat->options[i];
        }
        line += ".";
        return line;
    }
    const auto& lik = std::get<LikertKind>(kind);
    return "Respond with a whole number from " + std::to_string(lik.min) + " to " +
           std::to_string(lik.max) + " (inclusive), where " + std::to_string(lik.min) +
           " means lowest and " + std::to_string(lik.max) + " means highest.";
}

std::string render_examples_block(const AnnotationItem& item, std::optional<int> limit) {
    if (item.examples.empty())
        throw std::invalid_argument("few-shot requested but codebook has no examples for item '" +
                                    item.id + "'");
    size_t n = item.examples.size();
    if (limit) n = std::min(n, static_cast<size_t>(*limit));
    std::string out;
    for (size_t i = 0; i < n; ++i) {
        const auto& ex = item.examples[i];
        if (i > 0) out += "\n";
        out += "Text:\n\"" + ex.text + "\"\nResponse:\n" + demonstration_label(item, ex.label);
    }
    return out;
}

std::string prompt_fingerprint(const std::string& template_version, const std::string& item_id,
                               const std::string& unit_id, const PromptStyle& style,
                               const LearningApproach& approach,
                               const std::string& rendered_text) {
    HashWriter h;
    h.field(template_version);
    h.field(item_id);
    h.field(unit_id);
    h.field(style.name());
    h.field(style.text);
    h.field(approach.name());
    h.field(approach.max_examples ? static_cast<std::int64_t>(*approach.max_examples) : -1);
    h.field(rendered_text);
    return h.hex_digest();
}

RenderedPrompt render_prompt(const AnnotationItem& item, const Section& section,
                             const std::string& unit_text, const std::string& unit_id,
                             const PromptStyle& style, const LearningApproach& approach) {
    if (unit_text.empty()) throw std::invalid_argument("render_prompt: unit text is empty");
    bool in_section = false;
    for (const auto& it : section.items) in_section = in_section || (it.id == item.id);
    if (!in_section)
        throw std::invalid_argument("render_prompt: item '" + item.id +
                                    "' does not belong to section '" + section.name + "'");

    std::string text;
    if (style.variant == PromptStyleVariant::Persona) text += style.text + "\n\n";
    text += section.name + "\n";
    text += section.instructions + "\n";
    text += item.name + "\n";
    text += item.tooltip + "\n";
    text += response_constraint_line(item.kind) + "\n";
    text += "Return your response in JSON format, with the key \"response\".\n";
    if (approach.variant == LearningApproachVariant::FewShot)
        text += render_examples_block(item, approach.max_examples) + "\n";
    text += "---\n";
    text += "Text:\n";
    text += "\"" + unit_text + "\"\n";
    text += "Response:";
    if (style.variant == PromptStyleVariant::ChainOfThought) text += "\n" + style.text;

    RenderedPrompt out;
    out.text = std::move(text);
    out.char_count = out.text.size();
    out.fingerprint = prompt_fingerprint(kPromptTemplateVersion, item.id, unit_id, style,
                                         approach, out.text);
    return out;
}

}  // namespace annobench
