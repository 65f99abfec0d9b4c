#pragma once

#include <cstddef>
#include <optional>
#include <string>

#include "annobench/codebook.hpp"

namespace annobench {

/// Bumped whenever the rendered template layout changes, so fingerprints
/// from older runs cannot collide with newer ones.
inline constexpr const char* kPromptTemplateVersion = "t1";

inline constexpr const char* kDefaultPersonaText =
    "You are an expert political scientist and data annotator with extensive experience in "
    "content analysis.";

inline constexpr const char* kDefaultCotText =
    "I'll think through this step by step: First, I'll identify key parts of the text relevant "
    "to this task, then reason about the correct label before giving my final answer.";

enum class PromptStyleVariant { Standard, Persona, ChainOfThought };

struct PromptStyle {
    PromptStyleVariant variant = PromptStyleVariant::Standard;
    std::string text;  // persona prefix or chain-of-thought suffix

    static PromptStyle standard() { return {PromptStyleVariant::Standard, ""}; }
    static PromptStyle persona(std::string t = kDefaultPersonaText);
    static PromptStyle chain_of_thought(std::string t = kDefaultCotText);

    const char* name() const;
};

PromptStyle prompt_style_from_name(const std::string& name, const std::string& text = "");

enum class LearningApproachVariant { ZeroShot, FewShot };

struct LearningApproach {
    LearningApproachVariant variant = LearningApproachVariant::ZeroShot;
    std::optional<int> max_examples;  // FewShot only; >= 1 when present

    static LearningApproach zero_shot() { return {LearningApproachVariant::ZeroShot, {}}; }
    static LearningApproach few_shot(std::optional<int> max = std::nullopt);

    const char* name() const;
};

LearningApproach learning_approach_from_name(const std::string& name,
                                             std::optional<int> max_examples = std::nullopt);

struct RenderedPrompt {
    std::string text;
    std::size_t char_count = 0;  // bytes of text
    std::string fingerprint;     // hex content hash, see prompt_fingerprint
};

/// Byte-exact deterministic rendering of the standard template with optional
/// persona prefix / chain-of-thought suffix and few-shot demonstrations.
RenderedPrompt render_prompt(const AnnotationItem& item, const Section& section,
                             const std::string& unit_text, const std::string& unit_id,
                             const PromptStyle& style, const LearningApproach& approach);

/// The kind-specific response-constraint line of the template.
std::string response_constraint_line(const ItemKind& kind);

/// Few-shot demonstrations in codebook order, truncated to `limit`.
/// Throws std::invalid_argument when the item has no examples.
std::string render_examples_block(const AnnotationItem& item,
                                  std::optional<int> limit = std::nullopt);

/// Stable 64-bit content hash over everything that determines the prompt.
std::string prompt_fingerprint(const std::string& template_version, const std::string& item_id,
                               const std::string& unit_id, const PromptStyle& style,
                               const LearningApproach& approach, const std::string& rendered_text);

}  // namespace annobench
