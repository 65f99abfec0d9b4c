#pragma once

#include <optional>
#include <string>

#include <json.hpp>

#include "annobench/codebook.hpp"
#include "annobench/value.hpp"

namespace annobench {

enum class NonComplianceReason { NoJsonFound, MissingKey, InvalidValue, Transport };

const char* noncompliance_reason_name(NonComplianceReason r);

/// Result of extracting a structured annotation from raw model output.
struct ParsedAnnotation {
    std::optional<AnnotationValue> value;                // set iff compliant
    std::optional<NonComplianceReason> reason;           // set iff non-compliant

    bool compliant() const { return value.has_value(); }

    static ParsedAnnotation ok(AnnotationValue v) { return {std::move(v), std::nullopt}; }
    static ParsedAnnotation non_compliant(NonComplianceReason r) { return {std::nullopt, r}; }
};

/// Pull the annotation out of free-form model output: drop <think> spans,
/// then take the last JSON object carrying the "response" key.
ParsedAnnotation extract_response(const std::string& raw, const AnnotationItem& item);

/// Canonicalize a raw JSON value against the item kind:
///   binary      1/0, "1"/"0", case-insensitive "yes"/"no"  -> 1/0
///   categorical case-insensitive trimmed match             -> canonical option
///   likert      integer or integer-valued string in range  -> int
/// Anything else is nullopt (InvalidValue).
std::optional<AnnotationValue> normalize_label(const nlohmann::json& raw,
                                               const AnnotationItem& item);

/// `raw` with every <think>...</think> span removed. Unmatched tags stay.
std::string strip_think_spans(const std::string& raw);

}  // namespace annobench
