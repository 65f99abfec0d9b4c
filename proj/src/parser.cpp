#include "annobench/parser.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

namespace annobench {

using nlohmann::json;

const char* noncompliance_reason_name(NonComplianceReason r) {
    switch (r) {
        case NonComplianceReason::NoJsonFound: return "no_json_found";
        case NonComplianceReason::MissingKey: return "missing_key";
        case NonComplianceReason::InvalidValue: return "invalid_value";
        case NonComplianceReason::Transport: return "transport";
    }
    return "?";
}

namespace {

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

std::string trim(const std::string& s) {
    size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

std::optional<long long> parse_integer(const std::string& s) {
    const std::string t = trim(s);
    if (t.empty()) return std::nullopt;
    size_t i = (t[0] == '-' || t[0] == '+') ? 1 : 0;
    if (i == t.size()) return std::nullopt;
    for (size_t k = i; k < t.size(); ++k)
        if (!std::isdigit(static_cast<unsigned char>(t[k]))) return std::nullopt;
    try {
        return std::stoll(t);
    } catch (...) {
        return std::nullopt;
    }
}

// Find the matching close brace for the '{' at `start`, honouring strings
// and escapes. Returns npos when unbalanced.
size_t matching_brace(const std::string& s, size_t start) {
    int depth = 0;
    bool in_string = false;
    bool escaped = false;
    for (size_t i = start; i < s.size(); ++i) {
        char c = s[i];
        if (in_string) {
            if (escaped)
                escaped = false;
            else if (c == '\\')
                escaped = true;
            else if (c == '"')
                in_string = false;
            continue;
        }
        if (c == '"') {
            in_string = true;
        } else if (c == '{') {
            ++depth;
        } else if (c == '}') {
            --depth;
            if (depth == 0) return i;
        }
    }
    return std::string::npos;
}

}  // namespace

std::string strip_think_spans(const std::string& raw) {
    static const std::string open = "<think>";
    static const std::string close = "</think>";
    std::string out;
    out.reserve(raw.size());
    size_t pos = 0;
    while (pos < raw.size()) {
        size_t o = raw.find(open, pos);
        if (o == std::string::npos) {
            out.append(raw, pos, std::string::npos);
            break;
        }
        size_t c = raw.find(close, o + open.size());
        if (c == std::string::npos) {
            // unmatched open tag: leave the rest in place
            out.append(raw, pos, std::string::npos);
            break;
        }
        out.append(raw, pos, o - pos);
        pos = c + close.size();
    }
    return out;
}

std::optional<AnnotationValue> normalize_label(const json& raw, const AnnotationItem& item) {
    if (std::holds_alternative<BinaryKind>(item.kind)) {
        if (raw.is_number_integer()) {
            long long n = raw.get<long long>();
            if (n == 0 || n == 1) return AnnotationValue{static_cast<int>(n)};
            return std::nullopt;
        }
        if (raw.is_number_float()) {
            double d = raw.get<double>();
            if (d == 0.0) return AnnotationValue{0};
            if (d == 1.0) return AnnotationValue{1};
            return std::nullopt;
        }
        if (raw.is_boolean()) return AnnotationValue{raw.get<bool>() ? 1 : 0};
        if (raw.is_string()) {
            const std::string t = lower(trim(raw.get<std::string>()));
            if (t == "1" || t == "yes") return AnnotationValue{1};
            if (t == "0" || t == "no") return AnnotationValue{0};
        }
        return std::nullopt;
    }

    if (const auto* cat = std::get_if<CategoricalKind>(&item.kind)) {
        if (!raw.is_string()) return std::nullopt;
        const std::string want = lower(trim(raw.get<std::string>()));
        for (const auto& o : cat->options)
            if (lower(o) == want) return AnnotationValue{o};
        return std::nullopt;
    }

    const auto& lik = std::get<LikertKind>(item.kind);
    std::optional<long long> n;
    if (raw.is_number_integer()) {
        n = raw.get<long long>();
    } else if (raw.is_number_float()) {
        double d = raw.get<double>();
        if (d == std::floor(d)) n = static_cast<long long>(d);
    } else if (raw.is_string()) {
        n = parse_integer(raw.get<std::string>());
    }
    if (n && *n >= lik.min && *n <= lik.max) return AnnotationValue{static_cast<int>(*n)};
    return std::nullopt;
}

ParsedAnnotation extract_response(const std::string& raw, const AnnotationItem& item) {
    const std::string text = strip_think_spans(raw);

    // Last JSON object with the "response" key wins; nested objects are
    // candidates in their own right.
    bool saw_object = false;
    std::optional<json> payload;
    for (size_t i = 0; i < text.size(); ++i) {
        if (text[i] != '{') continue;
        size_t end = matching_brace(text, i);
        if (end == std::string::npos) continue;
        json parsed = json::parse(text.substr(i, end - i + 1), nullptr, false);
        if (parsed.is_discarded() || !parsed.is_object()) continue;
        saw_object = true;
        if (parsed.contains("response")) payload = parsed.at("response");
    }

    if (!payload) {
        return ParsedAnnotation::non_compliant(saw_object ? NonComplianceReason::MissingKey
                                                          : NonComplianceReason::NoJsonFound);
    }
    if (auto v = normalize_label(*payload, item)) return ParsedAnnotation::ok(std::move(*v));
    return ParsedAnnotation::non_compliant(NonComplianceReason::InvalidValue);
}

}  // namespace annobench
