#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace annobench {

/// A single annotation value: integers for binary (0/1) and Likert
/// responses, strings for categorical labels.
using AnnotationValue = std::variant<int, std::string>;

std::string value_to_string(const AnnotationValue& v);
bool value_equals(const AnnotationValue& a, const AnnotationValue& b);

/// FNV-1a 64-bit over raw bytes. Stable across platforms and processes.
inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL) {
    std::uint64_t h = seed;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string to_hex64(std::uint64_t h);

/// Length-prefixed field concatenation so that ("ab","c") and ("a","bc")
/// hash differently.
class HashWriter {
public:
    void field(std::string_view s) {
        buf_ += std::to_string(s.size());
        buf_ += ':';
        buf_.append(s.data(), s.size());
        buf_ += ';';
    }
    void field(std::int64_t n) { field(std::to_string(n)); }
    std::uint64_t digest() const { return fnv1a64(buf_); }
    std::string hex_digest() const { return to_hex64(digest()); }

private:
    std::string buf_;
};

/// Raised when an input file cannot be parsed at all.
class ParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Diagnostic {
    std::string where;    // item id, section name, or file-level locus
    std::string message;  // which invariant failed
};

/// Raised when a parsed structure violates its invariants. Carries
/// item-level diagnostics.
class ValidationError : public std::runtime_error {
public:
    ValidationError(std::string summary, std::vector<Diagnostic> diags)
        : std::runtime_error(std::move(summary)), diagnostics(std::move(diags)) {}
    std::vector<Diagnostic> diagnostics;
};

}  // namespace annobench
