#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "annobench/value.hpp"

namespace annobench {

struct BinaryKind {};

struct CategoricalKind {
    std::vector<std::string> options;  // ordered, case-insensitively distinct
};

struct LikertKind {
    int min = 0;
    int max = 0;
    std::string anchor_text;
};

using ItemKind = std::variant<BinaryKind, CategoricalKind, LikertKind>;

const char* kind_name(const ItemKind& kind);

struct CodedExample {
    std::string text;
    AnnotationValue label;
    std::optional<std::string> display_tag;
};

struct ItemDependency {
    std::string parent_item_id;
    AnnotationValue required_parent_value;
};

struct AnnotationItem {
    std::string id;
    std::string name;
    std::string tooltip;  // the question text shown to coders and models
    ItemKind kind;
    std::vector<CodedExample> examples;
    std::optional<ItemDependency> dependency;

    /// True when `v` is a legal value for this item's kind.
    bool is_valid_value(const AnnotationValue& v) const;
};

struct Section {
    std::string name;
    std::string instructions;
    std::vector<AnnotationItem> items;
};

struct Codebook {
    std::string id;
    std::string title;
    std::vector<Section> sections;

    const AnnotationItem* find_item(const std::string& item_id) const;
    const Section* section_of(const std::string& item_id) const;
    /// All items in document order.
    std::vector<const AnnotationItem*> all_items() const;
};

/// Parse and validate a codebook JSON document.
Codebook load_codebook(const std::string& path);
Codebook parse_codebook(const std::string& json_text);
std::string serialize_codebook(const Codebook& cb);
void validate_codebook(const Codebook& cb);  // throws ValidationError

// ---------------------------------------------------------------------------
// Ground truth

struct GroundTruthDataset {
    std::string task_id;
    std::vector<std::pair<std::string, std::string>> units;  // (unit_id, text) in dataset order
    // (unit_id, item_id, coder_id) -> raw coder value
    std::map<std::tuple<std::string, std::string, std::string>, AnnotationValue> coder_annotations;
    // (unit_id, item_id) -> resolved value; absence means not applicable,
    // unresolved, or missing
    std::map<std::pair<std::string, std::string>, AnnotationValue> resolved;

    bool has_unit(const std::string& unit_id) const;
    const std::string* unit_text(const std::string& unit_id) const;
};

enum class Aggregation { Resolved, SingleCoder, Majority, MeanDichotomize };

Aggregation aggregation_from_string(const std::string& s);

/// Load ground truth from JSON or CSV (decided by extension) and resolve
/// coder annotations with the given strategy. Validates against the codebook.
GroundTruthDataset load_ground_truth(const std::string& path, const Codebook& cb,
                                     Aggregation strategy);
void validate_ground_truth(const GroundTruthDataset& truth, const Codebook& cb);

/// Strict majority vote. Returns nullopt on ties (Unresolved).
std::optional<AnnotationValue> resolve_majority(const std::vector<AnnotationValue>& values);

enum class DichotomizedClass { Negative, Positive, Discard };

/// Collapse a mean score on the 1..9 scale: <=4 negative, >=6 positive,
/// the open interval (4,6) discarded.
DichotomizedClass dichotomize_ordinal(double mean_score);

/// Units an item applies to: all units for root items, units whose
/// resolved parent value equals the required value for dependent items.
std::set<std::string> applicable_units(const AnnotationItem& item, const Codebook& cb,
                                       const GroundTruthDataset& truth);

// ---------------------------------------------------------------------------
// Splits

enum class Partition { Train, Validation, Test };

const char* partition_name(Partition p);
Partition partition_from_string(const std::string& s);

struct SplitRatios {
    double train = 0.0;
    double validation = 0.0;
    double test = 0.0;
};

struct DataSplit {
    std::uint64_t seed = 0;
    SplitRatios ratios;
    std::map<std::string, Partition> assignment;  // unit_id -> partition
    std::vector<std::string> warnings;            // e.g. strata too small to stratify

    std::vector<std::string> units_in(Partition p) const;
};

/// Deterministic pseudo-random split stratified by the first (root) item's
/// resolved label. Same (dataset, ratios, seed) always yields the same map.
DataSplit make_splits(const GroundTruthDataset& truth, const Codebook& cb,
                      const SplitRatios& ratios, std::uint64_t seed);

std::string serialize_split(const DataSplit& split);
DataSplit parse_split(const std::string& json_text);

}  // namespace annobench
