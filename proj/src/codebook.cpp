#include "annobench/codebook.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "annobench/parser.hpp"

namespace annobench {

using nlohmann::json;
using nlohmann::ordered_json;

std::string value_to_string(const AnnotationValue& v) {
    if (std::holds_alternative<int>(v)) return std::to_string(std::get<int>(v));
    return std::get<std::string>(v);
}

bool value_equals(const AnnotationValue& a, const AnnotationValue& b) { return a == b; }

std::string to_hex64(std::uint64_t h) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[i] = digits[h & 0xf];
        h >>= 4;
    }
    return out;
}

const char* kind_name(const ItemKind& kind) {
    if (std::holds_alternative<BinaryKind>(kind)) return "binary";
    if (std::holds_alternative<CategoricalKind>(kind)) return "categorical";
    return "likert";
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

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

bool AnnotationItem::is_valid_value(const AnnotationValue& v) const {
    if (std::holds_alternative<BinaryKind>(kind)) {
        return std::holds_alternative<int>(v) &&
               (std::get<int>(v) == 0 || std::get<int>(v) == 1);
    }
    if (const auto* cat = std::get_if<CategoricalKind>(&kind)) {
        if (!std::holds_alternative<std::string>(v)) return false;
        const auto& s = std::get<std::string>(v);
        return std::any_of(cat->options.begin(), cat->options.end(),
                           [&](const std::string& o) { return o == s; });
    }
    const auto& lik = std::get<LikertKind>(kind);
    return std::holds_alternative<int>(v) && std::get<int>(v) >= lik.min &&
           std::get<int>(v) <= lik.max;
}

const AnnotationItem* Codebook::find_item(const std::string& item_id) const {
    for (const auto& sec : sections)
        for (const auto& item : sec.items)
            if (item.id == item_id) return &item;
    return nullptr;
}

const Section* Codebook::section_of(const std::string& item_id) const {
    for (const auto& sec : sections)
        for (const auto& item : sec.items)
            if (item.id == item_id) return &sec;
    return nullptr;
}

std::vector<const AnnotationItem*> Codebook::all_items() const {
    std::vector<const AnnotationItem*> out;
    for (const auto& sec : sections)
        for (const auto& item : sec.items) out.push_back(&item);
    return out;
}

// ---------------------------------------------------------------------------
// Codebook JSON

namespace {

constexpr int kSchemaVersion = 1;

AnnotationValue value_from_json_strict(const json& j, const std::string& where) {
    if (j.is_number_integer()) return AnnotationValue{static_cast<int>(j.get<long long>())};
    if (j.is_string()) return AnnotationValue{j.get<std::string>()};
    throw ParseError(where + ": value must be an integer or a string");
}

json value_to_json(const AnnotationValue& v) {
    if (std::holds_alternative<int>(v)) return std::get<int>(v);
    return std::get<std::string>(v);
}

ItemKind parse_kind(const json& j, const std::string& where) {
    const std::string type = j.at("type").get<std::string>();
    if (type == "binary") return BinaryKind{};
    if (type == "categorical") {
        CategoricalKind k;
        for (const auto& o : j.at("options")) k.options.push_back(o.get<std::string>());
        return k;
    }
    if (type == "likert") {
        LikertKind k;
        k.min = j.at("min").get<int>();
        k.max = j.at("max").get<int>();
        k.anchor_text = j.value("anchor_text", std::string{});
        return k;
    }
    throw ParseError(where + ": unknown kind type '" + type + "'");
}

}  // namespace

Codebook parse_codebook(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ParseError(std::string("codebook is not valid JSON: ") + e.what());
    }

    try {
        if (j.value("schema_version", 0) != kSchemaVersion)
            throw ParseError("unsupported codebook schema_version (expected " +
                             std::to_string(kSchemaVersion) + ")");
        Codebook cb;
        cb.id = j.at("id").get<std::string>();
        cb.title = j.at("title").get<std::string>();
        for (const auto& sj : j.at("sections")) {
            Section sec;
            sec.name = sj.at("name").get<std::string>();
            sec.instructions = sj.at("instructions").get<std::string>();
            for (const auto& ij : sj.at("items")) {
                AnnotationItem item;
                item.id = ij.at("id").get<std::string>();
                item.name = ij.at("name").get<std::string>();
                item.tooltip = ij.at("tooltip").get<std::string>();
                item.kind = parse_kind(ij.at("kind"), "item " + item.id);
                for (const auto& ej : ij.value("examples", json::array())) {
                    CodedExample ex;
                    ex.text = ej.at("text").get<std::string>();
                    ex.label = value_from_json_strict(ej.at("label"), "example in item " + item.id);
                    if (ej.contains("display_tag"))
                        ex.display_tag = ej.at("display_tag").get<std::string>();
                    item.examples.push_back(std::move(ex));
                }
                if (ij.contains("dependency")) {
                    ItemDependency dep;
                    dep.parent_item_id = ij.at("dependency").at("parent_item_id").get<std::string>();
                    dep.required_parent_value = value_from_json_strict(
                        ij.at("dependency").at("required_parent_value"),
                        "dependency of item " + item.id);
                    item.dependency = std::move(dep);
                }
                sec.items.push_back(std::move(item));
            }
            cb.sections.push_back(std::move(sec));
        }
        validate_codebook(cb);
        return cb;
    } catch (const json::exception& e) {
        throw ParseError(std::string("codebook JSON has wrong shape: ") + e.what());
    }
}

Codebook load_codebook(const std::string& path) { return parse_codebook(read_file(path)); }

std::string serialize_codebook(const Codebook& cb) {
    ordered_json j;
    j["schema_version"] = kSchemaVersion;
    j["id"] = cb.id;
    j["title"] = cb.title;
    j["sections"] = ordered_json::array();
    for (const auto& sec : cb.sections) {
        ordered_json sj;
        sj["name"] = sec.name;
        sj["instructions"] = sec.instructions;
        sj["items"] = ordered_json::array();
        for (const auto& item : sec.items) {
            ordered_json ij;
            ij["id"] = item.id;
            ij["name"] = item.name;
            ij["tooltip"] = item.tooltip;
            if (std::holds_alternative<BinaryKind>(item.kind)) {
                ij["kind"] = {{"type", "binary"}};
            } else if (const auto* cat = std::get_if<CategoricalKind>(&item.kind)) {
                ij["kind"] = {{"type", "categorical"}, {"options", cat->options}};
            } else {
                const auto& lik = std::get<LikertKind>(item.kind);
                ij["kind"] = {{"type", "likert"},
                              {"min", lik.min},
                              {"max", lik.max},
                              {"anchor_text", lik.anchor_text}};
            }
            ij["examples"] = ordered_json::array();
            for (const auto& ex : item.examples) {
                ordered_json ej;
                ej["text"] = ex.text;
                ej["label"] = value_to_json(ex.label);
                if (ex.display_tag) ej["display_tag"] = *ex.display_tag;
                ij["examples"].push_back(std::move(ej));
            }
            if (item.dependency) {
                ij["dependency"] = {
                    {"parent_item_id", item.dependency->parent_item_id},
                    {"required_parent_value", value_to_json(item.dependency->required_parent_value)}};
            }
            sj["items"].push_back(std::move(ij));
        }
        j["sections"].push_back(std::move(sj));
    }
    return j.dump(2) + "\n";
}

void validate_codebook(const Codebook& cb) {
    std::vector<Diagnostic> diags;
    auto fail = [&](const std::string& where, const std::string& msg) {
        diags.push_back({where, msg});
    };

    if (cb.sections.empty()) fail("codebook " + cb.id, "at least one section required");

    std::set<std::string> section_names;
    std::map<std::string, size_t> item_order;  // id -> document position
    size_t pos = 0;
    for (const auto& sec : cb.sections) {
        if (!section_names.insert(sec.name).second)
            fail("section " + sec.name, "section names must be unique");
        if (sec.items.empty()) fail("section " + sec.name, "at least one item required");
        for (const auto& item : sec.items) {
            if (item_order.count(item.id))
                fail("item " + item.id, "item ids must be unique codebook-wide");
            item_order[item.id] = pos++;
        }
    }

    for (const auto& sec : cb.sections) {
        for (const auto& item : sec.items) {
            const std::string where = "item " + item.id;
            if (const auto* lik = std::get_if<LikertKind>(&item.kind)) {
                if (lik->min >= lik->max) fail(where, "Likert min < max");
            }
            if (const auto* cat = std::get_if<CategoricalKind>(&item.kind)) {
                if (cat->options.size() < 2) fail(where, "categorical needs at least 2 options");
                std::set<std::string> seen;
                for (const auto& o : cat->options)
                    if (!seen.insert(lower(o)).second)
                        fail(where, "categorical options must be case-insensitively distinct");
            }
            for (const auto& ex : item.examples) {
                if (ex.text.empty()) fail(where, "example text must be non-empty");
                if (!item.is_valid_value(ex.label))
                    fail(where, "example label '" + value_to_string(ex.label) +
                                    "' is not a valid value for " + kind_name(item.kind));
            }
            if (item.dependency) {
                const auto& dep = *item.dependency;
                auto parent_pos = item_order.find(dep.parent_item_id);
                if (parent_pos == item_order.end()) {
                    fail(where, "dependency parent '" + dep.parent_item_id + "' does not exist");
                } else {
                    if (dep.parent_item_id == item.id)
                        fail(where, "item cannot depend on itself");
                    else if (parent_pos->second >= item_order.at(item.id))
                        fail(where, "dependency parent must precede item in document order");
                    else if (const auto* parent = cb.find_item(dep.parent_item_id);
                             parent && !parent->is_valid_value(dep.required_parent_value))
                        fail(where, "required_parent_value '" +
                                        value_to_string(dep.required_parent_value) +
                                        "' is not a valid value for parent");
                }
            }
        }
    }

    if (!diags.empty()) {
        std::string summary = "codebook '" + cb.id + "' failed validation: " +
                              std::to_string(diags.size()) + " problem(s), first: [" +
                              diags.front().where + "] " + diags.front().message;
        throw ValidationError(summary, std::move(diags));
    }
}

// ---------------------------------------------------------------------------
// Ground truth

bool GroundTruthDataset::has_unit(const std::string& unit_id) const {
    return unit_text(unit_id) != nullptr;
}

const std::string* GroundTruthDataset::unit_text(const std::string& unit_id) const {
    for (const auto& [id, text] : units)
        if (id == unit_id) return &text;
    return nullptr;
}

Aggregation aggregation_from_string(const std::string& s) {
    if (s == "resolved") return Aggregation::Resolved;
    if (s == "single") return Aggregation::SingleCoder;
    if (s == "majority") return Aggregation::Majority;
    if (s == "mean_dichotomize") return Aggregation::MeanDichotomize;
    throw ParseError("unknown aggregation strategy '" + s + "'");
}

std::optional<AnnotationValue> resolve_majority(const std::vector<AnnotationValue>& values) {
    if (values.empty()) throw std::invalid_argument("resolve_majority: empty value list");
    std::map<std::string, std::pair<AnnotationValue, int>> counts;
    for (const auto& v : values) {
        auto [it, inserted] = counts.try_emplace(value_to_string(v), v, 0);
        it->second.second += 1;
    }
    int best = 0;
    for (const auto& [k, vc] : counts) best = std::max(best, vc.second);
    std::vector<AnnotationValue> winners;
    for (const auto& [k, vc] : counts)
        if (vc.second == best) winners.push_back(vc.first);
    if (winners.size() != 1) return std::nullopt;  // tie: unresolved
    return winners.front();
}

DichotomizedClass dichotomize_ordinal(double mean_score) {
    if (!(mean_score >= 1.0 && mean_score <= 9.0))
        throw std::invalid_argument("dichotomize_ordinal: mean score must lie in [1, 9]");
    if (mean_score <= 4.0) return DichotomizedClass::Negative;
    if (mean_score >= 6.0) return DichotomizedClass::Positive;
    return DichotomizedClass::Discard;
}

namespace {

// RFC 4180-ish CSV reader: quoted fields, "" escapes, embedded newlines.
std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string field;
    bool in_quotes = false;
    size_t i = 0;
    auto end_field = [&] { row.push_back(field); field.clear(); };
    auto end_row = [&] {
        end_field();
        rows.push_back(row);
        row.clear();
    };
    while (i < text.size()) {
        char c = text[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                field += c;
            }
        } else if (c == '"') {
            in_quotes = true;
        } else if (c == ',') {
            end_field();
        } else if (c == '\n') {
            end_row();
        } else if (c != '\r') {
            field += c;
        }
        ++i;
    }
    if (!field.empty() || !row.empty()) end_row();
    return rows;
}

// Coerce a raw JSON scalar to a value valid for the item, using the same
// canonicalization rules as model-output parsing.
AnnotationValue coerce_or_throw(const json& raw, const AnnotationItem& item,
                                const std::string& where) {
    auto v = normalize_label(raw, item);
    if (!v)
        throw ValidationError("ground truth value invalid",
                              {{where, "value " + raw.dump() + " is not valid for " +
                                           kind_name(item.kind) + " item '" + item.id + "'"}});
    return *v;
}

double numeric_or_throw(const json& raw, const std::string& where) {
    if (raw.is_number()) return raw.get<double>();
    if (raw.is_string()) {
        try {
            size_t pos = 0;
            double d = std::stod(trim(raw.get<std::string>()), &pos);
            if (pos == trim(raw.get<std::string>()).size()) return d;
        } catch (...) {
        }
    }
    throw ValidationError("ground truth value invalid",
                          {{where, "expected a numeric 1..9 scale value, got " + raw.dump()}});
}

const std::string* match_option_ci(const CategoricalKind& cat, const std::string& want) {
    for (const auto& o : cat.options)
        if (lower(o) == lower(want)) return &o;
    return nullptr;
}

void resolve_coders(GroundTruthDataset& truth, const Codebook& cb, Aggregation strategy) {
    // Group coder values per (unit, item), preserving coder-id order.
    std::map<std::pair<std::string, std::string>, std::vector<json>> grouped;
    for (const auto& [key, val] : truth.coder_annotations) {
        const auto& [unit, item, coder] = key;
        grouped[{unit, item}].push_back(value_to_json(val));
    }
    for (const auto& [key, raws] : grouped) {
        if (truth.resolved.count(key)) continue;  // explicit resolved value wins
        const auto& [unit_id, item_id] = key;
        const AnnotationItem* item = cb.find_item(item_id);
        if (!item)
            throw ValidationError("ground truth references unknown item",
                                  {{unit_id, "unknown item '" + item_id + "'"}});
        const std::string where = unit_id + "/" + item_id;
        switch (strategy) {
            case Aggregation::Resolved:
                throw ValidationError(
                    "aggregation mismatch",
                    {{where, "coder columns present but aggregation is 'resolved'"}});
            case Aggregation::SingleCoder: {
                if (raws.size() != 1)
                    throw ValidationError(
                        "aggregation mismatch",
                        {{where, "single-coder aggregation requires exactly one coder"}});
                truth.resolved.emplace(key, coerce_or_throw(raws.front(), *item, where));
                break;
            }
            case Aggregation::Majority: {
                std::vector<AnnotationValue> vals;
                vals.reserve(raws.size());
                for (const auto& r : raws) vals.push_back(coerce_or_throw(r, *item, where));
                if (auto v = resolve_majority(vals)) truth.resolved.emplace(key, *v);
                // ties stay unresolved: no entry
                break;
            }
            case Aggregation::MeanDichotomize: {
                const auto* cat = std::get_if<CategoricalKind>(&item->kind);
                const std::string* neg = cat ? match_option_ci(*cat, "Negative") : nullptr;
                const std::string* pos = cat ? match_option_ci(*cat, "Positive") : nullptr;
                if (!neg || !pos)
                    throw ValidationError(
                        "aggregation mismatch",
                        {{where, "mean_dichotomize needs categorical options Negative/Positive"}});
                double sum = 0;
                for (const auto& r : raws) sum += numeric_or_throw(r, where);
                switch (dichotomize_ordinal(sum / static_cast<double>(raws.size()))) {
                    case DichotomizedClass::Negative:
                        truth.resolved.emplace(key, AnnotationValue{*neg});
                        break;
                    case DichotomizedClass::Positive:
                        truth.resolved.emplace(key, AnnotationValue{*pos});
                        break;
                    case DichotomizedClass::Discard:
                        break;  // unit dropped for this item
                }
                break;
            }
        }
    }
}

GroundTruthDataset ground_truth_from_json(const std::string& text, const Codebook& cb,
                                          Aggregation strategy) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ParseError(std::string("ground truth is not valid JSON: ") + e.what());
    }
    GroundTruthDataset truth;
    try {
        truth.task_id = j.at("task_id").get<std::string>();
        for (const auto& uj : j.at("units")) {
            std::string unit_id = uj.at("unit_id").get<std::string>();
            truth.units.emplace_back(unit_id, uj.at("text").get<std::string>());
            if (uj.contains("annotations")) {
                for (const auto& [item_id, raw] : uj.at("annotations").items()) {
                    const AnnotationItem* item = cb.find_item(item_id);
                    if (!item)
                        throw ValidationError("ground truth references unknown item",
                                              {{unit_id, "unknown item '" + item_id + "'"}});
                    truth.resolved.emplace(std::make_pair(unit_id, item_id),
                                           coerce_or_throw(raw, *item, unit_id + "/" + item_id));
                }
            }
            if (uj.contains("coders")) {
                for (const auto& [item_id, coders] : uj.at("coders").items()) {
                    for (const auto& [coder_id, raw] : coders.items()) {
                        truth.coder_annotations.emplace(
                            std::make_tuple(unit_id, item_id, coder_id),
                            value_from_json_strict(raw, unit_id + "/" + item_id));
                    }
                }
            }
        }
    } catch (const json::exception& e) {
        throw ParseError(std::string("ground truth JSON has wrong shape: ") + e.what());
    }
    resolve_coders(truth, cb, strategy);
    return truth;
}

GroundTruthDataset ground_truth_from_csv(const std::string& text, const Codebook& cb,
                                         Aggregation strategy) {
    auto rows = parse_csv(text);
    if (rows.empty()) throw ParseError("ground truth CSV is empty");
    const auto& header = rows.front();
    if (header.size() < 2 || header[0] != "unit_id" || header[1] != "text")
        throw ParseError("ground truth CSV must start with columns unit_id,text");

    struct Col {
        std::string item_id;
        std::optional<std::string> coder_id;
    };
    std::vector<Col> cols;
    for (size_t c = 2; c < header.size(); ++c) {
        auto sep = header[c].find(':');
        if (sep == std::string::npos)
            cols.push_back({header[c], std::nullopt});
        else
            cols.push_back({header[c].substr(0, sep), header[c].substr(sep + 1)});
    }

    GroundTruthDataset truth;
    truth.task_id = cb.id;
    for (size_t r = 1; r < rows.size(); ++r) {
        const auto& row = rows[r];
        if (row.size() < 2) continue;
        const std::string& unit_id = row[0];
        truth.units.emplace_back(unit_id, row[1]);
        for (size_t c = 0; c < cols.size() && c + 2 < row.size(); ++c) {
            const std::string raw = trim(row[c + 2]);
            if (raw.empty()) continue;
            // Numeric-looking cells become JSON numbers; everything else strings.
            json cell;
            try {
                size_t pos = 0;
                int n = std::stoi(raw, &pos);
                cell = (pos == raw.size()) ? json(n) : json(raw);
            } catch (...) {
                cell = json(raw);
            }
            if (cols[c].coder_id) {
                truth.coder_annotations.emplace(
                    std::make_tuple(unit_id, cols[c].item_id, *cols[c].coder_id),
                    value_from_json_strict(cell, unit_id + "/" + cols[c].item_id));
            } else {
                const AnnotationItem* item = cb.find_item(cols[c].item_id);
                if (!item)
                    throw ValidationError("ground truth references unknown item",
                                          {{unit_id, "unknown item '" + cols[c].item_id + "'"}});
                truth.resolved.emplace(std::make_pair(unit_id, cols[c].item_id),
                                       coerce_or_throw(cell, *item, unit_id + "/" + cols[c].item_id));
            }
        }
    }
    resolve_coders(truth, cb, strategy);
    return truth;
}

}  // namespace

GroundTruthDataset load_ground_truth(const std::string& path, const Codebook& cb,
                                     Aggregation strategy) {
    const std::string text = read_file(path);
    GroundTruthDataset truth;
    if (path.size() >= 4 && path.substr(path.size() - 4) == ".csv")
        truth = ground_truth_from_csv(text, cb, strategy);
    else
        truth = ground_truth_from_json(text, cb, strategy);
    validate_ground_truth(truth, cb);
    return truth;
}

void validate_ground_truth(const GroundTruthDataset& truth, const Codebook& cb) {
    std::vector<Diagnostic> diags;
    std::set<std::string> unit_ids;
    for (const auto& [id, text] : truth.units) {
        if (!unit_ids.insert(id).second) diags.push_back({id, "duplicate unit_id"});
    }
    for (const auto& [key, val] : truth.resolved) {
        const auto& [unit_id, item_id] = key;
        const std::string where = unit_id + "/" + item_id;
        if (!unit_ids.count(unit_id)) {
            diags.push_back({where, "resolved value for unknown unit"});
            continue;
        }
        const AnnotationItem* item = cb.find_item(item_id);
        if (!item) {
            diags.push_back({where, "resolved value for unknown item"});
            continue;
        }
        if (!item->is_valid_value(val))
            diags.push_back({where, "resolved value '" + value_to_string(val) +
                                        "' invalid for " + kind_name(item->kind)});
        if (item->dependency) {
            auto parent = truth.resolved.find({unit_id, item->dependency->parent_item_id});
            if (parent == truth.resolved.end() ||
                !value_equals(parent->second, item->dependency->required_parent_value))
                diags.push_back({where, "resolved value present but parent item '" +
                                            item->dependency->parent_item_id +
                                            "' does not resolve to the required value"});
        }
    }
    if (!diags.empty()) {
        std::string summary = "ground truth for task '" + truth.task_id +
                              "' failed validation: " + std::to_string(diags.size()) +
                              " problem(s), first: [" + diags.front().where + "] " +
                              diags.front().message;
        throw ValidationError(std::move(summary), std::move(diags));
    }
}

std::set<std::string> applicable_units(const AnnotationItem& item, const Codebook& cb,
                                       const GroundTruthDataset& truth) {
    std::set<std::string> out;
    if (!item.dependency) {
        for (const auto& [id, text] : truth.units) out.insert(id);
        return out;
    }
    if (!cb.find_item(item.dependency->parent_item_id))
        throw std::invalid_argument("applicable_units: unknown parent item '" +
                                    item.dependency->parent_item_id + "'");
    for (const auto& [id, text] : truth.units) {
        auto it = truth.resolved.find({id, item.dependency->parent_item_id});
        if (it != truth.resolved.end() &&
            value_equals(it->second, item.dependency->required_parent_value))
            out.insert(id);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Splits

const char* partition_name(Partition p) {
    switch (p) {
        case Partition::Train: return "train";
        case Partition::Validation: return "validation";
        case Partition::Test: return "test";
    }
    return "?";
}

Partition partition_from_string(const std::string& s) {
    if (s == "train") return Partition::Train;
    if (s == "validation") return Partition::Validation;
    if (s == "test") return Partition::Test;
    throw ParseError("unknown partition '" + s + "'");
}

std::vector<std::string> DataSplit::units_in(Partition p) const {
    std::vector<std::string> out;
    for (const auto& [id, part] : assignment)
        if (part == p) out.push_back(id);
    return out;
}

namespace {

// splitmix64: tiny, well-mixed, identical output on every platform.
// std::shuffle is implementation-defined, so splits roll their own.
struct SplitMix64 {
    std::uint64_t state;
    std::uint64_t next() {
        state += 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = state;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }
    std::uint64_t bounded(std::uint64_t n) {
        std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = next();
        } while (x >= limit);
        return x % n;
    }
};

void fisher_yates(std::vector<std::string>& v, SplitMix64& rng) {
    for (size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.bounded(i)]);
}

std::array<size_t, 3> largest_remainder(const SplitRatios& r, size_t n) {
    const double rs[3] = {r.train, r.validation, r.test};
    std::array<size_t, 3> counts{};
    double fracs[3];
    size_t assigned = 0;
    for (int i = 0; i < 3; ++i) {
        double exact = rs[i] * static_cast<double>(n);
        counts[i] = static_cast<size_t>(std::floor(exact + 1e-9));
        fracs[i] = exact - static_cast<double>(counts[i]);
        assigned += counts[i];
    }
    while (assigned < n) {
        int best = 0;
        for (int i = 1; i < 3; ++i)
            if (fracs[i] > fracs[best] + 1e-12) best = i;
        counts[best] += 1;
        fracs[best] = -1.0;
        ++assigned;
    }
    return counts;
}

}  // namespace

DataSplit make_splits(const GroundTruthDataset& truth, const Codebook& cb,
                      const SplitRatios& ratios, std::uint64_t seed) {
    if (truth.units.empty()) throw std::invalid_argument("make_splits: empty dataset");
    const double sum = ratios.train + ratios.validation + ratios.test;
    if (!(ratios.train > 0 && ratios.validation > 0 && ratios.test > 0))
        throw std::invalid_argument("make_splits: ratios must be positive");
    if (std::abs(sum - 1.0) > 1e-9)
        throw std::invalid_argument("make_splits: ratios must sum to 1");

    DataSplit split;
    split.seed = seed;
    split.ratios = ratios;

    const auto items = cb.all_items();
    const AnnotationItem* root = items.empty() ? nullptr : items.front();

    // Strata keyed by the root item's resolved label, in dataset order.
    std::map<std::string, std::vector<std::string>> strata;
    std::vector<std::string> stratum_order;
    for (const auto& [unit_id, text] : truth.units) {
        std::string key = "__unlabeled__";
        if (root) {
            auto it = truth.resolved.find({unit_id, root->id});
            if (it != truth.resolved.end()) key = value_to_string(it->second);
        }
        auto [pos, inserted] = strata.try_emplace(key);
        if (inserted) stratum_order.push_back(key);
        pos->second.push_back(unit_id);
    }
    std::sort(stratum_order.begin(), stratum_order.end());

    // Strata smaller than the partition count cannot be stratified; pool them
    // and assign the pool as one unstratified group.
    std::vector<std::string> pooled;
    std::vector<std::pair<std::string, std::vector<std::string>>> groups;
    for (const auto& key : stratum_order) {
        auto& members = strata[key];
        if (members.size() < 3) {
            split.warnings.push_back("stratum '" + key + "' has " +
                                     std::to_string(members.size()) +
                                     " unit(s); assigned unstratified");
            pooled.insert(pooled.end(), members.begin(), members.end());
        } else {
            groups.emplace_back(key, members);
        }
    }
    if (!pooled.empty()) groups.emplace_back("__pooled__", pooled);

    for (auto& [key, members] : groups) {
        SplitMix64 rng{seed ^ fnv1a64(key)};
        fisher_yates(members, rng);
        auto counts = largest_remainder(ratios, members.size());
        size_t idx = 0;
        for (size_t i = 0; i < counts[0]; ++i) split.assignment[members[idx++]] = Partition::Train;
        for (size_t i = 0; i < counts[1]; ++i)
            split.assignment[members[idx++]] = Partition::Validation;
        for (size_t i = 0; i < counts[2]; ++i) split.assignment[members[idx++]] = Partition::Test;
    }
    return split;
}

std::string serialize_split(const DataSplit& split) {
    ordered_json j;
    j["seed"] = split.seed;
    j["ratios"] = {split.ratios.train, split.ratios.validation, split.ratios.test};
    ordered_json a = ordered_json::object();
    for (const auto& [unit, p] : split.assignment) a[unit] = partition_name(p);
    j["assignment"] = std::move(a);
    j["warnings"] = split.warnings;
    return j.dump(2) + "\n";
}

DataSplit parse_split(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ParseError(std::string("split file is not valid JSON: ") + e.what());
    }
    DataSplit split;
    split.seed = j.at("seed").get<std::uint64_t>();
    split.ratios.train = j.at("ratios").at(0).get<double>();
    split.ratios.validation = j.at("ratios").at(1).get<double>();
    split.ratios.test = j.at("ratios").at(2).get<double>();
    for (const auto& [unit, p] : j.at("assignment").items())
        split.assignment[unit] = partition_from_string(p.get<std::string>());
    if (j.contains("warnings"))
        for (const auto& w : j.at("warnings")) split.warnings.push_back(w.get<std::string>());
    return split;
}

}  // namespace annobench
