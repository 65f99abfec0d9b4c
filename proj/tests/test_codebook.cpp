#include <doctest.h>

#include <algorithm>
#include <fstream>

#include "annobench/codebook.hpp"
#include "support/oracles.hpp"

using namespace annobench;

namespace {
std::string fixture(const std::string& rel) { return std::string(ANNOBENCH_FIXTURES_DIR) + "/" + rel; }
}

TEST_CASE("approval codebook fixture loads") {
    auto cb = load_codebook(fixture("codebooks/approval.json"));
    CHECK(cb.id == "approval");
    REQUIRE(cb.sections.size() == 1);
    REQUIRE(cb.sections[0].items.size() == 1);
    const auto& item = cb.sections[0].items[0];
    const auto* lik = std::get_if<LikertKind>(&item.kind);
    REQUIRE(lik != nullptr);
    CHECK(lik->min == 1);
    CHECK(lik->max == 5);
    CHECK(item.examples.size() == 5);
    CHECK(item.examples[0].display_tag.value() == "Full approval");
}

TEST_CASE("psych distance fixture carries the nesting structure") {
    auto cb = load_codebook(fixture("codebooks/psych_distance.json"));
    REQUIRE(cb.sections.size() == 1);
    REQUIRE(cb.sections[0].items.size() == 3);
    const auto* spec = cb.find_item("specificity");
    REQUIRE(spec);
    REQUIRE(spec->dependency.has_value());
    CHECK(spec->dependency->parent_item_id == "presence");
    CHECK(std::get<int>(spec->dependency->required_parent_value) == 1);
    const auto* prox = cb.find_item("proximity");
    REQUIRE(prox);
    REQUIRE(prox->dependency.has_value());
    CHECK(prox->dependency->parent_item_id == "specificity");
    CHECK(std::get<std::string>(prox->dependency->required_parent_value) == "Specific");
}

TEST_CASE("all four shipped codebooks validate") {
    for (const char* name :
         {"approval.json", "psych_distance.json", "econ_sentiment.json", "manifesto_topic.json",
          "toy_polarity.json"}) {
        CAPTURE(name);
        CHECK_NOTHROW(load_codebook(fixture(std::string("codebooks/") + name)));
    }
}

TEST_CASE("codebook validation diagnostics") {
    SUBCASE("inverted likert bounds") {
        std::string bad = R"({"schema_version":1,"id":"x","title":"x","sections":[
            {"name":"s","instructions":"i","items":[
              {"id":"a","name":"A","tooltip":"t","kind":{"type":"likert","min":5,"max":1},"examples":[]}]}]})";
        try {
            parse_codebook(bad);
            FAIL("expected ValidationError");
        } catch (const ValidationError& e) {
            REQUIRE(e.diagnostics.size() == 1);
            CHECK(e.diagnostics[0].where == "item a");
            CHECK(e.diagnostics[0].message == "Likert min < max");
        }
    }
    SUBCASE("duplicate item ids and sections named twice") {
        std::string bad = R"({"schema_version":1,"id":"x","title":"x","sections":[
            {"name":"s","instructions":"i","items":[
              {"id":"a","name":"A","tooltip":"t","kind":{"type":"binary"},"examples":[]},
              {"id":"a","name":"A2","tooltip":"t","kind":{"type":"binary"},"examples":[]}]},
            {"name":"s","instructions":"i","items":[
              {"id":"b","name":"B","tooltip":"t","kind":{"type":"binary"},"examples":[]}]}]})";
        CHECK_THROWS_AS(parse_codebook(bad), ValidationError);
    }
    SUBCASE("case-colliding categorical options") {
        std::string bad = R"({"schema_version":1,"id":"x","title":"x","sections":[
            {"name":"s","instructions":"i","items":[
              {"id":"a","name":"A","tooltip":"t",
               "kind":{"type":"categorical","options":["Yes","yes"]},"examples":[]}]}]})";
        CHECK_THROWS_AS(parse_codebook(bad), ValidationError);
    }
    SUBCASE("dependency must point backwards") {
        std::string bad = R"({"schema_version":1,"id":"x","title":"x","sections":[
            {"name":"s","instructions":"i","items":[
              {"id":"a","name":"A","tooltip":"t","kind":{"type":"binary"},"examples":[],
               "dependency":{"parent_item_id":"b","required_parent_value":1}},
              {"id":"b","name":"B","tooltip":"t","kind":{"type":"binary"},"examples":[]}]}]})";
        CHECK_THROWS_AS(parse_codebook(bad), ValidationError);
    }
    SUBCASE("example label must fit the kind") {
        std::string bad = R"({"schema_version":1,"id":"x","title":"x","sections":[
            {"name":"s","instructions":"i","items":[
              {"id":"a","name":"A","tooltip":"t","kind":{"type":"likert","min":1,"max":5,"anchor_text":""},
               "examples":[{"text":"hello","label":9}]}]}]})";
        CHECK_THROWS_AS(parse_codebook(bad), ValidationError);
    }
    SUBCASE("malformed file is a parse error, not a validation error") {
        CHECK_THROWS_AS(parse_codebook("{not json"), ParseError);
    }
}

TEST_CASE("codebook round-trips through serialization") {
    for (const char* name : {"approval.json", "psych_distance.json", "manifesto_topic.json"}) {
        CAPTURE(name);
        auto cb = load_codebook(fixture(std::string("codebooks/") + name));
        auto text = serialize_codebook(cb);
        auto again = parse_codebook(text);
        CHECK(serialize_codebook(again) == text);
    }
}

TEST_CASE("resolve_majority") {
    CHECK(std::get<int>(resolve_majority({AnnotationValue{1}, AnnotationValue{1},
                                          AnnotationValue{0}})
                            .value()) == 1);
    CHECK(std::get<std::string>(
              resolve_majority({AnnotationValue{std::string("Specific")}}).value()) ==
          "Specific");
    CHECK_FALSE(resolve_majority({AnnotationValue{std::string("Proximate")},
                                  AnnotationValue{std::string("Distant")}})
                    .has_value());
    CHECK_THROWS_AS(resolve_majority({}), std::invalid_argument);

    SUBCASE("permutation invariance") {
        oracle::Rng rng(13);
        for (int trial = 0; trial < 30; ++trial) {
            std::vector<AnnotationValue> vals;
            const size_t n = 1 + rng.below(7);
            for (size_t i = 0; i < n; ++i) vals.push_back(AnnotationValue{int(rng.below(3))});
            auto base = resolve_majority(vals);
            for (int shuffle = 0; shuffle < 5; ++shuffle) {
                for (size_t i = vals.size(); i > 1; --i)
                    std::swap(vals[i - 1], vals[rng.below(i)]);
                auto again = resolve_majority(vals);
                CHECK(base.has_value() == again.has_value());
                if (base) CHECK(value_equals(*base, *again));
            }
        }
    }
}

TEST_CASE("dichotomize_ordinal") {
    CHECK(dichotomize_ordinal(3.4) == DichotomizedClass::Negative);
    CHECK(dichotomize_ordinal(7.0) == DichotomizedClass::Positive);
    CHECK(dichotomize_ordinal(5.0) == DichotomizedClass::Discard);
    CHECK(dichotomize_ordinal(4.0) == DichotomizedClass::Negative);   // boundary stays negative
    CHECK(dichotomize_ordinal(6.0) == DichotomizedClass::Positive);   // boundary stays positive
    CHECK(dichotomize_ordinal(4.5) == DichotomizedClass::Discard);    // whole open interval
    CHECK(dichotomize_ordinal(5.9) == DichotomizedClass::Discard);
    CHECK_THROWS_AS(dichotomize_ordinal(0.5), std::invalid_argument);
    CHECK_THROWS_AS(dichotomize_ordinal(9.5), std::invalid_argument);

    SUBCASE("monotone over non-discard outputs") {
        oracle::Rng rng(17);
        for (int trial = 0; trial < 200; ++trial) {
            double a = 1.0 + rng.unit() * 8.0;
            double b = 1.0 + rng.unit() * 8.0;
            if (a > b) std::swap(a, b);
            auto ca = dichotomize_ordinal(a);
            auto cb = dichotomize_ordinal(b);
            if (ca != DichotomizedClass::Discard && cb != DichotomizedClass::Discard)
                CHECK(static_cast<int>(ca) <= static_cast<int>(cb));
        }
    }
}

TEST_CASE("ground truth loading resolves coder annotations") {
    SUBCASE("majority over three coders in the psych fixture") {
        auto cb = load_codebook(fixture("codebooks/psych_distance.json"));
        auto truth = load_ground_truth(fixture("data/psych_distance_mini.json"), cb,
                                       Aggregation::Majority);
        CHECK(truth.units.size() == 16);
        // p02 was 2-1 for presence
        CHECK(std::get<int>(truth.resolved.at({"p02", "presence"})) == 1);
        CHECK(std::get<int>(truth.resolved.at({"p10", "presence"})) == 0);

        auto presence_units = applicable_units(*cb.find_item("presence"), cb, truth);
        CHECK(presence_units.size() == 16);
        auto spec_units = applicable_units(*cb.find_item("specificity"), cb, truth);
        CHECK(spec_units == std::set<std::string>{"p01", "p02", "p03", "p04", "p05", "p06"});
        auto prox_units = applicable_units(*cb.find_item("proximity"), cb, truth);
        CHECK(prox_units == std::set<std::string>{"p01", "p02", "p03", "p04"});
        // child applicability is a subset of the parent's
        for (const auto& u : prox_units) CHECK(spec_units.count(u) == 1);
    }

    SUBCASE("mean-dichotomize over the 9-point sentiment scale") {
        auto cb = load_codebook(fixture("codebooks/econ_sentiment.json"));
        auto truth = load_ground_truth(fixture("data/econ_sentiment_mini.csv"), cb,
                                       Aggregation::MeanDichotomize);
        CHECK(truth.units.size() == 10);
        CHECK(std::get<std::string>(truth.resolved.at({"e01", "positivity"})) == "Negative");
        CHECK(std::get<std::string>(truth.resolved.at({"e03", "positivity"})) == "Negative");
        CHECK(std::get<std::string>(truth.resolved.at({"e05", "positivity"})) == "Positive");
        CHECK(std::get<std::string>(truth.resolved.at({"e06", "positivity"})) == "Positive");
        // the open interval (4,6) is discarded
        CHECK(truth.resolved.count({"e09", "positivity"}) == 0);
        CHECK(truth.resolved.count({"e10", "positivity"}) == 0);
        // raw coder values are retained
        CHECK(truth.coder_annotations.size() == 70);
    }

    SUBCASE("single-coder CSV with resolved labels") {
        auto cb = load_codebook(fixture("codebooks/approval.json"));
        auto truth =
            load_ground_truth(fixture("data/approval_mini.csv"), cb, Aggregation::Resolved);
        CHECK(truth.units.size() == 12);
        CHECK(std::get<int>(truth.resolved.at({"a09", "approval"})) == 5);
    }

    SUBCASE("dependent value without a matching parent fails validation") {
        auto cb = load_codebook(fixture("codebooks/psych_distance.json"));
        GroundTruthDataset truth;
        truth.task_id = "psych-distance";
        truth.units.emplace_back("u1", "text");
        truth.resolved.emplace(std::make_pair(std::string("u1"), std::string("presence")),
                               AnnotationValue{0});
        truth.resolved.emplace(std::make_pair(std::string("u1"), std::string("specificity")),
                               AnnotationValue{std::string("Specific")});
        CHECK_THROWS_AS(validate_ground_truth(truth, cb), ValidationError);
    }

    SUBCASE("dependency on a value never present yields an empty set") {
        auto cb = load_codebook(fixture("codebooks/psych_distance.json"));
        GroundTruthDataset truth;
        truth.task_id = "psych-distance";
        for (int i = 0; i < 4; ++i) {
            std::string id = "u" + std::to_string(i);
            truth.units.emplace_back(id, "text");
            truth.resolved.emplace(std::make_pair(id, std::string("presence")),
                                   AnnotationValue{0});
        }
        CHECK(applicable_units(*cb.find_item("specificity"), cb, truth).empty());
    }
}

TEST_CASE("make_splits") {
    auto cb = load_codebook(fixture("codebooks/toy_polarity.json"));

    auto make_truth = [&](int n) {
        GroundTruthDataset truth;
        truth.task_id = "toy";
        for (int i = 0; i < n; ++i) {
            std::string id = "u" + std::to_string(1000 + i);
            truth.units.emplace_back(id, "text " + id);
            truth.resolved.emplace(std::make_pair(id, std::string("positive")),
                                   AnnotationValue{i % 2});
        }
        return truth;
    };

    SUBCASE("exact ratios on divisible n") {
        auto truth = make_truth(100);
        auto split = make_splits(truth, cb, {0.6, 0.2, 0.2}, 7);
        CHECK(split.units_in(Partition::Train).size() == 60);
        CHECK(split.units_in(Partition::Validation).size() == 20);
        CHECK(split.units_in(Partition::Test).size() == 20);
        CHECK(split.assignment.size() == 100);
    }
    SUBCASE("same call twice is identical") {
        auto truth = make_truth(87);
        auto a = make_splits(truth, cb, {0.6, 0.2, 0.2}, 7);
        auto b = make_splits(truth, cb, {0.6, 0.2, 0.2}, 7);
        CHECK(a.assignment == b.assignment);
        auto c = make_splits(truth, cb, {0.6, 0.2, 0.2}, 8);
        CHECK(a.assignment != c.assignment);
    }
    SUBCASE("stratified proportions within one unit of overall, by recount") {
        GroundTruthDataset truth;
        truth.task_id = "sent";
        for (int i = 0; i < 420; ++i) {
            std::string id = "s" + std::to_string(1000 + i);
            truth.units.emplace_back(id, "text " + id);
            // 61% negative, 39% positive, mirroring heavy class imbalance
            truth.resolved.emplace(std::make_pair(id, std::string("positive")),
                                   AnnotationValue{i % 100 < 39 ? 1 : 0});
        }
        auto split = make_splits(truth, cb, {0.5, 0.25, 0.25}, 1);
        const double ratios[3] = {0.5, 0.25, 0.25};
        for (int label = 0; label <= 1; ++label) {
            long long stratum_n = 0;
            long long by_part[3] = {0, 0, 0};
            for (const auto& [id, part] : split.assignment) {
                if (std::get<int>(truth.resolved.at({id, "positive"})) != label) continue;
                ++stratum_n;
                ++by_part[static_cast<int>(part)];
            }
            for (int p = 0; p < 3; ++p)
                CHECK(std::abs(by_part[p] - ratios[p] * double(stratum_n)) <= 1.0);
        }
    }
    SUBCASE("partitions are disjoint and exhaustive") {
        auto truth = make_truth(53);
        auto split = make_splits(truth, cb, {0.6, 0.2, 0.2}, 3);
        std::set<std::string> seen;
        for (auto p : {Partition::Train, Partition::Validation, Partition::Test})
            for (const auto& u : split.units_in(p)) CHECK(seen.insert(u).second);
        CHECK(seen.size() == 53);
    }
    SUBCASE("tiny stratum falls back to unstratified with a warning") {
        GroundTruthDataset truth;
        truth.task_id = "toy";
        for (int i = 0; i < 10; ++i) {
            std::string id = "u" + std::to_string(i);
            truth.units.emplace_back(id, "t");
            truth.resolved.emplace(std::make_pair(id, std::string("positive")),
                                   AnnotationValue{i == 0 ? 1 : 0});  // singleton stratum "1"
        }
        auto split = make_splits(truth, cb, {0.6, 0.2, 0.2}, 9);
        CHECK(split.assignment.size() == 10);
        REQUIRE_FALSE(split.warnings.empty());
        CHECK(split.warnings[0].find("stratum '1'") != std::string::npos);
    }
    SUBCASE("precondition violations") {
        auto truth = make_truth(10);
        CHECK_THROWS_AS(make_splits(truth, cb, {0.5, 0.3, 0.3}, 1), std::invalid_argument);
        CHECK_THROWS_AS(make_splits(truth, cb, {1.0, 0.0, 0.0}, 1), std::invalid_argument);
        GroundTruthDataset empty;
        CHECK_THROWS_AS(make_splits(empty, cb, {0.6, 0.2, 0.2}, 1), std::invalid_argument);
    }
    SUBCASE("split serialization round-trips") {
        auto truth = make_truth(20);
        auto split = make_splits(truth, cb, {0.6, 0.2, 0.2}, 5);
        auto again = parse_split(serialize_split(split));
        CHECK(again.assignment == split.assignment);
        CHECK(again.seed == split.seed);
    }
}
