#include "annobench/advisor.hpp"

#include <algorithm>
#include <cstdio>
#include <stdexcept>

#include <json.hpp>

#include "annobench/value.hpp"

namespace annobench {

using nlohmann::json;

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    return buf;
}

}  // namespace

AdvisorReport advise(const AdvisorInput& input) {
    AdvisorReport report;
    std::optional<double> best_f1;
    std::string best_model;

    if (input.constraints) {
        if (input.stage1_family_efficiency.empty())
            throw std::invalid_argument(
                "stage 1 needs per-family efficiency measurements to apply constraints");
        std::vector<std::string> keep, drop;
        for (const auto& fam : input.stage1_family_efficiency) {
            bool ok = true;
            if (input.constraints->max_kwh_per_query && fam.kwh_per_query &&
                *fam.kwh_per_query > *input.constraints->max_kwh_per_query)
                ok = false;
            if (input.constraints->max_avg_s_per_query && fam.avg_s_per_query &&
                *fam.avg_s_per_query > *input.constraints->max_avg_s_per_query)
                ok = false;
            (ok ? keep : drop).push_back(fam.family);
        }
        std::string keep_list, drop_list;
        for (const auto& f : keep) keep_list += (keep_list.empty() ? "" : ", ") + f;
        for (const auto& f : drop) drop_list += (drop_list.empty() ? "" : ", ") + f;
        report.recommendations.push_back(
            {1, "shortlist model families: " + (keep_list.empty() ? "(none fit)" : keep_list),
             "efficiency constraints applied before any performance evaluation" +
                 (drop_list.empty() ? std::string{}
                                    : "; excluded for exceeding limits: " + drop_list)});
        report.next_stage = 2;
    }

    if (!input.stage2_zero_shot.empty()) {
        auto best = std::max_element(
            input.stage2_zero_shot.begin(), input.stage2_zero_shot.end(),
            [](const ModelScore& a, const ModelScore& b) { return a.macro_f1 < b.macro_f1; });
        best_model = best->model;
        best_f1 = best->macro_f1;
        std::string field;
        for (const auto& m : input.stage2_zero_shot)
            field += (field.empty() ? "" : ", ") + m.model + "=" + fmt(m.macro_f1);
        report.recommendations.push_back(
            {3, "select model '" + best_model + "' for stage 4",
             "best zero-shot standard macro-F1 on the validation sample: " + field});
        report.next_stage = 4;
    }

    if (input.stage4_few_shot) {
        if (input.stage2_zero_shot.empty())
            throw std::invalid_argument(
                "stage 4 results supplied but stage 2 (zero-shot comparison) is missing");
        const auto& c = *input.stage4_few_shot;
        if (c.few_shot_f1 > c.zero_shot_f1) {
            report.recommendations.push_back(
                {4, "adopt few-shot prompting for '" + c.model + "'",
                 "few-shot macro-F1 " + fmt(c.few_shot_f1) + " > zero-shot " +
                     fmt(c.zero_shot_f1)});
            best_f1 = std::max(best_f1.value_or(0.0), c.few_shot_f1);
        } else {
            report.recommendations.push_back(
                {4, "retain zero-shot prompting for '" + c.model + "'",
                 "few-shot macro-F1 " + fmt(c.few_shot_f1) + " does not beat zero-shot " +
                     fmt(c.zero_shot_f1) + "; examples can degrade strong zero-shot performers"});
            best_f1 = std::max(best_f1.value_or(0.0), c.zero_shot_f1);
        }

        if (best_f1 && *best_f1 >= input.satisfactory_f1) {
            report.recommendations.push_back(
                {5, "skip prompt style experiments",
                 "best macro-F1 " + fmt(*best_f1) + " already meets the satisfactory threshold " +
                     fmt(input.satisfactory_f1)});
            report.next_stage = 0;
        } else if (best_f1) {
            report.recommendations.push_back(
                {5, "test persona and chain-of-thought styles on '" + c.model + "'",
                 "best macro-F1 " + fmt(*best_f1) + " is below the satisfactory threshold " +
                     fmt(input.satisfactory_f1) +
                     "; style effects are erratic, so hold out a test partition"});
            report.next_stage = 5;
        }
    }

    if (report.recommendations.empty())
        throw std::invalid_argument("no stage results supplied; nothing to recommend");
    return report;
}

AdvisorInput parse_advisor_input(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ParseError(std::string("advisor input is not valid JSON: ") + e.what());
    }
    AdvisorInput input;
    try {
        input.satisfactory_f1 = j.value("satisfactory_f1", 0.7);
        if (j.contains("efficiency_constraints")) {
            EfficiencyConstraints c;
            const auto& cj = j.at("efficiency_constraints");
            if (cj.contains("max_kwh_per_query"))
                c.max_kwh_per_query = cj.at("max_kwh_per_query").get<double>();
            if (cj.contains("max_avg_s_per_query"))
                c.max_avg_s_per_query = cj.at("max_avg_s_per_query").get<double>();
            input.constraints = c;
        }
        for (const auto& fj : j.value("stage1_family_efficiency", json::array())) {
            FamilyEfficiency f;
            f.family = fj.at("family").get<std::string>();
            if (fj.contains("kwh_per_query")) f.kwh_per_query = fj.at("kwh_per_query").get<double>();
            if (fj.contains("avg_s_per_query"))
                f.avg_s_per_query = fj.at("avg_s_per_query").get<double>();
            input.stage1_family_efficiency.push_back(std::move(f));
        }
        for (const auto& mj : j.value("stage2_zero_shot", json::array()))
            input.stage2_zero_shot.push_back(
                {mj.at("model").get<std::string>(), mj.at("macro_f1").get<double>()});
        if (j.contains("stage4_few_shot")) {
            const auto& fj = j.at("stage4_few_shot");
            input.stage4_few_shot = FewShotComparison{fj.at("model").get<std::string>(),
                                                      fj.at("zero_shot_f1").get<double>(),
                                                      fj.at("few_shot_f1").get<double>()};
        }
    } catch (const json::exception& e) {
        throw ParseError(std::string("advisor input has wrong shape: ") + e.what());
    }
    return input;
}

std::string serialize_advisor_report(const AdvisorReport& report) {
    nlohmann::ordered_json j;
    j["advisory_only"] = report.advisory_only;
    j["next_stage"] = report.next_stage;
    j["recommendations"] = nlohmann::ordered_json::array();
    for (const auto& r : report.recommendations)
        j["recommendations"].push_back(
            {{"stage", r.stage}, {"decision", r.decision}, {"rationale", r.rationale}});
    return j.dump(2) + "\n";
}

}  // namespace annobench
