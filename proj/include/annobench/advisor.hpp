#pragma once

#include <optional>
#include <string>
#include <vector>

namespace annobench {

// Validation workflow advisor. Stages, in order:
//   1  shortlist model families by efficiency constraints
//   2  run candidates zero-shot with standard prompting on validation data
//   3  select the best-performing model on the task
//   4  test few-shot on the selected model
//   5  test prompt styles only if performance remains unsatisfactory
// Recommendations cite the triggering numbers and never auto-execute.

struct EfficiencyConstraints {
    std::optional<double> max_kwh_per_query;
    std::optional<double> max_avg_s_per_query;
};

struct FamilyEfficiency {
    std::string family;
    std::optional<double> kwh_per_query;
    std::optional<double> avg_s_per_query;
};

struct ModelScore {
    std::string model;
    double macro_f1 = 0.0;
};

struct FewShotComparison {
    std::string model;
    double zero_shot_f1 = 0.0;
    double few_shot_f1 = 0.0;
};

struct AdvisorInput {
    double satisfactory_f1 = 0.7;
    std::optional<EfficiencyConstraints> constraints;
    std::vector<FamilyEfficiency> stage1_family_efficiency;
    std::vector<ModelScore> stage2_zero_shot;
    std::optional<FewShotComparison> stage4_few_shot;
};

struct StageRecommendation {
    int stage = 0;
    std::string decision;
    std::string rationale;  // cites the triggering numbers
};

struct AdvisorReport {
    std::vector<StageRecommendation> recommendations;
    int next_stage = 1;      // 0 when the workflow is complete
    bool advisory_only = true;
};

/// Throws std::invalid_argument when a stage's prerequisite is missing.
AdvisorReport advise(const AdvisorInput& input);

AdvisorInput parse_advisor_input(const std::string& json_text);
std::string serialize_advisor_report(const AdvisorReport& report);

}  // namespace annobench
