#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "annobench/codebook.hpp"
#include "annobench/parser.hpp"

namespace annobench {

/// Rows are ground truth, columns are predictions.
struct ConfusionMatrix {
    std::vector<std::string> labels;
    std::vector<std::vector<long long>> counts;

    long long total() const;
    long long trace() const;
    long long row_sum(size_t i) const;
    long long col_sum(size_t j) const;
    size_t size() const { return labels.size(); }
};

ConfusionMatrix confusion_matrix(const std::vector<std::pair<std::string, std::string>>& pairs,
                                 const std::vector<std::string>& labelset);

struct ClassificationMetrics {
    double accuracy = 0.0;
    double macro_precision = 0.0;
    double macro_recall = 0.0;
    double macro_f1 = 0.0;
    bool zero_denominator_flag = false;  // some class contributed a forced 0
};

/// Accuracy plus macro-averaged precision/recall/F1. Classes absent from
/// both margins are excluded from the macro mean; a zero denominator makes
/// that class contribute 0 to the affected metric.
ClassificationMetrics classification_metrics(const ConfusionMatrix& m);

struct KappaResult {
    double value = 0.0;
    bool degenerate = false;  // chance agreement was 1
};

KappaResult cohen_kappa(const ConfusionMatrix& m);

/// Quadratic weighted kappa over ordinal labels in matrix order.
/// nullopt when expected disagreement is zero (single label in both margins).
std::optional<double> quadratic_weighted_kappa(const ConfusionMatrix& m);

enum class AlphaLevel { Nominal, Ordinal, Interval };

const char* alpha_level_name(AlphaLevel level);

/// Krippendorff's alpha via the coincidence-matrix formulation for a
/// two-coder reliability setup (gold vs model). `values` holds per-unit
/// label indices into `labelset`; `numeric` carries the numeric magnitude
/// per label for the interval level (label index used when absent).
std::optional<double> krippendorff_alpha(
    const std::vector<std::pair<std::string, std::string>>& pairs,
    const std::vector<std::string>& labelset, AlphaLevel level,
    const std::map<std::string, double>& numeric = {});

/// Pearson correlation of mid-ranks. nullopt when either side is constant
/// or fewer than two pairs exist.
std::optional<double> spearman_rho(const std::vector<double>& golds,
                                   const std::vector<double>& preds);

// ---------------------------------------------------------------------------
// Per-item evaluation

enum class NonCompliancePolicy { Exclude, Penalize };

const char* noncompliance_policy_name(NonCompliancePolicy p);
NonCompliancePolicy noncompliance_policy_from_string(const std::string& s);

/// Ground-truth conditioning is the default for nested items; predicted-path
/// conditioning is a separately labelled optional view.
enum class NestedConditioning { GoldParent, PredictedParent };

struct EvalOptions {
    NonCompliancePolicy policy = NonCompliancePolicy::Exclude;
    NestedConditioning conditioning = NestedConditioning::GoldParent;
};

struct MetricReport {
    std::string item_id;
    std::string annotation_kind;  // binary | categorical | likert

    std::optional<double> accuracy;
    std::optional<double> macro_precision;
    std::optional<double> macro_recall;
    std::optional<double> macro_f1;
    std::optional<double> cohen_kappa;
    std::optional<double> krippendorff_alpha;
    std::optional<double> quadratic_weighted_kappa;  // Likert only
    std::optional<double> spearman_rho;              // Likert only

    long long n_evaluated = 0;     // rows in the confusion matrix
    long long n_noncompliant = 0;
    long long n_missing = 0;       // applicable units never queried (coverage gap)
    std::optional<double> compliance_rate;
    std::map<std::string, long long> noncompliance_by_reason;

    std::vector<std::string> flags;  // degenerate kappa, zero denominators, ...
    ConfusionMatrix matrix;
};

/// Evaluate one item against ground truth. Evaluation is restricted to
/// units where the item applies (per the resolved parent value) and a gold
/// label exists. `parent_parsed` supplies the parent item's predictions and
/// is only consulted under predicted-parent conditioning.
MetricReport evaluate_item(const AnnotationItem& item, const Codebook& cb,
                           const GroundTruthDataset& truth,
                           const std::map<std::string, ParsedAnnotation>& parsed,
                           const EvalOptions& options = {},
                           const std::map<std::string, ParsedAnnotation>* parent_parsed = nullptr);

/// Unweighted field-wise mean over same-kind item reports. Count fields are
/// summed; not-applicable fields are excluded from their mean.
MetricReport aggregate_item_metrics(const std::vector<MetricReport>& reports);

}  // namespace annobench
