#include "annobench/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>

namespace annobench {

namespace {
constexpr const char* kSentinelLabel = "__noncompliant__";
}

long long ConfusionMatrix::total() const {
    long long t = 0;
    for (const auto& row : counts)
        for (long long c : row) t += c;
    return t;
}

long long ConfusionMatrix::trace() const {
    long long t = 0;
    for (size_t i = 0; i < counts.size(); ++i) t += counts[i][i];
    return t;
}

long long ConfusionMatrix::row_sum(size_t i) const {
    return std::accumulate(counts[i].begin(), counts[i].end(), 0LL);
}

long long ConfusionMatrix::col_sum(size_t j) const {
    long long t = 0;
    for (const auto& row : counts) t += row[j];
    return t;
}

ConfusionMatrix confusion_matrix(const std::vector<std::pair<std::string, std::string>>& pairs,
                                 const std::vector<std::string>& labelset) {
    ConfusionMatrix m;
    m.labels = labelset;
    m.counts.assign(labelset.size(), std::vector<long long>(labelset.size(), 0));
    std::map<std::string, size_t> index;
    for (size_t i = 0; i < labelset.size(); ++i) index[labelset[i]] = i;
    for (const auto& [gold, pred] : pairs) {
        auto gi = index.find(gold);
        auto pi = index.find(pred);
        if (gi == index.end())
            throw std::invalid_argument("confusion_matrix: gold value '" + gold +
                                        "' outside labelset");
        if (pi == index.end())
            throw std::invalid_argument("confusion_matrix: predicted value '" + pred +
                                        "' outside labelset");
        m.counts[gi->second][pi->second] += 1;
    }
    return m;
}

ClassificationMetrics classification_metrics(const ConfusionMatrix& m) {
    const long long total = m.total();
    if (total == 0) throw std::invalid_argument("classification_metrics: empty matrix");

    ClassificationMetrics out;
    out.accuracy = static_cast<double>(m.trace()) / static_cast<double>(total);

    double sum_p = 0, sum_r = 0, sum_f = 0;
    size_t included = 0;
    for (size_t c = 0; c < m.size(); ++c) {
        const long long tp = m.counts[c][c];
        const long long actual = m.row_sum(c);       // tp + fn
        const long long predicted = m.col_sum(c);    // tp + fp
        if (actual == 0 && predicted == 0) continue; // class absent entirely
        ++included;
        double p = 0, r = 0;
        if (predicted > 0)
            p = static_cast<double>(tp) / static_cast<double>(predicted);
        else
            out.zero_denominator_flag = true;
        if (actual > 0)
            r = static_cast<double>(tp) / static_cast<double>(actual);
        else
            out.zero_denominator_flag = true;
        double f = (p + r > 0) ? 2.0 * p * r / (p + r) : 0.0;
        sum_p += p;
        sum_r += r;
        sum_f += f;
    }
    if (included == 0) throw std::invalid_argument("classification_metrics: no labelled classes");
    out.macro_precision = sum_p / static_cast<double>(included);
    out.macro_recall = sum_r / static_cast<double>(included);
    out.macro_f1 = sum_f / static_cast<double>(included);
    return out;
}

KappaResult cohen_kappa(const ConfusionMatrix& m) {
    const long long total = m.total();
    if (total == 0) throw std::invalid_argument("cohen_kappa: empty matrix");
    const double n = static_cast<double>(total);
    const double p_o = static_cast<double>(m.trace()) / n;
    double p_e = 0;
    for (size_t c = 0; c < m.size(); ++c)
        p_e += (static_cast<double>(m.row_sum(c)) / n) * (static_cast<double>(m.col_sum(c)) / n);
    if (p_e >= 1.0 - 1e-15) {
        // single label in both margins: kappa undefined by formula
        return {p_o >= 1.0 - 1e-15 ? 1.0 : 0.0, true};
    }
    return {(p_o - p_e) / (1.0 - p_e), false};
}

std::optional<double> quadratic_weighted_kappa(const ConfusionMatrix& m) {
    const long long total = m.total();
    if (total == 0) throw std::invalid_argument("quadratic_weighted_kappa: empty matrix");
    const size_t k = m.size();
    if (k < 2) throw std::invalid_argument("quadratic_weighted_kappa: needs >= 2 ordinal labels");
    const double n = static_cast<double>(total);
    const double denom = static_cast<double>((k - 1) * (k - 1));
    double num = 0, den = 0;
    for (size_t i = 0; i < k; ++i) {
        for (size_t j = 0; j < k; ++j) {
            const double d = static_cast<double>(i) - static_cast<double>(j);
            const double w = d * d / denom;
            const double expected =
                static_cast<double>(m.row_sum(i)) * static_cast<double>(m.col_sum(j)) / n;
            num += w * static_cast<double>(m.counts[i][j]);
            den += w * expected;
        }
    }
    if (den <= 0) return std::nullopt;  // degenerate margins
    return 1.0 - num / den;
}

const char* alpha_level_name(AlphaLevel level) {
    switch (level) {
        case AlphaLevel::Nominal: return "nominal";
        case AlphaLevel::Ordinal: return "ordinal";
        case AlphaLevel::Interval: return "interval";
    }
    return "?";
}

std::optional<double> krippendorff_alpha(
    const std::vector<std::pair<std::string, std::string>>& pairs,
    const std::vector<std::string>& labelset, AlphaLevel level,
    const std::map<std::string, double>& numeric) {
    if (pairs.empty()) return std::nullopt;

    const size_t k = labelset.size();
    std::map<std::string, size_t> index;
    for (size_t i = 0; i < k; ++i) index[labelset[i]] = i;

    // Coincidence matrix for two coders: each unit contributes both ordered
    // pairs with weight 1/(m_u - 1) = 1.
    std::vector<std::vector<double>> o(k, std::vector<double>(k, 0.0));
    for (const auto& [gold, pred] : pairs) {
        auto gi = index.find(gold);
        auto pi = index.find(pred);
        if (gi == index.end() || pi == index.end())
            throw std::invalid_argument("krippendorff_alpha: value outside labelset");
        o[gi->second][pi->second] += 1.0;
        o[pi->second][gi->second] += 1.0;
    }
    std::vector<double> margin(k, 0.0);
    double n = 0;
    for (size_t c = 0; c < k; ++c) {
        for (size_t j = 0; j < k; ++j) margin[c] += o[c][j];
        n += margin[c];
    }
    if (n <= 1) return std::nullopt;

    auto numeric_of = [&](size_t c) -> double {
        auto it = numeric.find(labelset[c]);
        return it != numeric.end() ? it->second : static_cast<double>(c);
    };

    // Squared distance between label indices c <= j per measurement level.
    auto delta2 = [&](size_t c, size_t j) -> double {
        if (c == j) return 0.0;
        switch (level) {
            case AlphaLevel::Nominal: return 1.0;
            case AlphaLevel::Interval: {
                const double d = numeric_of(c) - numeric_of(j);
                return d * d;
            }
            case AlphaLevel::Ordinal: {
                // Cumulative coincidence margins between the two ranks.
                double s = 0;
                for (size_t g = std::min(c, j); g <= std::max(c, j); ++g) s += margin[g];
                s -= (margin[c] + margin[j]) / 2.0;
                return s * s;
            }
        }
        return 0.0;
    };

    double d_o = 0, d_e = 0;
    for (size_t c = 0; c < k; ++c) {
        for (size_t j = 0; j < k; ++j) {
            d_o += o[c][j] * delta2(c, j);
            d_e += margin[c] * margin[j] * delta2(c, j);
        }
    }
    d_o /= n;
    d_e /= n * (n - 1.0);
    if (d_e <= 0) return std::nullopt;  // no variation to disagree about
    return 1.0 - d_o / d_e;
}

namespace {

std::vector<double> mid_ranks(const std::vector<double>& v) {
    const size_t n = v.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(n, 0.0);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
        const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (size_t t = i; t <= j; ++t) ranks[order[t]] = r;
        i = j + 1;
    }
    return ranks;
}

std::optional<double> pearson(const std::vector<double>& x, const std::vector<double>& y) {
    const size_t n = x.size();
    double mx = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
    double my = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
    double sxy = 0, sxx = 0, syy = 0;
    for (size_t i = 0; i < n; ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx <= 0 || syy <= 0) return std::nullopt;  // constant input
    return sxy / std::sqrt(sxx * syy);
}

}  // namespace

std::optional<double> spearman_rho(const std::vector<double>& golds,
                                   const std::vector<double>& preds) {
    if (golds.size() != preds.size())
        throw std::invalid_argument("spearman_rho: length mismatch");
    if (golds.size() < 2) return std::nullopt;
    return pearson(mid_ranks(golds), mid_ranks(preds));
}

// ---------------------------------------------------------------------------
// Per-item evaluation

const char* noncompliance_policy_name(NonCompliancePolicy p) {
    return p == NonCompliancePolicy::Exclude ? "exclude" : "penalize";
}

NonCompliancePolicy noncompliance_policy_from_string(const std::string& s) {
    if (s == "exclude") return NonCompliancePolicy::Exclude;
    if (s == "penalize") return NonCompliancePolicy::Penalize;
    throw std::invalid_argument("unknown non-compliance policy '" + s + "'");
}

namespace {

std::vector<std::string> canonical_labelset(const AnnotationItem& item) {
    if (std::holds_alternative<BinaryKind>(item.kind)) return {"1", "0"};
    if (const auto* cat = std::get_if<CategoricalKind>(&item.kind)) return cat->options;
    const auto& lik = std::get<LikertKind>(item.kind);
    std::vector<std::string> out;
    for (int v = lik.min; v <= lik.max; ++v) out.push_back(std::to_string(v));
    return out;
}

std::vector<std::string> likert_ascending(const AnnotationItem& item) {
    return canonical_labelset(item);  // already ascending for Likert
}

}  // namespace

MetricReport evaluate_item(const AnnotationItem& item, const Codebook& cb,
                           const GroundTruthDataset& truth,
                           const std::map<std::string, ParsedAnnotation>& parsed,
                           const EvalOptions& options,
                           const std::map<std::string, ParsedAnnotation>* parent_parsed) {
    MetricReport report;
    report.item_id = item.id;
    report.annotation_kind = kind_name(item.kind);

    // Conditioning set: which units the item applies to.
    std::set<std::string> applicable;
    if (options.conditioning == NestedConditioning::GoldParent || !item.dependency) {
        applicable = applicable_units(item, cb, truth);
    } else {
        if (!parent_parsed)
            throw std::invalid_argument(
                "evaluate_item: predicted-parent conditioning needs parent predictions");
        for (const auto& [unit_id, pa] : *parent_parsed) {
            if (pa.compliant() &&
                value_equals(*pa.value, item.dependency->required_parent_value))
                applicable.insert(unit_id);
        }
        report.flags.push_back("model-path conditioning");
    }

    const bool is_likert = std::holds_alternative<LikertKind>(item.kind);
    std::vector<std::string> labels = canonical_labelset(item);

    std::vector<std::pair<std::string, std::string>> pairs;           // policy-applied
    std::vector<std::pair<std::string, std::string>> compliant_pairs; // always compliant-only
    long long compliant = 0;

    for (const auto& [unit_id, text] : truth.units) {
        if (!applicable.count(unit_id)) continue;
        auto gold_it = truth.resolved.find({unit_id, item.id});
        if (gold_it == truth.resolved.end()) continue;  // no gold label: unresolved or missing
        const std::string gold = value_to_string(gold_it->second);

        auto pit = parsed.find(unit_id);
        if (pit == parsed.end()) {
            report.n_missing += 1;  // coverage gap, distinct from non-compliance
            continue;
        }
        const ParsedAnnotation& pa = pit->second;
        if (pa.compliant()) {
            compliant += 1;
            const std::string pred = value_to_string(*pa.value);
            pairs.emplace_back(gold, pred);
            compliant_pairs.emplace_back(gold, pred);
        } else {
            report.n_noncompliant += 1;
            report.noncompliance_by_reason[noncompliance_reason_name(*pa.reason)] += 1;
            if (options.policy == NonCompliancePolicy::Penalize)
                pairs.emplace_back(gold, kSentinelLabel);
        }
    }

    const long long attempted = compliant + report.n_noncompliant;
    if (attempted > 0)
        report.compliance_rate = static_cast<double>(compliant) / static_cast<double>(attempted);

    std::vector<std::string> matrix_labels = labels;
    if (options.policy == NonCompliancePolicy::Penalize && report.n_noncompliant > 0)
        matrix_labels.push_back(kSentinelLabel);

    report.matrix = confusion_matrix(pairs, matrix_labels);
    report.n_evaluated = report.matrix.total();
    if (report.n_evaluated == 0) return report;  // nothing to score; counts still reported

    auto cls = classification_metrics(report.matrix);
    report.accuracy = cls.accuracy;
    report.macro_precision = cls.macro_precision;
    report.macro_recall = cls.macro_recall;
    report.macro_f1 = cls.macro_f1;
    if (cls.zero_denominator_flag)
        report.flags.push_back("zero-denominator class contributed 0 to a macro mean");

    auto kappa = cohen_kappa(report.matrix);
    report.cohen_kappa = kappa.value;
    if (kappa.degenerate) report.flags.push_back("degenerate chance agreement in kappa");

    // Alpha level: nominal for binary/categorical, ordinal for Likert. The
    // penalize sentinel has no rank, so ordinal-level metrics always score
    // compliant pairs only.
    if (is_likert) {
        std::map<std::string, double> numeric;
        for (const auto& l : labels) numeric[l] = std::stod(l);
        report.krippendorff_alpha =
            krippendorff_alpha(compliant_pairs, likert_ascending(item), AlphaLevel::Ordinal, numeric);
        if (!compliant_pairs.empty()) {
            auto ordinal_matrix = confusion_matrix(compliant_pairs, likert_ascending(item));
            report.quadratic_weighted_kappa = quadratic_weighted_kappa(ordinal_matrix);
            std::vector<double> g, p;
            for (const auto& [gold, pred] : compliant_pairs) {
                g.push_back(std::stod(gold));
                p.push_back(std::stod(pred));
            }
            report.spearman_rho = spearman_rho(g, p);
        }
        if (options.policy == NonCompliancePolicy::Penalize && report.n_noncompliant > 0)
            report.flags.push_back("ordinal metrics scored over compliant pairs only");
    } else {
        report.krippendorff_alpha =
            krippendorff_alpha(pairs, matrix_labels, AlphaLevel::Nominal);
    }
    return report;
}

MetricReport aggregate_item_metrics(const std::vector<MetricReport>& reports) {
    if (reports.empty())
        throw std::invalid_argument("aggregate_item_metrics: empty report list");
    for (const auto& r : reports)
        if (r.annotation_kind != reports.front().annotation_kind)
            throw std::invalid_argument(
                "aggregate_item_metrics: reports must share an annotation kind");

    MetricReport out;
    out.annotation_kind = reports.front().annotation_kind;
    for (size_t i = 0; i < reports.size(); ++i)
        out.item_id += (i ? "+" : "") + reports[i].item_id;

    auto mean_of = [&](auto field) -> std::optional<double> {
        double sum = 0;
        int n = 0;
        for (const auto& r : reports) {
            if (auto v = field(r)) {
                sum += *v;
                ++n;
            }
        }
        if (n == 0) return std::nullopt;
        return sum / n;
    };
    out.accuracy = mean_of([](const MetricReport& r) { return r.accuracy; });
    out.macro_precision = mean_of([](const MetricReport& r) { return r.macro_precision; });
    out.macro_recall = mean_of([](const MetricReport& r) { return r.macro_recall; });
    out.macro_f1 = mean_of([](const MetricReport& r) { return r.macro_f1; });
    out.cohen_kappa = mean_of([](const MetricReport& r) { return r.cohen_kappa; });
    out.krippendorff_alpha = mean_of([](const MetricReport& r) { return r.krippendorff_alpha; });
    out.quadratic_weighted_kappa =
        mean_of([](const MetricReport& r) { return r.quadratic_weighted_kappa; });
    out.spearman_rho = mean_of([](const MetricReport& r) { return r.spearman_rho; });
    out.compliance_rate = mean_of([](const MetricReport& r) { return r.compliance_rate; });

    std::set<std::string> flags;
    for (const auto& r : reports) {
        out.n_evaluated += r.n_evaluated;
        out.n_noncompliant += r.n_noncompliant;
        out.n_missing += r.n_missing;
        for (const auto& [reason, count] : r.noncompliance_by_reason)
            out.noncompliance_by_reason[reason] += count;
        flags.insert(r.flags.begin(), r.flags.end());
    }
    out.flags.assign(flags.begin(), flags.end());
    return out;
}

}  // namespace annobench
