#include "annobench/reporting.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

namespace annobench {

using nlohmann::json;
using nlohmann::ordered_json;

std::string format_metric(const std::optional<double>& v) {
    if (!v || std::isnan(*v)) return "NA";
    bool neg = *v < 0;
    const double scaled = std::abs(*v) * 1000.0;
    long long n = static_cast<long long>(std::floor(scaled));
    const double frac = scaled - static_cast<double>(n);
    // ties (within float noise of .0005) round half to even
    constexpr double eps = 1e-9;
    if (frac > 0.5 + eps)
        n += 1;
    else if (frac >= 0.5 - eps && (n % 2) != 0)
        n += 1;
    if (n == 0) neg = false;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s%lld.%03lld", neg ? "-" : "", n / 1000, n % 1000);
    return buf;
}

namespace {

std::string csv_quote(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        out += c;
    }
    out += "\"";
    return out;
}

std::string fmt6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

}  // namespace

std::string emit_metrics_table(const std::vector<EvalRow>& rows, TableFormat format) {
    std::vector<EvalRow> sorted = rows;
    std::sort(sorted.begin(), sorted.end(), [](const EvalRow& a, const EvalRow& b) {
        return std::tie(a.model_label, a.task_label) < std::tie(b.model_label, b.task_label);
    });

    const bool ordinal = std::any_of(sorted.begin(), sorted.end(), [](const EvalRow& r) {
        return r.report.quadratic_weighted_kappa.has_value() ||
               r.report.spearman_rho.has_value();
    });

    if (format == TableFormat::Json) {
        ordered_json out = ordered_json::array();
        for (const auto& r : sorted) {
            ordered_json j;
            j["model"] = r.model_label;
            j["task"] = r.task_label;
            auto put = [&](const char* key, const std::optional<double>& v) {
                j[key] = v ? ordered_json(*v) : ordered_json(nullptr);
            };
            put("f1", r.report.macro_f1);
            put("accuracy", r.report.accuracy);
            put("precision", r.report.macro_precision);
            put("recall", r.report.macro_recall);
            put("kappa", r.report.cohen_kappa);
            put("alpha", r.report.krippendorff_alpha);
            if (ordinal) {
                put("qwk", r.report.quadratic_weighted_kappa);
                put("rho", r.report.spearman_rho);
            }
            j["n_evaluated"] = r.report.n_evaluated;
            j["n_noncompliant"] = r.report.n_noncompliant;
            j["n_missing"] = r.report.n_missing;
            put("compliance_rate", r.report.compliance_rate);
            j["noncompliance_by_reason"] = r.report.noncompliance_by_reason;
            j["flags"] = r.report.flags;
            out.push_back(std::move(j));
        }
        return out.dump(2) + "\n";
    }

    std::string out = "Model,Task,F1,Accuracy,Precision,Recall,kappa,alpha";
    if (ordinal) out += ",QWK,rho";
    out += "\n";
    for (const auto& r : sorted) {
        out += csv_quote(r.model_label) + "," + csv_quote(r.task_label);
        out += "," + format_metric(r.report.macro_f1);
        out += "," + format_metric(r.report.accuracy);
        out += "," + format_metric(r.report.macro_precision);
        out += "," + format_metric(r.report.macro_recall);
        out += "," + format_metric(r.report.cohen_kappa);
        out += "," + format_metric(r.report.krippendorff_alpha);
        if (ordinal) {
            out += "," + format_metric(r.report.quadratic_weighted_kappa);
            out += "," + format_metric(r.report.spearman_rho);
        }
        out += "\n";
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reporting manifest

namespace {

constexpr const char* kSectionNames[] = {
    "model identity",    "quantisation",           "prompt text",
    "sampling hyperparameters", "learning approach", "hardware specification",
    "efficiency metrics"};

ordered_json tagged(const TaggedParam<double>& p) {
    return {{"value", p.value}, {"provenance", provenance_name(p.provenance)}};
}
ordered_json tagged(const TaggedParam<int>& p) {
    return {{"value", p.value}, {"provenance", provenance_name(p.provenance)}};
}

}  // namespace

ordered_json emit_manifest(const LoadedRun& run, const std::vector<RunRecord>& records,
                           const RunEvaluation& eval) {
    const auto& cfg = run.config;
    ordered_json m;
    m["run_id"] = cfg.run_id;
    m["grid_hash"] = run.grid_hash;
    m["evaluation_partition"] = partition_name(cfg.evaluation_partition);
    m["noncompliance_policy"] = noncompliance_policy_name(cfg.policies.noncompliance);

    ordered_json identity = ordered_json::array();
    ordered_json quant = ordered_json::array();
    ordered_json sampling = ordered_json::array();
    for (const auto& model : cfg.models) {
        identity.push_back({{"name", model.name},
                            {"version_string", model.version_tag},
                            {"parameter_count", model.parameter_count}});
        quant.push_back({{"model", model.name}, {"quantisation", model.quantisation}});
        sampling.push_back({{"model", model.name},
                            {"temperature", tagged(model.sampling.temperature)},
                            {"top_k", tagged(model.sampling.top_k)},
                            {"top_p", tagged(model.sampling.top_p)}});
    }
    m["model_identity"] = std::move(identity);
    m["quantisation"] = std::move(quant);
    m["sampling"] = std::move(sampling);

    // Representative template per (task, item, style, approach), rendered
    // with the literal placeholder so the disclosure is unit-independent.
    ordered_json prompt_text;
    prompt_text["template_version"] = kPromptTemplateVersion;
    ordered_json templates = ordered_json::array();
    for (const auto& task : run.tasks) {
        for (const auto* item : task.codebook.all_items()) {
            const Section* section = task.codebook.section_of(item->id);
            for (const auto& style : cfg.styles) {
                for (const auto& approach : cfg.approaches) {
                    if (approach.variant == LearningApproachVariant::FewShot &&
                        item->examples.empty())
                        continue;
                    auto rp = render_prompt(*item, *section, "<text to annotate>",
                                            "__template__", style, approach);
                    templates.push_back({{"task", task.spec.id},
                                         {"item", item->id},
                                         {"style", style.name()},
                                         {"approach", approach.name()},
                                         {"text", rp.text}});
                }
            }
        }
    }
    prompt_text["templates"] = std::move(templates);
    std::vector<std::string> fps;
    fps.reserve(records.size());
    for (const auto& rec : records) fps.push_back(rec.query.fingerprint);
    std::sort(fps.begin(), fps.end());
    HashWriter fph;
    for (const auto& fp : fps) fph.field(fp);
    prompt_text["n_prompts"] = records.size();
    prompt_text["fingerprint_digest"] = fph.hex_digest();
    m["prompt_text"] = std::move(prompt_text);

    ordered_json learning = ordered_json::array();
    for (const auto& approach : cfg.approaches) {
        ordered_json a;
        a["variant"] = approach.name();
        if (approach.variant == LearningApproachVariant::FewShot) {
            a["max_examples"] =
                approach.max_examples ? ordered_json(*approach.max_examples) : ordered_json(nullptr);
            a["selection_method"] = "codebook examples in document order, frozen before the run";
            ordered_json counts = ordered_json::object();
            for (const auto& task : run.tasks)
                for (const auto* item : task.codebook.all_items()) {
                    size_t n = item->examples.size();
                    if (approach.max_examples)
                        n = std::min(n, static_cast<size_t>(*approach.max_examples));
                    counts[task.spec.id + "/" + item->id] = n;
                }
            a["n_examples_by_item"] = std::move(counts);
        }
        learning.push_back(std::move(a));
    }
    m["learning_approach"] = std::move(learning);

    ordered_json hw = ordered_json::object();
    for (const auto& [k, v] : cfg.hardware) hw[k] = v;
    hw["request_concurrency"] = cfg.policies.workers;
    m["hardware"] = std::move(hw);

    ordered_json eff;
    double total_s = 0;
    long long total_chars = 0, total_queries = 0;
    bool all_energy = !eval.efficiency.empty();
    double total_kwh = 0;
    ordered_json per_config = ordered_json::array();
    for (const auto& [cfg_id, report] : eval.efficiency) {  // std::map: sorted, deterministic
        total_s += report.total_inference_s;
        total_chars += report.total_output_chars;
        total_queries += report.n_queries;
        if (report.total_energy_kwh)
            total_kwh += *report.total_energy_kwh;
        else
            all_energy = false;
        per_config.push_back(
            {{"config_id", cfg_id},
             {"total_inference_s", report.total_inference_s},
             {"avg_inference_s",
              report.avg_inference_s ? ordered_json(*report.avg_inference_s) : ordered_json(nullptr)},
             {"total_output_chars", report.total_output_chars},
             {"n_queries", report.n_queries},
             {"energy_kwh", report.total_energy_kwh ? ordered_json(*report.total_energy_kwh)
                                                    : ordered_json(nullptr)}});
    }
    eff["total_inference_s"] = total_s;
    eff["avg_inference_s"] = total_queries > 0
                                 ? ordered_json(total_s / static_cast<double>(total_queries))
                                 : ordered_json(nullptr);
    eff["total_output_chars"] = total_chars;
    eff["n_queries"] = total_queries;
    eff["total_energy_kwh"] = all_energy ? ordered_json(total_kwh) : ordered_json(nullptr);
    eff["per_configuration"] = std::move(per_config);
    m["efficiency"] = std::move(eff);
    return m;
}

std::vector<std::string> validate_manifest(const json& manifest) {
    std::vector<std::string> missing;
    auto require = [&](bool ok, const char* name) {
        if (!ok) missing.push_back(name);
    };

    {
        bool ok = manifest.contains("model_identity") && manifest["model_identity"].is_array() &&
                  !manifest["model_identity"].empty();
        if (ok)
            for (const auto& e : manifest["model_identity"])
                ok = ok && !e.value("name", std::string{}).empty() &&
                     !e.value("version_string", std::string{}).empty() &&
                     e.value("parameter_count", 0LL) > 0;
        require(ok, kSectionNames[0]);
    }
    {
        bool ok = manifest.contains("quantisation") && manifest["quantisation"].is_array() &&
                  !manifest["quantisation"].empty();
        if (ok)
            for (const auto& e : manifest["quantisation"])
                ok = ok && !e.value("quantisation", std::string{}).empty();
        require(ok, kSectionNames[1]);
    }
    require(manifest.contains("prompt_text") && manifest["prompt_text"].contains("templates") &&
                !manifest["prompt_text"]["templates"].empty(),
            kSectionNames[2]);
    {
        bool ok = manifest.contains("sampling") && manifest["sampling"].is_array() &&
                  !manifest["sampling"].empty();
        if (ok)
            for (const auto& e : manifest["sampling"])
                ok = ok && e.contains("temperature") && e.contains("top_k") && e.contains("top_p");
        require(ok, kSectionNames[3]);
    }
    require(manifest.contains("learning_approach") && manifest["learning_approach"].is_array() &&
                !manifest["learning_approach"].empty(),
            kSectionNames[4]);
    {
        bool ok = manifest.contains("hardware") && manifest["hardware"].is_object();
        if (ok) {
            size_t informative = 0;
            for (const auto& [k, v] : manifest["hardware"].items())
                if (k != "request_concurrency") ++informative;
            ok = informative > 0;
        }
        require(ok, kSectionNames[5]);
    }
    require(manifest.contains("efficiency") && manifest["efficiency"].value("n_queries", 0LL) > 0,
            kSectionNames[6]);
    return missing;
}

// ---------------------------------------------------------------------------
// Trade-off data

namespace {

struct PipelinePoint {
    std::string id;
    std::optional<double> mean_f1;
    std::optional<double> energy_kwh;
    long long total_chars = 0;
    std::optional<double> avg_inference_s;
    long long parameter_count = 0;
};

std::vector<PipelinePoint> pipeline_points(const LoadedRun& run, const RunEvaluation& eval) {
    const auto& cfg = run.config;
    std::vector<PipelinePoint> points;
    for (size_t mi = 0; mi < cfg.models.size(); ++mi) {
        for (size_t si = 0; si < cfg.styles.size(); ++si) {
            for (size_t ai = 0; ai < cfg.approaches.size(); ++ai) {
                for (int r = 0; r < cfg.repeats; ++r) {
                    std::string suffix = "|" + cfg.models[mi].name + "|" +
                                         cfg.styles[si].name() + "|" +
                                         cfg.approaches[ai].name();
                    if (cfg.repeats > 1) suffix += "|r" + std::to_string(r);

                    PipelinePoint p;
                    p.id = cfg.models[mi].name;
                    p.id += "|";
                    p.id += cfg.styles[si].name();
                    p.id += "|";
                    p.id += cfg.approaches[ai].name();
                    if (cfg.repeats > 1) p.id += "|r" + std::to_string(r);
                    p.parameter_count = cfg.models[mi].parameter_count;

                    // Task-level F1 first (type groups averaged), then the
                    // unweighted mean across tasks.
                    double f1_sum = 0;
                    int f1_n = 0;
                    double total_s = 0;
                    long long n_queries = 0;
                    bool any_cfg = false, all_energy = true;
                    double kwh = 0;
                    for (const auto& task : run.tasks) {
                        const std::string cfg_id = task.spec.id + suffix;
                        double task_f1 = 0;
                        int groups = 0;
                        for (const auto& row : eval.rows) {
                            if (row.config_id != cfg_id || !row.report.macro_f1) continue;
                            task_f1 += *row.report.macro_f1;
                            ++groups;
                        }
                        if (groups > 0) {
                            f1_sum += task_f1 / groups;
                            ++f1_n;
                        }
                        auto it = eval.efficiency.find(cfg_id);
                        if (it != eval.efficiency.end()) {
                            any_cfg = true;
                            total_s += it->second.total_inference_s;
                            n_queries += it->second.n_queries;
                            p.total_chars += it->second.total_output_chars;
                            if (it->second.total_energy_kwh)
                                kwh += *it->second.total_energy_kwh;
                            else
                                all_energy = false;
                        }
                    }
                    if (!any_cfg) continue;  // pipeline never ran (filtered by rules)
                    if (f1_n > 0) p.mean_f1 = f1_sum / f1_n;
                    if (all_energy) p.energy_kwh = kwh;
                    if (n_queries > 0) p.avg_inference_s = total_s / n_queries;
                    points.push_back(std::move(p));
                }
            }
        }
    }
    std::sort(points.begin(), points.end(),
              [](const PipelinePoint& a, const PipelinePoint& b) { return a.id < b.id; });
    return points;
}

}  // namespace

std::string emit_tradeoff_data(const LoadedRun& run, const RunEvaluation& eval) {
    std::string out = "config,mean_f1,energy_kwh,total_output_chars,avg_inference_s,parameter_count\n";
    for (const auto& p : pipeline_points(run, eval)) {
        out += csv_quote(p.id);
        out += "," + format_metric(p.mean_f1);
        out += ",";
        out += p.energy_kwh ? fmt6(*p.energy_kwh) : "NA";
        out += "," + std::to_string(p.total_chars);
        out += ",";
        out += p.avg_inference_s ? fmt6(*p.avg_inference_s) : "NA";
        out += "," + std::to_string(p.parameter_count);
        out += "\n";
    }
    return out;
}

std::string render_tradeoff_svg(const LoadedRun& run, const RunEvaluation& eval) {
    const auto points = pipeline_points(run, eval);
    const double width = 640, height = 420, margin = 60;

    double max_energy = 0;
    for (const auto& p : points)
        if (p.energy_kwh) max_energy = std::max(max_energy, *p.energy_kwh);
    if (max_energy <= 0) max_energy = 1.0;

    std::string svg;
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string((int)width) +
           "\" height=\"" + std::to_string((int)height) + "\">\n";
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    auto x_of = [&](double kwh) {
        return margin + (width - 2 * margin) * (kwh / max_energy);
    };
    auto y_of = [&](double f1) { return height - margin - (height - 2 * margin) * f1; };
    svg += "<line x1=\"" + fmt6(margin) + "\" y1=\"" + fmt6(height - margin) + "\" x2=\"" +
           fmt6(width - margin) + "\" y2=\"" + fmt6(height - margin) +
           "\" stroke=\"black\"/>\n";
    svg += "<line x1=\"" + fmt6(margin) + "\" y1=\"" + fmt6(margin) + "\" x2=\"" + fmt6(margin) +
           "\" y2=\"" + fmt6(height - margin) + "\" stroke=\"black\"/>\n";
    svg += "<text x=\"" + fmt6(width / 2) + "\" y=\"" + fmt6(height - margin / 4) +
           "\" text-anchor=\"middle\" font-size=\"12\">energy (kWh)</text>\n";
    svg += "<text x=\"16\" y=\"" + fmt6(height / 2) +
           "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 16 " +
           fmt6(height / 2) + ")\">mean F1</text>\n";
    for (const auto& p : points) {
        if (!p.mean_f1) continue;
        const double cx = p.energy_kwh ? x_of(*p.energy_kwh) : margin;
        const double cy = y_of(std::clamp(*p.mean_f1, 0.0, 1.0));
        svg += "<circle cx=\"" + fmt6(cx) + "\" cy=\"" + fmt6(cy) +
               "\" r=\"4\" fill=\"steelblue\"/>\n";
        svg += "<text x=\"" + fmt6(cx + 6) + "\" y=\"" + fmt6(cy - 6) + "\" font-size=\"10\">" +
               p.id + "</text>\n";
    }
    svg += "</svg>\n";
    return svg;
}

}  // namespace annobench
