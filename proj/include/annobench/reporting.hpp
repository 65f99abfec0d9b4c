#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "annobench/metrics.hpp"
#include "annobench/orchestrator.hpp"

namespace annobench {

enum class TableFormat { Csv, Json };

/// Fixed three-decimal formatting with ties rounded half to even.
/// Unavailable values render as "NA".
std::string format_metric(const std::optional<double>& v);

/// Metric table rows: Model, Task, F1, Accuracy, Precision, Recall, kappa,
/// alpha, plus QWK and rho columns when any row carries ordinal metrics.
/// Deterministic row order, 3-decimal cells, UTF-8, LF line endings.
std::string emit_metrics_table(const std::vector<EvalRow>& rows, TableFormat format);

/// Reporting manifest: the seven-section disclosure record a run must carry
/// (model identity, quantisation, prompt text, sampling, learning approach,
/// hardware, efficiency).
nlohmann::ordered_json emit_manifest(const LoadedRun& run,
                                     const std::vector<RunRecord>& records,
                                     const RunEvaluation& eval);

/// Names of the §-style checklist sections missing or empty in `manifest`,
/// in fixed order. Empty result means publication-ready.
std::vector<std::string> validate_manifest(const nlohmann::json& manifest);

/// Chart-ready per-pipeline rows: config id, mean F1 across tasks, energy,
/// output characters, average inference seconds, parameter count.
std::string emit_tradeoff_data(const LoadedRun& run, const RunEvaluation& eval);

/// Minimal static scatter of F1 against energy, one point per pipeline.
std::string render_tradeoff_svg(const LoadedRun& run, const RunEvaluation& eval);

}  // namespace annobench
