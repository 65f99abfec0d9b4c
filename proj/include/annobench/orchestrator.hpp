#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "annobench/codebook.hpp"
#include "annobench/efficiency.hpp"
#include "annobench/gateway.hpp"
#include "annobench/metrics.hpp"
#include "annobench/prompt.hpp"

namespace annobench {

struct TaskSpec {
    std::string id;
    std::string codebook_path;
    std::string dataset_path;
    Aggregation aggregation = Aggregation::Resolved;
};

struct CrossingRules {
    // Persona and chain-of-thought conditions always carry few-shot examples,
    // so style effects are not confounded with example presence.
    bool style_variants_imply_few_shot = false;
};

struct SplitSpec {
    std::uint64_t seed = 0;
    SplitRatios ratios;
};

struct RunPolicies {
    RetryPolicy retry;
    int workers = 1;
    NonCompliancePolicy noncompliance = NonCompliancePolicy::Exclude;
    bool warmup = true;  // one untimed query per model before measurement
};

struct EnergyProviderSpec {
    std::string kind = "null";  // null | file (mock is test-only)
    std::string path;
};

/// The whole experiment definition: one structured JSON config file.
struct RunConfig {
    std::string run_id;
    std::vector<TaskSpec> tasks;
    std::vector<ModelConfig> models;
    std::vector<PromptStyle> styles;
    std::vector<LearningApproach> approaches;
    CrossingRules crossing_rules;
    Partition evaluation_partition = Partition::Validation;
    bool allow_test_partition = false;  // explicit opt-in flag for Test
    int repeats = 1;
    std::optional<SplitSpec> splits;
    RunPolicies policies;
    std::map<std::string, std::string> hardware;  // accelerator, memory, framework, ...
    EnergyProviderSpec energy;
    nlohmann::json raw;  // verbatim config snapshot for the manifest
};

RunConfig load_run_config(const std::string& path);
RunConfig parse_run_config(const std::string& json_text, const std::string& base_dir);

struct LoadedTask {
    TaskSpec spec;
    Codebook codebook;
    GroundTruthDataset truth;
    std::optional<DataSplit> split;
    std::string codebook_hash;  // content hash of the codebook file
    std::string dataset_hash;
};

struct LoadedRun {
    RunConfig config;
    std::vector<LoadedTask> tasks;
    std::string grid_hash;  // covers axes, rules, partition, and input hashes
};

/// Load codebooks and datasets, build splits, and enforce the workflow
/// discipline rules. Throws on fatal config errors, before any query.
LoadedRun prepare_run(const RunConfig& config);

struct RunCell {
    size_t task_idx = 0;
    size_t model_idx = 0;
    size_t style_idx = 0;
    size_t approach_idx = 0;
    int repeat = 0;
    std::string unit_id;
    std::string item_id;
};

std::string cell_key(const LoadedRun& run, const RunCell& cell);
std::string config_id(const LoadedRun& run, const RunCell& cell);

/// Cartesian product of the grid axes filtered by the crossing rules, in a
/// fixed order: tasks, models, styles, approaches, repeats, then units in
/// dataset order with items in codebook order. A unit appears for an item
/// only when the item applies to it under the resolved ground truth, and
/// only within the evaluation partition when splits are configured.
std::vector<RunCell> expand_grid(const LoadedRun& run);

/// One line of the append-only run log.
struct RunRecord {
    RunCell cell;
    QueryRecord query;
    std::optional<AnnotationValue> parsed_value;        // snapshot for inspection
    std::optional<std::string> noncompliance_reason;
};

struct RunSessionOptions {
    long long max_cell_queries = -1;        // stop the session after N new queries (<0: no cap)
    std::atomic<bool>* stop_flag = nullptr; // set by signal handlers
};

struct RunSessionSummary {
    long long total_cells = 0;
    long long already_done = 0;
    long long new_queries = 0;
    long long transport_failures = 0;
    bool stopped_early = false;
};

/// Execute (or resume) a run against `gateway`, persisting state under
/// `run_dir`. Completed cells are never re-queried; a grid-hash mismatch on
/// resume aborts.
RunSessionSummary execute_run(const LoadedRun& run, HttpGateway& gateway,
                              EnergyProvider& energy, const std::string& run_dir,
                              const RunSessionOptions& session = {});

std::vector<RunRecord> load_run_records(const LoadedRun& run, const std::string& run_dir);
std::map<std::string, std::optional<double>> load_energy_rows(const std::string& run_dir);

// ---------------------------------------------------------------------------
// Evaluation over the run log

struct EvalRow {
    std::string config_id;
    std::string model_label;  // model name plus style/approach qualifiers when varied
    std::string task_label;   // task id plus annotation-kind suffix when mixed
    MetricReport report;
};

struct RunEvaluation {
    std::vector<EvalRow> rows;  // sorted by (model_label, task_label)
    std::map<std::string, EfficiencyReport> efficiency;        // per config id
    std::vector<std::pair<std::string, MetricReport>> per_item;  // config id|item -> report
};

RunEvaluation evaluate_run(const LoadedRun& run, const std::vector<RunRecord>& records,
                           const std::map<std::string, std::optional<double>>& energy_rows,
                           const EvalOptions& options);

}  // namespace annobench
