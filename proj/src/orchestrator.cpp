#include "annobench/orchestrator.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <deque>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "annobench/parser.hpp"

namespace annobench {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string env_key_for_model(const std::string& name) {
    std::string key = "ANNOBENCH_ENDPOINT_";
    for (char c : name)
        key += std::isalnum(static_cast<unsigned char>(c)) ? static_cast<char>(std::toupper(c))
                                                           : '_';
    return key;
}

std::string resolve_path(const std::string& base_dir, const std::string& path) {
    fs::path p(path);
    if (p.is_absolute() || base_dir.empty()) return path;
    return (fs::path(base_dir) / p).string();
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text, const std::string& base_dir) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ParseError(std::string("run config is not valid JSON: ") + e.what());
    }

    RunConfig cfg;
    cfg.raw = j;
    try {
        cfg.run_id = j.value("run_id", std::string{});

        for (const auto& tj : j.at("tasks")) {
            TaskSpec t;
            t.id = tj.at("id").get<std::string>();
            t.codebook_path = resolve_path(base_dir, tj.at("codebook").get<std::string>());
            t.dataset_path = resolve_path(base_dir, tj.at("dataset").get<std::string>());
            t.aggregation = aggregation_from_string(tj.value("aggregation", "resolved"));
            cfg.tasks.push_back(std::move(t));
        }

        for (const auto& mj : j.at("models")) {
            ModelConfig m;
            m.name = mj.at("name").get<std::string>();
            m.version_tag = mj.value("version_tag", m.name);
            m.parameter_count = mj.at("parameter_count").get<long long>();
            m.quantisation = mj.value("quantisation", std::string{});
            m.reasoning_model = mj.value("reasoning_model", false);
            if (mj.contains("expected_digest"))
                m.expected_digest = mj.at("expected_digest").get<std::string>();
            m.timeout_s = mj.value("timeout_s", 300.0);

            PartialSampling card;
            if (mj.contains("sampling")) {
                const auto& sj = mj.at("sampling");
                if (sj.contains("temperature")) card.temperature = sj.at("temperature").get<double>();
                if (sj.contains("top_k")) card.top_k = sj.at("top_k").get<int>();
                if (sj.contains("top_p")) card.top_p = sj.at("top_p").get<double>();
            }
            m.sampling = resolve_sampling_params(card);

            m.endpoint.url = mj.at("endpoint").at("url").get<std::string>();
            m.endpoint.protocol = wire_protocol_from_string(
                mj.at("endpoint").value("protocol", "ollama-generate"));
            // Environment overrides apply to endpoint URLs only.
            if (const char* global = std::getenv("ANNOBENCH_ENDPOINT"); global && *global)
                m.endpoint.url = global;
            if (const char* per = std::getenv(env_key_for_model(m.name).c_str()); per && *per)
                m.endpoint.url = per;
            m.validate();
            cfg.models.push_back(std::move(m));
        }

        for (const auto& sj : j.at("styles")) {
            cfg.styles.push_back(prompt_style_from_name(sj.at("variant").get<std::string>(),
                                                        sj.value("text", std::string{})));
        }
        for (const auto& aj : j.at("approaches")) {
            std::optional<int> max;
            if (aj.contains("max_examples")) max = aj.at("max_examples").get<int>();
            cfg.approaches.push_back(
                learning_approach_from_name(aj.at("variant").get<std::string>(), max));
        }

        for (const auto& rj : j.value("crossing_rules", json::array())) {
            const std::string rule = rj.get<std::string>();
            if (rule == "style_variants_imply_few_shot")
                cfg.crossing_rules.style_variants_imply_few_shot = true;
            else
                throw ParseError("unknown crossing rule '" + rule + "'");
        }

        cfg.evaluation_partition =
            partition_from_string(j.value("evaluation_partition", "validation"));
        cfg.allow_test_partition = j.value("allow_test_partition", false);
        cfg.repeats = j.value("repeats", 1);

        if (j.contains("splits")) {
            SplitSpec s;
            s.seed = j.at("splits").at("seed").get<std::uint64_t>();
            const auto& r = j.at("splits").at("ratios");
            s.ratios = {r.at(0).get<double>(), r.at(1).get<double>(), r.at(2).get<double>()};
            cfg.splits = s;
        }

        if (j.contains("policies")) {
            const auto& pj = j.at("policies");
            if (pj.contains("retry")) {
                cfg.policies.retry.max_attempts = pj.at("retry").value("max_attempts", 3);
                cfg.policies.retry.initial_backoff_s =
                    pj.at("retry").value("initial_backoff_s", 0.1);
            }
            cfg.policies.workers = pj.value("workers", 1);
            cfg.policies.noncompliance =
                noncompliance_policy_from_string(pj.value("noncompliance", "exclude"));
            cfg.policies.warmup = pj.value("warmup", true);
        }

        for (const auto& [k, v] : j.value("hardware", json::object()).items())
            cfg.hardware[k] = v.is_string() ? v.get<std::string>() : v.dump();

        if (j.contains("energy_provider")) {
            cfg.energy.kind = j.at("energy_provider").value("kind", "null");
            cfg.energy.path =
                resolve_path(base_dir, j.at("energy_provider").value("path", std::string{}));
        }
    } catch (const json::exception& e) {
        throw ParseError(std::string("run config has wrong shape: ") + e.what());
    }

    if (cfg.tasks.empty() || cfg.models.empty() || cfg.styles.empty() || cfg.approaches.empty())
        throw ValidationError("run config axes must be non-empty",
                              {{"config", "tasks, models, styles, approaches all need >= 1 entry"}});
    if (cfg.repeats < 1)
        throw ValidationError("run config invalid", {{"config", "repeats must be >= 1"}});
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    return parse_run_config(read_file(path), fs::path(path).parent_path().string());
}

// ---------------------------------------------------------------------------
// Preparation and discipline checks

namespace {

bool combo_allowed(const CrossingRules& rules, const PromptStyle& style,
                   const LearningApproach& approach) {
    if (rules.style_variants_imply_few_shot &&
        style.variant != PromptStyleVariant::Standard &&
        approach.variant != LearningApproachVariant::FewShot)
        return false;
    return true;
}

std::string compute_grid_hash(const RunConfig& cfg, const std::vector<LoadedTask>& tasks) {
    HashWriter h;
    h.field(kPromptTemplateVersion);
    h.field(partition_name(cfg.evaluation_partition));
    h.field(static_cast<std::int64_t>(cfg.repeats));
    h.field(cfg.crossing_rules.style_variants_imply_few_shot ? "rule:style=>fewshot" : "");
    for (const auto& t : tasks) {
        h.field(t.spec.id);
        h.field(t.codebook_hash);
        h.field(t.dataset_hash);
    }
    for (const auto& m : cfg.models) {
        h.field(m.name);
        h.field(m.version_tag);
        h.field(static_cast<std::int64_t>(m.parameter_count));
        h.field(m.quantisation);
        h.field(std::to_string(m.sampling.temperature.value));
        h.field(static_cast<std::int64_t>(m.sampling.top_k.value));
        h.field(std::to_string(m.sampling.top_p.value));
        h.field(wire_protocol_name(m.endpoint.protocol));
        // endpoint URL is deliberately excluded: serving the same model from
        // another host must not invalidate a resume
    }
    for (const auto& s : cfg.styles) {
        h.field(s.name());
        h.field(s.text);
    }
    for (const auto& a : cfg.approaches) {
        h.field(a.name());
        h.field(a.max_examples ? static_cast<std::int64_t>(*a.max_examples) : -1);
    }
    if (cfg.splits) {
        h.field(static_cast<std::int64_t>(cfg.splits->seed));
        h.field(std::to_string(cfg.splits->ratios.train));
        h.field(std::to_string(cfg.splits->ratios.validation));
        h.field(std::to_string(cfg.splits->ratios.test));
    }
    return h.hex_digest();
}

}  // namespace

LoadedRun prepare_run(const RunConfig& config) {
    LoadedRun run;
    run.config = config;

    const bool comparing_pipelines = config.styles.size() > 1 || config.approaches.size() > 1;
    if (config.evaluation_partition == Partition::Test) {
        if (!config.allow_test_partition)
            throw ValidationError("test partition requires explicit opt-in",
                                  {{"config", "set allow_test_partition to evaluate on test"}});
        if (comparing_pipelines)
            throw ValidationError(
                "held-out test set misuse",
                {{"config",
                  "multiple styles/approaches are still being compared; the test partition is "
                  "reserved for the final frozen pipeline"}});
    }

    bool any_few_shot = std::any_of(config.approaches.begin(), config.approaches.end(),
                                    [](const LearningApproach& a) {
                                        return a.variant == LearningApproachVariant::FewShot;
                                    });

    for (const auto& spec : config.tasks) {
        LoadedTask t;
        t.spec = spec;
        const std::string cb_bytes = read_file(spec.codebook_path);
        const std::string ds_bytes = read_file(spec.dataset_path);
        t.codebook_hash = to_hex64(fnv1a64(cb_bytes));
        t.dataset_hash = to_hex64(fnv1a64(ds_bytes));
        t.codebook = load_codebook(spec.codebook_path);
        t.truth = load_ground_truth(spec.dataset_path, t.codebook, spec.aggregation);
        if (config.splits)
            t.split = make_splits(t.truth, t.codebook, config.splits->ratios, config.splits->seed);

        // Few-shot demonstrations must never leak from validation/test: any
        // codebook example whose text is a dataset unit must sit in train.
        if (t.split && any_few_shot) {
            for (const auto* item : t.codebook.all_items()) {
                for (const auto& ex : item->examples) {
                    for (const auto& [unit_id, text] : t.truth.units) {
                        if (text != ex.text) continue;
                        auto part = t.split->assignment.at(unit_id);
                        if (part != Partition::Train)
                            throw ValidationError(
                                "few-shot example leaks out of the training partition",
                                {{"item " + item->id,
                                  "example text equals unit '" + unit_id + "' assigned to " +
                                      partition_name(part)}});
                    }
                }
            }
        }
        run.tasks.push_back(std::move(t));
    }

    run.grid_hash = compute_grid_hash(config, run.tasks);

    if (expand_grid(run).empty())
        throw ValidationError("experiment grid is empty",
                              {{"config", "crossing rules filtered out every cell or no "
                                          "applicable units exist in the evaluation partition"}});
    return run;
}

// ---------------------------------------------------------------------------
// Grid expansion

std::string cell_key(const LoadedRun& run, const RunCell& cell) {
    const auto& cfg = run.config;
    std::string key = run.tasks[cell.task_idx].spec.id;
    key += '|';
    key += cfg.models[cell.model_idx].name;
    key += '|';
    key += cfg.styles[cell.style_idx].name();
    key += '|';
    key += cfg.approaches[cell.approach_idx].name();
    key += "|r";
    key += std::to_string(cell.repeat);
    key += '|';
    key += cell.unit_id;
    key += '|';
    key += cell.item_id;
    return key;
}

std::string config_id(const LoadedRun& run, const RunCell& cell) {
    const auto& cfg = run.config;
    std::string id = run.tasks[cell.task_idx].spec.id;
    id += '|';
    id += cfg.models[cell.model_idx].name;
    id += '|';
    id += cfg.styles[cell.style_idx].name();
    id += '|';
    id += cfg.approaches[cell.approach_idx].name();
    if (cfg.repeats > 1) {
        id += "|r";
        id += std::to_string(cell.repeat);
    }
    return id;
}

std::vector<RunCell> expand_grid(const LoadedRun& run) {
    const auto& cfg = run.config;
    std::vector<RunCell> cells;
    for (size_t ti = 0; ti < run.tasks.size(); ++ti) {
        const auto& task = run.tasks[ti];

        std::vector<std::string> unit_order;
        for (const auto& [unit_id, text] : task.truth.units) {
            if (task.split &&
                task.split->assignment.at(unit_id) != cfg.evaluation_partition)
                continue;
            unit_order.push_back(unit_id);
        }

        const auto items = task.codebook.all_items();
        std::map<std::string, std::set<std::string>> applicable;
        for (const auto* item : items)
            applicable[item->id] = applicable_units(*item, task.codebook, task.truth);

        for (size_t mi = 0; mi < cfg.models.size(); ++mi) {
            for (size_t si = 0; si < cfg.styles.size(); ++si) {
                for (size_t ai = 0; ai < cfg.approaches.size(); ++ai) {
                    if (!combo_allowed(cfg.crossing_rules, cfg.styles[si], cfg.approaches[ai]))
                        continue;
                    for (int r = 0; r < cfg.repeats; ++r) {
                        for (const auto& unit_id : unit_order) {
                            for (const auto* item : items) {
                                if (!applicable[item->id].count(unit_id)) continue;
                                cells.push_back(
                                    {ti, mi, si, ai, r, unit_id, item->id});
                            }
                        }
                    }
                }
            }
        }
    }
    return cells;
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

json record_to_json(const LoadedRun& run, const RunRecord& rec) {
    const auto& cfg = run.config;
    ordered_json j;
    j["task"] = run.tasks[rec.cell.task_idx].spec.id;
    j["model"] = cfg.models[rec.cell.model_idx].name;
    j["style"] = cfg.styles[rec.cell.style_idx].name();
    j["approach"] = cfg.approaches[rec.cell.approach_idx].name();
    j["repeat"] = rec.cell.repeat;
    j["unit"] = rec.cell.unit_id;
    j["item"] = rec.cell.item_id;
    j["fingerprint"] = rec.query.fingerprint;
    j["raw_output"] = rec.query.raw_output;
    j["duration_s"] = rec.query.duration_s;
    j["output_chars"] = rec.query.output_chars;
    j["attempts"] = rec.query.attempts;
    j["completed_at"] = rec.query.completed_at;
    j["transport_failed"] = rec.query.transport_failed;
    j["error"] = rec.query.error;
    if (rec.parsed_value) {
        if (std::holds_alternative<int>(*rec.parsed_value))
            j["parsed_value"] = std::get<int>(*rec.parsed_value);
        else
            j["parsed_value"] = std::get<std::string>(*rec.parsed_value);
    } else {
        j["parsed_value"] = nullptr;
    }
    j["noncompliance_reason"] =
        rec.noncompliance_reason ? json(*rec.noncompliance_reason) : json(nullptr);
    return j;
}

RunRecord record_from_json(const LoadedRun& run, const json& j) {
    const auto& cfg = run.config;
    RunRecord rec;
    auto index_of = [](const auto& vec, auto pred, const std::string& what) -> size_t {
        for (size_t i = 0; i < vec.size(); ++i)
            if (pred(vec[i])) return i;
        throw ParseError("run record references unknown " + what);
    };
    const std::string task = j.at("task").get<std::string>();
    const std::string model = j.at("model").get<std::string>();
    const std::string style = j.at("style").get<std::string>();
    const std::string approach = j.at("approach").get<std::string>();
    rec.cell.task_idx = index_of(
        run.tasks, [&](const LoadedTask& t) { return t.spec.id == task; }, "task");
    rec.cell.model_idx = index_of(
        cfg.models, [&](const ModelConfig& m) { return m.name == model; }, "model");
    rec.cell.style_idx = index_of(
        cfg.styles, [&](const PromptStyle& s) { return s.name() == style; }, "style");
    rec.cell.approach_idx = index_of(
        cfg.approaches, [&](const LearningApproach& a) { return a.name() == approach; },
        "approach");
    rec.cell.repeat = j.value("repeat", 0);
    rec.cell.unit_id = j.at("unit").get<std::string>();
    rec.cell.item_id = j.at("item").get<std::string>();
    rec.query.fingerprint = j.at("fingerprint").get<std::string>();
    rec.query.raw_output = j.at("raw_output").get<std::string>();
    rec.query.duration_s = j.at("duration_s").get<double>();
    rec.query.output_chars = j.at("output_chars").get<long long>();
    rec.query.attempts = j.at("attempts").get<int>();
    rec.query.completed_at = j.at("completed_at").get<std::string>();
    rec.query.transport_failed = j.at("transport_failed").get<bool>();
    rec.query.error = j.at("error").get<std::string>();
    if (j.contains("parsed_value") && !j.at("parsed_value").is_null()) {
        const auto& pv = j.at("parsed_value");
        rec.parsed_value = pv.is_string() ? AnnotationValue{pv.get<std::string>()}
                                          : AnnotationValue{pv.get<int>()};
    }
    if (j.contains("noncompliance_reason") && !j.at("noncompliance_reason").is_null())
        rec.noncompliance_reason = j.at("noncompliance_reason").get<std::string>();
    return rec;
}

fs::path manifest_path(const std::string& run_dir) { return fs::path(run_dir) / "manifest.json"; }
fs::path records_path(const std::string& run_dir) { return fs::path(run_dir) / "records.ndjson"; }
fs::path energy_path(const std::string& run_dir) { return fs::path(run_dir) / "energy.ndjson"; }
fs::path splits_path(const std::string& run_dir) { return fs::path(run_dir) / "splits.json"; }

}  // namespace

std::vector<RunRecord> load_run_records(const LoadedRun& run, const std::string& run_dir) {
    std::vector<RunRecord> out;
    std::ifstream in(records_path(run_dir));
    if (!in) return out;
    std::string line;
    std::vector<std::string> lines;
    while (std::getline(in, line))
        if (!line.empty()) lines.push_back(line);
    for (size_t i = 0; i < lines.size(); ++i) {
        json j = json::parse(lines[i], nullptr, false);
        if (j.is_discarded()) {
            // a torn final line is what a crash leaves behind; anything else is corruption
            if (i + 1 == lines.size()) break;
            throw ParseError("run log corrupted at line " + std::to_string(i + 1));
        }
        out.push_back(record_from_json(run, j));
    }
    return out;
}

std::map<std::string, std::optional<double>> load_energy_rows(const std::string& run_dir) {
    std::map<std::string, std::optional<double>> out;
    std::ifstream in(energy_path(run_dir));
    if (!in) return out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded()) continue;
        std::optional<double> kwh;
        if (!j.at("kwh").is_null()) kwh = j.at("kwh").get<double>();
        out[j.at("config_id").get<std::string>()] = kwh;
    }
    return out;
}

RunSessionSummary execute_run(const LoadedRun& run, HttpGateway& gateway,
                              EnergyProvider& energy, const std::string& run_dir,
                              const RunSessionOptions& session) {
    const auto& cfg = run.config;
    fs::create_directories(run_dir);

    // Resume requires the exact same frozen inputs.
    json manifest;
    if (fs::exists(manifest_path(run_dir))) {
        manifest = json::parse(read_file(manifest_path(run_dir).string()));
        const std::string recorded = manifest.at("grid_hash").get<std::string>();
        if (recorded != run.grid_hash)
            throw std::runtime_error(
                "refusing to resume: grid hash mismatch (recorded " + recorded + ", current " +
                run.grid_hash + "); codebooks, datasets, or grid config changed since the run "
                "started");
    } else {
        manifest = json::object();
        manifest["run_id"] = cfg.run_id;
        manifest["template_version"] = kPromptTemplateVersion;
        manifest["grid_hash"] = run.grid_hash;
        manifest["created_at"] = iso8601_utc_now();
        manifest["partition"] = partition_name(cfg.evaluation_partition);
        manifest["provider_identity"] = energy.identity();
        json cb_hashes = json::object(), ds_hashes = json::object();
        for (const auto& t : run.tasks) {
            cb_hashes[t.spec.id] = t.codebook_hash;
            ds_hashes[t.spec.id] = t.dataset_hash;
        }
        manifest["codebook_hashes"] = cb_hashes;
        manifest["dataset_hashes"] = ds_hashes;
        manifest["config_snapshot"] = cfg.raw;
        manifest["sessions"] = json::array();
    }

    // Fatal before any query: every model's endpoint must serve its tag.
    json session_entry;
    session_entry["started_at"] = iso8601_utc_now();
    session_entry["health"] = json::array();
    for (const auto& m : cfg.models) {
        HealthReport health = gateway.health_check(m);
        json hj = {{"model", m.name},
                   {"ok", health.ok},
                   {"server_identity", health.server_identity},
                   {"warnings", health.warnings},
                   {"error", health.error}};
        if (health.served_digest) hj["served_digest"] = *health.served_digest;
        session_entry["health"].push_back(hj);
        if (!health.ok)
            throw std::runtime_error("health check failed for model '" + m.name +
                                     "': " + health.error);
    }

    // Model load / first-touch cost is kept out of the efficiency figures;
    // one throwaway query per model, timed separately.
    session_entry["warmups"] = json::array();
    if (cfg.policies.warmup) {
        const auto& task0 = run.tasks.front();
        const auto* item0 = task0.codebook.all_items().front();
        const auto* sec0 = task0.codebook.section_of(item0->id);
        for (const auto& m : cfg.models) {
            auto prompt = render_prompt(*item0, *sec0, "warmup", "__warmup__",
                                        PromptStyle::standard(), LearningApproach::zero_shot());
            QueryRecord q = gateway.submit_query(m, prompt);
            session_entry["warmups"].push_back({{"model", m.name},
                                                {"duration_s", q.duration_s},
                                                {"ok", !q.transport_failed}});
        }
    }

    if (cfg.splits && !fs::exists(splits_path(run_dir))) {
        ordered_json sj = ordered_json::object();
        for (const auto& t : run.tasks)
            if (t.split) sj[t.spec.id] = json::parse(serialize_split(*t.split));
        std::ofstream out(splits_path(run_dir));
        out << sj.dump(2) << "\n";
    }

    // Completed cells (including recorded transport failures) stay done.
    std::set<std::string> done;
    for (const auto& rec : load_run_records(run, run_dir)) done.insert(cell_key(run, rec.cell));
    auto energy_rows = load_energy_rows(run_dir);

    const auto cells = expand_grid(run);
    RunSessionSummary summary;
    summary.total_cells = static_cast<long long>(cells.size());

    std::ofstream records_out(records_path(run_dir), std::ios::app);
    std::ofstream energy_out(energy_path(run_dir), std::ios::app);
    energy.start();

    auto run_cell = [&](const RunCell& cell) -> RunRecord {
        const auto& task = run.tasks[cell.task_idx];
        const AnnotationItem* item = task.codebook.find_item(cell.item_id);
        const Section* section = task.codebook.section_of(cell.item_id);
        const std::string* text = task.truth.unit_text(cell.unit_id);
        auto prompt = render_prompt(*item, *section, *text, cell.unit_id,
                                    cfg.styles[cell.style_idx],
                                    cfg.approaches[cell.approach_idx]);
        RunRecord rec;
        rec.cell = cell;
        rec.query = gateway.submit_query(cfg.models[cell.model_idx], prompt);
        if (rec.query.transport_failed) {
            rec.noncompliance_reason = noncompliance_reason_name(NonComplianceReason::Transport);
        } else {
            ParsedAnnotation pa = extract_response(rec.query.raw_output, *item);
            if (pa.compliant())
                rec.parsed_value = pa.value;
            else
                rec.noncompliance_reason = noncompliance_reason_name(*pa.reason);
        }
        return rec;
    };

    auto write_record = [&](const RunRecord& rec) {
        records_out << record_to_json(run, rec).dump() << std::endl;
        done.insert(cell_key(run, rec.cell));
        summary.new_queries += 1;
        if (rec.query.transport_failed) summary.transport_failures += 1;
    };

    size_t i = 0;
    while (i < cells.size()) {
        // One configuration block at a time; its energy window is disjoint
        // from every other block's.
        const std::string block_id = config_id(run, cells[i]);
        size_t block_end = i;
        while (block_end < cells.size() && config_id(run, cells[block_end]) == block_id)
            ++block_end;

        std::vector<RunCell> block_pending;
        for (size_t c = i; c < block_end; ++c) {
            if (done.count(cell_key(run, cells[c])))
                summary.already_done += 1;
            else
                block_pending.push_back(cells[c]);
        }
        if (block_pending.empty()) {
            i = block_end;
            continue;
        }
        if (session.stop_flag && session.stop_flag->load()) {
            summary.stopped_early = true;
            break;
        }

        // Respect the session cap exactly: run only as many new queries as
        // the cap still allows, then leave a resumable state.
        std::vector<RunCell> todo = block_pending;
        if (session.max_cell_queries >= 0) {
            const long long room = session.max_cell_queries - summary.new_queries;
            if (room <= 0) {
                summary.stopped_early = true;
                break;
            }
            if (static_cast<long long>(todo.size()) > room) {
                todo.resize(static_cast<size_t>(room));
                summary.stopped_early = true;
            }
        }

        const auto e0 = energy.sample();
        const int workers = std::max(1, cfg.policies.workers);
        if (workers == 1 || todo.size() == 1) {
            for (const auto& cell : todo) {
                if (session.stop_flag && session.stop_flag->load()) {
                    summary.stopped_early = true;
                    break;
                }
                write_record(run_cell(cell));
            }
        } else {
            // Bounded worker pool; persistence stays single-writer here.
            std::atomic<size_t> next{0};
            std::mutex qm;
            std::condition_variable qcv;
            std::deque<RunRecord> results;
            std::atomic<size_t> finished{0};
            auto worker = [&] {
                for (;;) {
                    if (session.stop_flag && session.stop_flag->load()) break;
                    const size_t idx = next.fetch_add(1);
                    if (idx >= todo.size()) break;
                    RunRecord rec = run_cell(todo[idx]);
                    {
                        std::lock_guard lock(qm);
                        results.push_back(std::move(rec));
                        finished.fetch_add(1);
                    }
                    qcv.notify_one();
                }
            };
            std::vector<std::thread> pool;
            const size_t n_workers = std::min<size_t>(workers, todo.size());
            pool.reserve(n_workers);
            for (size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
            size_t written = 0;
            while (written < todo.size()) {
                {
                    std::unique_lock lock(qm);
                    qcv.wait_for(lock, std::chrono::milliseconds(50),
                                 [&] { return !results.empty(); });
                    while (!results.empty()) {
                        write_record(results.front());
                        results.pop_front();
                        ++written;
                    }
                }
                if (session.stop_flag && session.stop_flag->load()) break;
            }
            for (auto& t : pool) t.join();
            {
                // drain whatever a stopping worker still delivered
                std::lock_guard lock(qm);
                while (!results.empty()) {
                    write_record(results.front());
                    results.pop_front();
                    ++written;
                }
            }
            if (written < todo.size()) summary.stopped_early = true;
        }

        const bool block_completed =
            std::all_of(block_pending.begin(), block_pending.end(), [&](const RunCell& c) {
                return done.count(cell_key(run, c)) > 0;
            });
        if (block_completed && !energy_rows.count(block_id)) {
            const auto e1 = energy.sample();
            std::optional<double> kwh;
            if (e0 && e1) kwh = *e1 - *e0;
            json row = {{"config_id", block_id}, {"kwh", kwh ? json(*kwh) : json(nullptr)}};
            energy_out << row.dump() << std::endl;
            energy_rows[block_id] = kwh;
        }
        if (summary.stopped_early) break;
        i = block_end;
    }
    energy.stop();

    session_entry["new_queries"] = summary.new_queries;
    session_entry["stopped_early"] = summary.stopped_early;
    manifest["sessions"].push_back(session_entry);
    std::ofstream mout(manifest_path(run_dir));
    mout << manifest.dump(2) << "\n";
    return summary;
}

// ---------------------------------------------------------------------------
// Evaluation over the run log

namespace {

GroundTruthDataset restrict_units(const GroundTruthDataset& truth,
                                  const std::set<std::string>& keep) {
    GroundTruthDataset out;
    out.task_id = truth.task_id;
    for (const auto& u : truth.units)
        if (keep.count(u.first)) out.units.push_back(u);
    for (const auto& [key, v] : truth.resolved)
        if (keep.count(key.first)) out.resolved.emplace(key, v);
    for (const auto& [key, v] : truth.coder_annotations)
        if (keep.count(std::get<0>(key))) out.coder_annotations.emplace(key, v);
    return out;
}

std::string model_label(const LoadedRun& run, const RunCell& cell) {
    const auto& cfg = run.config;
    std::string label = cfg.models[cell.model_idx].name;
    const bool qualify = cfg.styles.size() > 1 || cfg.approaches.size() > 1;
    if (qualify) {
        label += " [";
        label += cfg.styles[cell.style_idx].name();
        label += "/";
        label += cfg.approaches[cell.approach_idx].name();
        label += "]";
    }
    if (cfg.repeats > 1) label += " r" + std::to_string(cell.repeat);
    return label;
}

}  // namespace

RunEvaluation evaluate_run(const LoadedRun& run, const std::vector<RunRecord>& records,
                           const std::map<std::string, std::optional<double>>& energy_rows,
                           const EvalOptions& options) {
    RunEvaluation eval;

    // Raw output is authoritative: re-parse rather than trusting snapshots.
    std::map<std::string, std::map<std::string, std::map<std::string, ParsedAnnotation>>> parsed;
    std::map<std::string, EfficiencyAccumulator> acc;
    std::map<std::string, RunCell> config_cell;  // representative cell per config

    for (const auto& rec : records) {
        const std::string cfg_id = config_id(run, rec.cell);
        config_cell.emplace(cfg_id, rec.cell);
        record_query_efficiency(rec.query, acc[cfg_id]);

        const auto& task = run.tasks[rec.cell.task_idx];
        const AnnotationItem* item = task.codebook.find_item(rec.cell.item_id);
        ParsedAnnotation pa =
            rec.query.transport_failed
                ? ParsedAnnotation::non_compliant(NonComplianceReason::Transport)
                : extract_response(rec.query.raw_output, *item);
        parsed[cfg_id][rec.cell.item_id].emplace(rec.cell.unit_id, std::move(pa));
    }

    for (const auto& [cfg_id, cell] : config_cell) {
        auto energy_it = energy_rows.find(cfg_id);
        eval.efficiency[cfg_id] = finalize_efficiency(
            acc[cfg_id],
            energy_it != energy_rows.end() ? energy_it->second : std::nullopt);
    }

    for (const auto& [cfg_id, by_item] : parsed) {
        const RunCell& cell = config_cell.at(cfg_id);
        const auto& task = run.tasks[cell.task_idx];

        // Evaluation sees exactly the queried universe: the evaluation
        // partition when splits are configured, the whole dataset otherwise.
        std::set<std::string> universe;
        for (const auto& [unit_id, text] : task.truth.units) {
            if (task.split &&
                task.split->assignment.at(unit_id) != run.config.evaluation_partition)
                continue;
            universe.insert(unit_id);
        }
        const GroundTruthDataset truth = restrict_units(task.truth, universe);

        // Per-item reports, then aggregate items of the same annotation kind.
        std::map<std::string, std::vector<MetricReport>> by_kind;
        for (const auto* item : task.codebook.all_items()) {
            auto it = by_item.find(item->id);
            if (it == by_item.end()) continue;
            const std::map<std::string, ParsedAnnotation>* parent = nullptr;
            if (options.conditioning == NestedConditioning::PredictedParent &&
                item->dependency) {
                auto pit = by_item.find(item->dependency->parent_item_id);
                if (pit != by_item.end()) parent = &pit->second;
            }
            MetricReport r =
                evaluate_item(*item, task.codebook, truth, it->second, options, parent);
            eval.per_item.emplace_back(cfg_id + "|" + item->id, r);
            by_kind[r.annotation_kind].push_back(std::move(r));
        }

        for (const auto& [kind, reports] : by_kind) {
            EvalRow row;
            row.config_id = cfg_id;
            row.model_label = model_label(run, cell);
            row.task_label = task.spec.id;
            if (by_kind.size() > 1) row.task_label += " (" + kind + ")";
            row.report = aggregate_item_metrics(reports);
            eval.rows.push_back(std::move(row));
        }
    }

    std::sort(eval.rows.begin(), eval.rows.end(), [](const EvalRow& a, const EvalRow& b) {
        return std::tie(a.model_label, a.task_label) < std::tie(b.model_label, b.task_label);
    });
    return eval;
}

}  // namespace annobench
