#include <doctest.h>

#include "annobench/reporting.hpp"

using namespace annobench;

namespace {

EvalRow row(const std::string& model, const std::string& task, double f1, double acc, double p,
            double r, double kappa, double alpha) {
    EvalRow row;
    row.model_label = model;
    row.task_label = task;
    row.config_id = task + "|" + model + "|standard|zero-shot";
    row.report.annotation_kind = "categorical";
    row.report.macro_f1 = f1;
    row.report.accuracy = acc;
    row.report.macro_precision = p;
    row.report.macro_recall = r;
    row.report.cohen_kappa = kappa;
    row.report.krippendorff_alpha = alpha;
    row.report.n_evaluated = 100;
    row.report.compliance_rate = 1.0;
    return row;
}

LoadedRun manifest_run() {
    LoadedRun run;
    run.config.run_id = "report-run";
    run.grid_hash = "hash";
    ModelConfig m;
    m.name = "alpha";
    m.version_tag = "alpha:latest";
    m.parameter_count = 8000000000;
    m.quantisation = "Q4_K_M";
    m.sampling = resolve_sampling_params({0.77, std::nullopt, std::nullopt});
    m.endpoint = {"http://127.0.0.1:1", WireProtocol::OllamaGenerate};
    run.config.models.push_back(m);
    run.config.styles = {PromptStyle::standard()};
    run.config.approaches = {LearningApproach::zero_shot(), LearningApproach::few_shot()};
    run.config.hardware = {{"accelerator", "stub-cpu"},
                           {"memory", "1GB"},
                           {"inference_framework", "stub"}};

    LoadedTask task;
    task.spec.id = "toy";
    Codebook cb;
    cb.id = "toy";
    cb.title = "Toy";
    Section sec;
    sec.name = "S";
    sec.instructions = "i";
    AnnotationItem item;
    item.id = "flag";
    item.name = "Flag";
    item.tooltip = "?";
    item.kind = BinaryKind{};
    item.examples.push_back({"nice", AnnotationValue{1}, std::nullopt});
    sec.items.push_back(item);
    cb.sections.push_back(sec);
    task.codebook = cb;
    task.truth.task_id = "toy";
    for (int i = 0; i < 4; ++i) {
        std::string id = "u" + std::to_string(i);
        task.truth.units.emplace_back(id, "text " + id);
        task.truth.resolved.emplace(std::make_pair(id, std::string("flag")),
                                    AnnotationValue{i % 2});
    }
    run.config.tasks.push_back(task.spec);
    run.tasks.push_back(std::move(task));
    return run;
}

std::vector<RunRecord> fabricate_records(const LoadedRun& run) {
    std::vector<RunRecord> records;
    auto cells = expand_grid(run);
    for (const auto& cell : cells) {
        RunRecord rec;
        rec.cell = cell;
        rec.query.fingerprint = "fp-" + cell.unit_id;
        rec.query.raw_output = "{\"response\": 1}";
        rec.query.output_chars = static_cast<long long>(rec.query.raw_output.size());
        rec.query.duration_s = 0.5;
        rec.query.attempts = 1;
        rec.query.completed_at = "2026-01-01T00:00:00Z";
        records.push_back(std::move(rec));
    }
    return records;
}

}  // namespace

TEST_CASE("format_metric rounds half to even at three decimals") {
    CHECK(format_metric(0.3571) == "0.357");
    CHECK(format_metric(0.7) == "0.700");
    CHECK(format_metric(0.3565) == "0.356");   // tie to even (356)
    CHECK(format_metric(0.3575) == "0.358");   // tie to even (358)
    CHECK(format_metric(0.0005) == "0.000");   // tie to even (0)
    CHECK(format_metric(0.0015) == "0.002");
    CHECK(format_metric(-0.123456) == "-0.123");
    CHECK(format_metric(-0.0004) == "0.000");  // never -0.000
    CHECK(format_metric(1.0) == "1.000");
    CHECK(format_metric(std::nullopt) == "NA");
}

TEST_CASE("metrics table matches the eight-column format") {
    std::vector<EvalRow> rows = {
        row("DeepSeek-R1", "approval", 0.357, 0.414, 0.476, 0.355, 0.225, 0.538),
        row("DeepSeek-R1", "psych-dist", 0.393, 0.948, 0.415, 0.376, 0.643, 0.656),
        row("GPT-OSS", "approval", 0.427, 0.477, 0.481, 0.418, 0.285, 0.571),
    };
    const std::string want =
        "Model,Task,F1,Accuracy,Precision,Recall,kappa,alpha\n"
        "DeepSeek-R1,approval,0.357,0.414,0.476,0.355,0.225,0.538\n"
        "DeepSeek-R1,psych-dist,0.393,0.948,0.415,0.376,0.643,0.656\n"
        "GPT-OSS,approval,0.427,0.477,0.481,0.418,0.285,0.571\n";
    CHECK(emit_metrics_table(rows, TableFormat::Csv) == want);

    SUBCASE("row order is deterministic regardless of input order") {
        std::vector<EvalRow> shuffled = {rows[2], rows[0], rows[1]};
        CHECK(emit_metrics_table(shuffled, TableFormat::Csv) == want);
    }
    SUBCASE("ordinal columns appear when any report carries them") {
        auto lik = row("alpha", "approval", 0.4, 0.5, 0.4, 0.4, 0.2, 0.5);
        lik.report.quadratic_weighted_kappa = 0.61;
        lik.report.spearman_rho = 0.55;
        auto table = emit_metrics_table({rows[0], lik}, TableFormat::Csv);
        CHECK(table.find("kappa,alpha,QWK,rho\n") != std::string::npos);
        CHECK(table.find("alpha,approval,0.400,0.500,0.400,0.400,0.200,0.500,0.610,0.550") !=
              std::string::npos);
        // the non-ordinal row gets NA cells
        CHECK(table.find("DeepSeek-R1,approval,0.357,0.414,0.476,0.355,0.225,0.538,NA,NA") !=
              std::string::npos);
    }
    SUBCASE("json mirror carries counts and compliance") {
        auto text = emit_metrics_table(rows, TableFormat::Json);
        auto j = nlohmann::json::parse(text);
        REQUIRE(j.size() == 3);
        CHECK(j[0]["model"] == "DeepSeek-R1");
        CHECK(j[0]["n_evaluated"] == 100);
        CHECK(j[0]["compliance_rate"] == doctest::Approx(1.0));
    }
}

TEST_CASE("reporting manifest carries all seven disclosure sections") {
    auto run = manifest_run();
    auto records = fabricate_records(run);
    auto eval = evaluate_run(run, records, {}, {});
    auto manifest = emit_manifest(run, records, eval);

    SUBCASE("a complete run validates") {
        CHECK(validate_manifest(manifest).empty());
        CHECK(manifest["sampling"][0]["temperature"]["provenance"] == "model_card");
        CHECK(manifest["sampling"][0]["top_k"]["provenance"] == "backend_default");
        CHECK(manifest["quantisation"][0]["quantisation"] == "Q4_K_M");
    }
    SUBCASE("each removed section is named") {
        const std::pair<const char*, const char*> sections[] = {
            {"model_identity", "model identity"},
            {"quantisation", "quantisation"},
            {"prompt_text", "prompt text"},
            {"sampling", "sampling hyperparameters"},
            {"learning_approach", "learning approach"},
            {"hardware", "hardware specification"},
            {"efficiency", "efficiency metrics"},
        };
        for (const auto& [key, name] : sections) {
            CAPTURE(key);
            auto mutated = manifest;
            mutated.erase(key);
            auto missing = validate_manifest(mutated);
            REQUIRE(missing.size() == 1);
            CHECK(missing[0] == name);
        }
    }
    SUBCASE("empty quantisation label fails its section") {
        auto mutated = manifest;
        mutated["quantisation"][0]["quantisation"] = "";
        auto missing = validate_manifest(mutated);
        REQUIRE(missing.size() == 1);
        CHECK(missing[0] == "quantisation");
    }
    SUBCASE("hardware with only concurrency fails its section") {
        auto mutated = manifest;
        mutated["hardware"] = {{"request_concurrency", 1}};
        auto missing = validate_manifest(mutated);
        REQUIRE(missing.size() == 1);
        CHECK(missing[0] == "hardware specification");
    }
    SUBCASE("manifest re-emission is byte-identical") {
        auto again = emit_manifest(run, records, eval);
        CHECK(manifest.dump(2) == again.dump(2));
    }
    SUBCASE("manifest JSON round-trips") {
        auto parsed = nlohmann::json::parse(manifest.dump());
        CHECK(validate_manifest(parsed).empty());
    }
}

TEST_CASE("trade-off table") {
    auto run = manifest_run();
    auto records = fabricate_records(run);
    std::map<std::string, std::optional<double>> energy = {
        {"toy|alpha|standard|zero-shot", 0.002},
        {"toy|alpha|standard|few-shot", std::nullopt},
    };
    auto eval = evaluate_run(run, records, energy, {});
    auto table = emit_tradeoff_data(run, eval);

    CHECK(table.find("config,mean_f1,energy_kwh,total_output_chars,avg_inference_s,"
                     "parameter_count\n") == 0);
    CHECK(table.find("alpha|standard|zero-shot,") != std::string::npos);
    CHECK(table.find("0.002000") != std::string::npos);
    // pipeline with unavailable energy keeps its row with NA
    CHECK(table.find("alpha|standard|few-shot,") != std::string::npos);
    REQUIRE(table.find("alpha|standard|few-shot,") != std::string::npos);
    auto line_start = table.find("alpha|standard|few-shot,");
    auto line = table.substr(line_start, table.find('\n', line_start) - line_start);
    CHECK(line.find(",NA,") != std::string::npos);
    CHECK(line.find("8000000000") != std::string::npos);

    SUBCASE("values recompute from the raw records") {
        // every query lasted 0.5s and produced 16 chars; 4 units per config
        auto line_of = [&](const std::string& id) {
            auto s = table.find(id + ",");
            return table.substr(s, table.find('\n', s) - s);
        };
        auto zero = line_of("alpha|standard|zero-shot");
        CHECK(zero.find("0.500000") != std::string::npos);  // avg inference
        CHECK(zero.find(",64,") != std::string::npos);      // 4 x 16 chars
    }
    SUBCASE("svg rendering includes one point per pipeline") {
        auto svg = render_tradeoff_svg(run, eval);
        CHECK(svg.find("<svg") == 0);
        CHECK(svg.find("alpha|standard|zero-shot") != std::string::npos);
        CHECK(svg.find("alpha|standard|few-shot") != std::string::npos);
        CHECK(svg.find("circle") != std::string::npos);
    }
}
