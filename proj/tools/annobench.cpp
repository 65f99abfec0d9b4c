#include <atomic>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "annobench/advisor.hpp"
#include "annobench/codebook.hpp"
#include "annobench/orchestrator.hpp"
#include "annobench/reporting.hpp"

namespace fs = std::filesystem;
using namespace annobench;

namespace {

std::atomic<bool> g_stop{false};

void handle_signal(int) { g_stop.store(true); }

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write file: " + path);
    out << content;
}

void print_diagnostics(const ValidationError& e) {
    std::cerr << "validation failed: " << e.what() << "\n";
    for (const auto& d : e.diagnostics)
        std::cerr << "  [" << d.where << "] " << d.message << "\n";
}

HttpGateway::Options gateway_options(const RunConfig& cfg) {
    HttpGateway::Options o;
    o.retry = cfg.policies.retry;
    return o;
}

int cmd_validate(const std::string& codebook_path, const std::string& dataset_path,
                 const std::string& aggregation) {
    auto cb = load_codebook(codebook_path);
    std::cout << "codebook '" << cb.id << "' ok: " << cb.sections.size() << " section(s), "
              << cb.all_items().size() << " item(s)\n";
    if (!dataset_path.empty()) {
        auto truth = load_ground_truth(dataset_path, cb, aggregation_from_string(aggregation));
        std::cout << "dataset '" << truth.task_id << "' ok: " << truth.units.size()
                  << " unit(s), " << truth.resolved.size() << " resolved value(s)\n";
    }
    return 0;
}

int cmd_split(const std::string& codebook_path, const std::string& dataset_path,
              const std::string& aggregation, std::vector<double> ratios, std::uint64_t seed,
              const std::string& out_path) {
    auto cb = load_codebook(codebook_path);
    auto truth = load_ground_truth(dataset_path, cb, aggregation_from_string(aggregation));
    auto split = make_splits(truth, cb, {ratios[0], ratios[1], ratios[2]}, seed);
    for (const auto& w : split.warnings) std::cerr << "warning: " << w << "\n";
    const auto text = serialize_split(split);
    if (out_path.empty())
        std::cout << text;
    else
        write_file(out_path, text);
    std::cout << "split: " << split.units_in(Partition::Train).size() << " train / "
              << split.units_in(Partition::Validation).size() << " validation / "
              << split.units_in(Partition::Test).size() << " test\n";
    return 0;
}

int run_session(const std::string& config_path, const std::string& run_dir, bool resume,
                long long max_queries) {
    const bool have_state = fs::exists(fs::path(run_dir) / "manifest.json");
    if (resume && !have_state) {
        std::cerr << "nothing to resume: " << run_dir << " has no run state\n";
        return 1;
    }
    if (!resume && have_state) {
        std::cerr << run_dir << " already contains a run; use `annobench resume`\n";
        return 1;
    }
    auto config = load_run_config(config_path);
    auto run = prepare_run(config);
    for (const auto& task : run.tasks)
        if (task.split)
            for (const auto& w : task.split->warnings)
                std::cerr << "warning (" << task.spec.id << "): " << w << "\n";

    HttpGateway gateway(gateway_options(config));
    auto energy = make_energy_provider(config.energy.kind, config.energy.path);

    std::signal(SIGINT, handle_signal);
    std::signal(SIGTERM, handle_signal);
    RunSessionOptions session;
    session.stop_flag = &g_stop;
    session.max_cell_queries = max_queries;

    auto summary = execute_run(run, gateway, *energy, run_dir, session);
    std::cout << "cells: " << summary.total_cells << " total, " << summary.already_done
              << " already done, " << summary.new_queries << " queried this session, "
              << summary.transport_failures << " transport failure(s)\n";
    if (summary.stopped_early) {
        std::cout << "stopped early; resume with: annobench resume --config " << config_path
                  << " --run-dir " << run_dir << "\n";
        return 2;
    }
    return 0;
}

int cmd_evaluate(const std::string& config_path, const std::string& run_dir,
                 const std::string& out_path, const std::string& format,
                 const std::string& policy, const std::string& conditioning) {
    auto run = prepare_run(load_run_config(config_path));
    auto records = load_run_records(run, run_dir);
    if (records.empty()) {
        std::cerr << "no records found under " << run_dir << "\n";
        return 1;
    }
    EvalOptions options;
    options.policy = noncompliance_policy_from_string(
        policy.empty() ? noncompliance_policy_name(run.config.policies.noncompliance) : policy);
    if (conditioning == "predicted")
        options.conditioning = NestedConditioning::PredictedParent;
    auto eval = evaluate_run(run, records, load_energy_rows(run_dir), options);
    auto table = emit_metrics_table(eval.rows,
                                    format == "json" ? TableFormat::Json : TableFormat::Csv);
    if (out_path.empty())
        std::cout << table;
    else
        write_file(out_path, table);
    return 0;
}

int cmd_report(const std::string& config_path, const std::string& run_dir,
               const std::string& manifest_out, const std::string& tradeoff_out,
               const std::string& svg_out, bool validate, const std::string& manifest_in) {
    if (!manifest_in.empty()) {
        auto missing = validate_manifest(nlohmann::json::parse(slurp(manifest_in)));
        if (missing.empty()) {
            std::cout << "manifest is publication-ready: all seven sections present\n";
            return 0;
        }
        for (const auto& name : missing) std::cerr << "missing section: " << name << "\n";
        return 1;
    }

    auto run = prepare_run(load_run_config(config_path));
    auto records = load_run_records(run, run_dir);
    auto eval = evaluate_run(run, records, load_energy_rows(run_dir),
                             {run.config.policies.noncompliance, NestedConditioning::GoldParent});
    auto manifest = emit_manifest(run, records, eval);

    if (validate) {
        auto missing = validate_manifest(manifest);
        if (!missing.empty()) {
            for (const auto& name : missing) std::cerr << "missing section: " << name << "\n";
            return 1;
        }
        std::cout << "manifest is publication-ready: all seven sections present\n";
    }
    if (!manifest_out.empty()) write_file(manifest_out, manifest.dump(2) + "\n");
    if (!tradeoff_out.empty()) write_file(tradeoff_out, emit_tradeoff_data(run, eval));
    if (!svg_out.empty()) write_file(svg_out, render_tradeoff_svg(run, eval));
    if (manifest_out.empty() && tradeoff_out.empty() && svg_out.empty() && !validate)
        std::cout << manifest.dump(2) << "\n";
    return 0;
}

int cmd_render(const std::string& codebook_path, const std::string& item_id,
               const std::string& unit_text, const std::string& unit_id,
               const std::string& style_name, const std::string& approach_name,
               const std::string& persona_text, const std::string& cot_text, int max_examples) {
    auto cb = load_codebook(codebook_path);
    const AnnotationItem* item = cb.find_item(item_id);
    if (!item) {
        std::cerr << "no item '" << item_id << "' in codebook '" << cb.id << "'\n";
        return 1;
    }
    const Section* section = cb.section_of(item_id);
    const std::string style_text =
        style_name == "persona" ? persona_text : (style_name == "cot" ? cot_text : "");
    auto style = prompt_style_from_name(style_name, style_text);
    auto approach = learning_approach_from_name(
        approach_name, max_examples > 0 ? std::optional<int>(max_examples) : std::nullopt);
    auto prompt = render_prompt(*item, *section, unit_text, unit_id, style, approach);
    std::cout << prompt.text << "\n";
    std::cerr << "fingerprint: " << prompt.fingerprint << " chars: " << prompt.char_count
              << "\n";
    return 0;
}

int cmd_advise(const std::string& input_path, const std::string& out_path) {
    auto report = advise(parse_advisor_input(slurp(input_path)));
    auto text = serialize_advisor_report(report);
    if (out_path.empty())
        std::cout << text;
    else
        write_file(out_path, text);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"codebook-driven LLM annotation benchmarking harness"};
    app.require_subcommand(1);

    std::string codebook_path, dataset_path, aggregation = "resolved";
    std::string config_path, run_dir, out_path, format = "csv", policy, conditioning = "gold";
    std::string manifest_out, tradeoff_out, svg_out, manifest_in;
    std::string item_id, unit_text, unit_id = "cli", style_name = "standard",
                approach_name = "zero_shot", persona_text, cot_text, input_path;
    std::vector<double> ratios{0.6, 0.2, 0.2};
    std::uint64_t seed = 0;
    long long max_queries = -1;
    int max_examples = 0;
    bool validate_flag = false;

    auto* validate = app.add_subcommand("validate", "validate a codebook (and optional dataset)");
    validate->add_option("--codebook", codebook_path)->required();
    validate->add_option("--dataset", dataset_path);
    validate->add_option("--aggregation", aggregation)
        ->check(CLI::IsMember({"resolved", "single", "majority", "mean_dichotomize"}));

    auto* split = app.add_subcommand("split", "deterministic stratified train/validation/test split");
    split->add_option("--codebook", codebook_path)->required();
    split->add_option("--dataset", dataset_path)->required();
    split->add_option("--aggregation", aggregation);
    split->add_option("--ratios", ratios)->expected(3);
    split->add_option("--seed", seed);
    split->add_option("--out", out_path);

    auto* run = app.add_subcommand("run", "execute the experiment grid from a config file");
    run->add_option("--config", config_path)->required();
    run->add_option("--run-dir", run_dir)->required();
    run->add_option("--max-queries", max_queries,
                    "stop after this many new queries (resumable)");

    auto* resume = app.add_subcommand("resume", "continue an interrupted run");
    resume->add_option("--config", config_path)->required();
    resume->add_option("--run-dir", run_dir)->required();
    resume->add_option("--max-queries", max_queries);

    auto* evaluate = app.add_subcommand("evaluate", "compute metrics from the run log");
    evaluate->add_option("--config", config_path)->required();
    evaluate->add_option("--run-dir", run_dir)->required();
    evaluate->add_option("--out", out_path);
    evaluate->add_option("--format", format)->check(CLI::IsMember({"csv", "json"}));
    evaluate->add_option("--policy", policy)->check(CLI::IsMember({"exclude", "penalize"}));
    evaluate->add_option("--conditioning", conditioning)
        ->check(CLI::IsMember({"gold", "predicted"}));

    auto* report = app.add_subcommand("report", "emit manifest and trade-off documents");
    report->add_option("--config", config_path);
    report->add_option("--run-dir", run_dir);
    report->add_option("--manifest-out", manifest_out);
    report->add_option("--tradeoff-out", tradeoff_out);
    report->add_option("--svg-out", svg_out);
    report->add_flag("--validate", validate_flag, "check the seven disclosure sections");
    report->add_option("--manifest", manifest_in, "validate an existing manifest document");

    auto* render = app.add_subcommand("render", "print one rendered prompt");
    render->add_option("--codebook", codebook_path)->required();
    render->add_option("--item", item_id)->required();
    render->add_option("--unit-text", unit_text)->required();
    render->add_option("--unit-id", unit_id);
    render->add_option("--style", style_name)->check(CLI::IsMember({"standard", "persona", "cot"}));
    render->add_option("--approach", approach_name)
        ->check(CLI::IsMember({"zero_shot", "few_shot"}));
    render->add_option("--persona-text", persona_text);
    render->add_option("--cot-text", cot_text);
    render->add_option("--max-examples", max_examples);

    auto* advise_cmd = app.add_subcommand("advise", "validation workflow recommendations");
    advise_cmd->add_option("--input", input_path)->required();
    advise_cmd->add_option("--out", out_path);

    CLI11_PARSE(app, argc, argv);

    try {
        if (validate->parsed()) return cmd_validate(codebook_path, dataset_path, aggregation);
        if (split->parsed())
            return cmd_split(codebook_path, dataset_path, aggregation, ratios, seed, out_path);
        if (run->parsed()) return run_session(config_path, run_dir, false, max_queries);
        if (resume->parsed()) return run_session(config_path, run_dir, true, max_queries);
        if (evaluate->parsed())
            return cmd_evaluate(config_path, run_dir, out_path, format, policy, conditioning);
        if (report->parsed())
            return cmd_report(config_path, run_dir, manifest_out, tradeoff_out, svg_out,
                              validate_flag, manifest_in);
        if (render->parsed())
            return cmd_render(codebook_path, item_id, unit_text, unit_id, style_name,
                              approach_name, persona_text, cot_text, max_examples);
        if (advise_cmd->parsed()) return cmd_advise(input_path, out_path);
    } catch (const ValidationError& e) {
        print_diagnostics(e);
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
