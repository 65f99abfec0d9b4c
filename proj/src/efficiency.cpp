#include "annobench/efficiency.hpp"

#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace annobench {

std::optional<double> MockEnergyProvider::sample() {
    if (readings_.empty()) return std::nullopt;
    if (next_ >= readings_.size()) return readings_.back();
    return readings_[next_++];
}

std::optional<double> FileEnergyProvider::sample() {
    std::ifstream in(path_);
    if (!in) return std::nullopt;
    std::optional<double> last;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.contains("cumulative_kwh")) continue;
        double v = j.at("cumulative_kwh").get<double>();
        if (last && v < *last) continue;  // meters never run backwards
        last = v;
    }
    return last;
}

std::unique_ptr<EnergyProvider> make_energy_provider(const std::string& kind,
                                                     const std::string& path) {
    if (kind == "null" || kind.empty()) return std::make_unique<NullEnergyProvider>();
    if (kind == "file") {
        if (path.empty())
            throw std::invalid_argument("file energy provider needs a sample-file path");
        return std::make_unique<FileEnergyProvider>(path);
    }
    throw std::invalid_argument("unknown energy provider '" + kind + "'");
}

void record_query_efficiency(const QueryRecord& record, EfficiencyAccumulator& acc) {
    acc.total_inference_s += record.duration_s;
    acc.total_output_chars += record.output_chars;
    acc.n_queries += 1;
}

EfficiencyReport finalize_efficiency(const EfficiencyAccumulator& acc,
                                     std::optional<double> energy_kwh) {
    EfficiencyReport report;
    report.total_energy_kwh = energy_kwh;
    report.total_inference_s = acc.total_inference_s;
    report.total_output_chars = acc.total_output_chars;
    report.n_queries = acc.n_queries;
    if (acc.n_queries > 0)
        report.avg_inference_s = acc.total_inference_s / static_cast<double>(acc.n_queries);
    return report;
}

}  // namespace annobench
