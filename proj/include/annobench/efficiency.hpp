#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "annobench/gateway.hpp"

namespace annobench {

/// Cumulative energy meter scoped to a run. sample() and stop() return
/// cumulative kWh since start(); nullopt means the reading is unavailable.
class EnergyProvider {
public:
    virtual ~EnergyProvider() = default;
    virtual std::string identity() const = 0;
    virtual void start() = 0;
    virtual std::optional<double> sample() = 0;
    virtual std::optional<double> stop() = 0;
};

/// Records that no meter is attached; every reading is unavailable.
class NullEnergyProvider : public EnergyProvider {
public:
    std::string identity() const override { return "null"; }
    void start() override {}
    std::optional<double> sample() override { return std::nullopt; }
    std::optional<double> stop() override { return std::nullopt; }
};

/// Plays back a programmed sequence of cumulative readings.
class MockEnergyProvider : public EnergyProvider {
public:
    explicit MockEnergyProvider(std::vector<double> readings)
        : readings_(std::move(readings)) {}
    std::string identity() const override { return "mock"; }
    void start() override { next_ = 0; }
    std::optional<double> sample() override;
    std::optional<double> stop() override { return sample(); }

private:
    std::vector<double> readings_;
    size_t next_ = 0;
};

/// Tails a host power meter's sample file: newline-delimited JSON objects
/// {"timestamp": ..., "cumulative_kwh": ...}. The last sample wins.
class FileEnergyProvider : public EnergyProvider {
public:
    explicit FileEnergyProvider(std::string path) : path_(std::move(path)) {}
    std::string identity() const override { return "file:" + path_; }
    void start() override {}
    std::optional<double> sample() override;
    std::optional<double> stop() override { return sample(); }

private:
    std::string path_;
};

std::unique_ptr<EnergyProvider> make_energy_provider(const std::string& kind,
                                                     const std::string& path = "");

struct EfficiencyReport {
    std::optional<double> total_energy_kwh;  // unavailable under the null provider
    double total_inference_s = 0.0;
    std::optional<double> avg_inference_s;
    long long total_output_chars = 0;
    long long n_queries = 0;
};

/// Commutative fold over query records; order never matters.
struct EfficiencyAccumulator {
    double total_inference_s = 0.0;
    long long total_output_chars = 0;
    long long n_queries = 0;
};

void record_query_efficiency(const QueryRecord& record, EfficiencyAccumulator& acc);

/// Close out a configuration's accounting. `energy_kwh` is the provider
/// delta over this configuration's window; nullopt keeps the report valid
/// with the energy field marked unavailable.
EfficiencyReport finalize_efficiency(const EfficiencyAccumulator& acc,
                                     std::optional<double> energy_kwh);

}  // namespace annobench
