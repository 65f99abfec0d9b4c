#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "annobench/efficiency.hpp"
#include "support/oracles.hpp"

using namespace annobench;

namespace {
QueryRecord rec(double duration, long long chars) {
    QueryRecord r;
    r.duration_s = duration;
    r.output_chars = chars;
    r.raw_output = std::string(static_cast<size_t>(chars), 'x');
    return r;
}
}  // namespace

TEST_CASE("accumulation is plain addition") {
    EfficiencyAccumulator acc;
    record_query_efficiency(rec(1.5, 100), acc);
    record_query_efficiency(rec(2.5, 300), acc);
    auto report = finalize_efficiency(acc, std::nullopt);
    CHECK(report.total_inference_s == doctest::Approx(4.0));
    CHECK(report.total_output_chars == 400);
    CHECK(report.n_queries == 2);
    CHECK(report.avg_inference_s.value() == doctest::Approx(2.0));
    CHECK_FALSE(report.total_energy_kwh.has_value());
}

TEST_CASE("zero records leave the average not applicable") {
    EfficiencyAccumulator acc;
    auto report = finalize_efficiency(acc, std::nullopt);
    CHECK(report.n_queries == 0);
    CHECK_FALSE(report.avg_inference_s.has_value());
    CHECK(report.total_inference_s == 0.0);
}

TEST_CASE("ten thousand records match a fold oracle exactly") {
    oracle::Rng rng(41);
    EfficiencyAccumulator acc;
    double want_s = 0;
    long long want_chars = 0;
    std::vector<QueryRecord> records;
    for (int i = 0; i < 10000; ++i) {
        // exact binary fractions keep double addition associative here
        double d = static_cast<double>(rng.below(1024)) / 64.0;
        long long c = static_cast<long long>(rng.below(500));
        records.push_back(rec(d, c));
    }
    for (const auto& r : records) record_query_efficiency(r, acc);
    for (const auto& r : records) {  // independent fold
        want_s += r.duration_s;
        want_chars += r.output_chars;
    }
    auto report = finalize_efficiency(acc, 0.25);
    CHECK(report.total_inference_s == want_s);
    CHECK(report.total_output_chars == want_chars);
    CHECK(report.n_queries == 10000);
    CHECK(report.total_energy_kwh.value() == doctest::Approx(0.25));
}

TEST_CASE("accumulation order never matters") {
    oracle::Rng rng(5);
    std::vector<QueryRecord> records;
    for (int i = 0; i < 200; ++i)
        records.push_back(rec(static_cast<double>(rng.below(256)) / 16.0,
                              static_cast<long long>(rng.below(100))));
    EfficiencyAccumulator forward, backward;
    for (const auto& r : records) record_query_efficiency(r, forward);
    for (auto it = records.rbegin(); it != records.rend(); ++it)
        record_query_efficiency(*it, backward);
    CHECK(forward.total_inference_s == backward.total_inference_s);
    CHECK(forward.total_output_chars == backward.total_output_chars);
    CHECK(forward.n_queries == backward.n_queries);
}

TEST_CASE("providers") {
    SUBCASE("null provider leaves energy unavailable but the run valid") {
        NullEnergyProvider p;
        p.start();
        CHECK_FALSE(p.sample().has_value());
        auto report = finalize_efficiency(EfficiencyAccumulator{1.0, 10, 1}, p.stop());
        CHECK_FALSE(report.total_energy_kwh.has_value());
        CHECK(report.total_inference_s == doctest::Approx(1.0));
    }
    SUBCASE("mock provider plays back programmed readings") {
        MockEnergyProvider p({0.1, 0.35, 0.6});
        p.start();
        auto a = p.sample();
        auto b = p.sample();
        REQUIRE(a.has_value());
        REQUIRE(b.has_value());
        CHECK(*b - *a == doctest::Approx(0.25));
        auto report = finalize_efficiency(EfficiencyAccumulator{}, *b - *a);
        CHECK(report.total_energy_kwh.value() == doctest::Approx(0.25));
    }
    SUBCASE("file provider tails the newest cumulative sample") {
        auto path = std::filesystem::temp_directory_path() / "annobench_energy_test.ndjson";
        {
            std::ofstream out(path);
            out << R"({"timestamp": "2026-01-01T00:00:00Z", "cumulative_kwh": 0.10})" << "\n";
            out << R"({"timestamp": "2026-01-01T00:01:00Z", "cumulative_kwh": 0.23})" << "\n";
            out << "not json\n";
        }
        FileEnergyProvider p(path.string());
        p.start();
        auto v = p.sample();
        REQUIRE(v.has_value());
        CHECK(*v == doctest::Approx(0.23));
        std::filesystem::remove(path);
        CHECK_FALSE(FileEnergyProvider("/nonexistent/meter.ndjson").sample().has_value());
    }
    SUBCASE("factory") {
        CHECK(make_energy_provider("null")->identity() == "null");
        CHECK(make_energy_provider("file", "/tmp/x")->identity() == "file:/tmp/x");
        CHECK_THROWS_AS(make_energy_provider("solar"), std::invalid_argument);
        CHECK_THROWS_AS(make_energy_provider("file", ""), std::invalid_argument);
    }
}
