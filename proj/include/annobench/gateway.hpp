#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "annobench/prompt.hpp"

namespace annobench {

enum class ParamProvenance { ModelCard, BackendDefault };

const char* provenance_name(ParamProvenance p);

template <typename T>
struct TaggedParam {
    T value{};
    ParamProvenance provenance = ParamProvenance::BackendDefault;
};

struct SamplingParams {
    TaggedParam<double> temperature;
    TaggedParam<int> top_k;
    TaggedParam<double> top_p;
};

/// Partial model-card sampling set; missing fields take backend defaults.
struct PartialSampling {
    std::optional<double> temperature;
    std::optional<int> top_k;
    std::optional<double> top_p;
};

inline constexpr double kDefaultTemperature = 0.8;
inline constexpr int kDefaultTopK = 40;
inline constexpr double kDefaultTopP = 0.9;

/// Fill gaps with the backend defaults (temperature 0.8, top_k 40,
/// top_p 0.9), tagging each field with where it came from.
SamplingParams resolve_sampling_params(const PartialSampling& card_params);

enum class WireProtocol { OllamaGenerate, OpenAiChat };

const char* wire_protocol_name(WireProtocol p);
WireProtocol wire_protocol_from_string(const std::string& s);

struct Endpoint {
    std::string url;  // scheme://host:port
    WireProtocol protocol = WireProtocol::OllamaGenerate;
};

struct ModelConfig {
    std::string name;
    std::string version_tag;
    long long parameter_count = 0;  // parameters, not bytes
    std::string quantisation;       // e.g. "Q4_K_M"
    SamplingParams sampling;
    Endpoint endpoint;
    bool reasoning_model = false;
    std::optional<std::string> expected_digest;  // pin against the server's report
    double timeout_s = 300.0;

    void validate() const;  // throws std::invalid_argument
};

struct RetryPolicy {
    int max_attempts = 3;
    double initial_backoff_s = 0.1;
    double backoff_multiplier = 2.0;
};

struct QueryRecord {
    std::string fingerprint;
    std::string raw_output;
    double duration_s = 0.0;      // network time across attempts, backoff excluded
    long long output_chars = 0;   // bytes of raw_output
    int attempts = 1;
    std::string completed_at;     // ISO 8601 UTC
    bool transport_failed = false;
    std::string error;            // last transport error when failed
};

struct HealthReport {
    bool ok = false;
    std::string server_identity;              // e.g. "stub-server/1"
    std::optional<std::string> served_digest;
    std::vector<std::string> warnings;        // digest mismatches and the like
    std::string error;                        // set when !ok
};

/// HTTP gateway speaking both wire protocols. A per-endpoint semaphore
/// bounds in-flight requests (default 1 to keep timing uncontaminated).
class HttpGateway {
public:
    struct Options {
        RetryPolicy retry;
        int max_in_flight_per_endpoint = 1;
        std::function<double()> now_s;             // injectable for deterministic tests
        std::function<void(double)> sleep_s;       // injectable to skip real backoff
        Options();
    };

    HttpGateway() : HttpGateway(Options{}) {}
    explicit HttpGateway(Options options);
    ~HttpGateway();

    QueryRecord submit_query(const ModelConfig& model, const RenderedPrompt& prompt);
    HealthReport health_check(const ModelConfig& model);

private:
    struct EndpointGate;
    EndpointGate& gate_for(const std::string& url);

    Options options_;
    std::mutex gates_mutex_;
    std::map<std::string, std::unique_ptr<EndpointGate>> gates_;
};

std::string iso8601_utc_now();

}  // namespace annobench
