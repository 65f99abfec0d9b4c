#include "annobench/gateway.hpp"

#include <chrono>
#include <condition_variable>
#include <ctime>
#include <stdexcept>
#include <thread>

#include <httplib.h>
#include <json.hpp>

namespace annobench {

using nlohmann::json;

const char* provenance_name(ParamProvenance p) {
    return p == ParamProvenance::ModelCard ? "model_card" : "backend_default";
}

SamplingParams resolve_sampling_params(const PartialSampling& card) {
    SamplingParams out;
    if (card.temperature) {
        if (*card.temperature < 0)
            throw std::invalid_argument("temperature must be >= 0");
        out.temperature = {*card.temperature, ParamProvenance::ModelCard};
    } else {
        out.temperature = {kDefaultTemperature, ParamProvenance::BackendDefault};
    }
    if (card.top_k) {
        if (*card.top_k < 1) throw std::invalid_argument("top_k must be >= 1");
        out.top_k = {*card.top_k, ParamProvenance::ModelCard};
    } else {
        out.top_k = {kDefaultTopK, ParamProvenance::BackendDefault};
    }
    if (card.top_p) {
        if (!(*card.top_p > 0 && *card.top_p <= 1))
            throw std::invalid_argument("top_p must be in (0, 1]");
        out.top_p = {*card.top_p, ParamProvenance::ModelCard};
    } else {
        out.top_p = {kDefaultTopP, ParamProvenance::BackendDefault};
    }
    return out;
}

const char* wire_protocol_name(WireProtocol p) {
    return p == WireProtocol::OllamaGenerate ? "ollama-generate" : "openai-chat";
}

WireProtocol wire_protocol_from_string(const std::string& s) {
    if (s == "ollama-generate") return WireProtocol::OllamaGenerate;
    if (s == "openai-chat") return WireProtocol::OpenAiChat;
    throw std::invalid_argument("unknown wire protocol '" + s + "'");
}

void ModelConfig::validate() const {
    if (name.empty()) throw std::invalid_argument("model name must be non-empty");
    if (parameter_count <= 0)
        throw std::invalid_argument("model '" + name + "': parameter_count must be > 0");
    if (sampling.temperature.value < 0)
        throw std::invalid_argument("model '" + name + "': temperature must be >= 0");
    if (sampling.top_k.value < 1)
        throw std::invalid_argument("model '" + name + "': top_k must be >= 1");
    if (!(sampling.top_p.value > 0 && sampling.top_p.value <= 1))
        throw std::invalid_argument("model '" + name + "': top_p must be in (0, 1]");
    if (endpoint.url.empty())
        throw std::invalid_argument("model '" + name + "': endpoint url must be non-empty");
}

std::string iso8601_utc_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// ---------------------------------------------------------------------------

struct HttpGateway::EndpointGate {
    std::mutex m;
    std::condition_variable cv;
    int in_flight = 0;
    int limit = 1;

    void acquire() {
        std::unique_lock lock(m);
        cv.wait(lock, [&] { return in_flight < limit; });
        ++in_flight;
    }
    void release() {
        {
            std::lock_guard lock(m);
            --in_flight;
        }
        cv.notify_one();
    }
};

HttpGateway::Options::Options() {
    now_s = [] {
        return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
            .count();
    };
    sleep_s = [](double s) {
        std::this_thread::sleep_for(std::chrono::duration<double>(s));
    };
}

HttpGateway::HttpGateway(Options options) : options_(std::move(options)) {}

HttpGateway::~HttpGateway() = default;

HttpGateway::EndpointGate& HttpGateway::gate_for(const std::string& url) {
    std::lock_guard lock(gates_mutex_);
    auto& slot = gates_[url];
    if (!slot) {
        slot = std::make_unique<EndpointGate>();
        slot->limit = options_.max_in_flight_per_endpoint;
    }
    return *slot;
}

namespace {

struct WireResult {
    bool ok = false;
    std::string body_text;  // model output on success
    std::string error;
};

WireResult post_prompt(const ModelConfig& model, const std::string& prompt_text,
                       double timeout_s) {
    httplib::Client client(model.endpoint.url);
    client.set_connection_timeout(std::chrono::duration<double>(timeout_s));
    client.set_read_timeout(std::chrono::duration<double>(timeout_s));
    client.set_write_timeout(std::chrono::duration<double>(timeout_s));

    json payload;
    std::string path;
    if (model.endpoint.protocol == WireProtocol::OllamaGenerate) {
        path = "/api/generate";
        payload = {{"model", model.version_tag},
                   {"prompt", prompt_text},
                   {"options",
                    {{"temperature", model.sampling.temperature.value},
                     {"top_k", model.sampling.top_k.value},
                     {"top_p", model.sampling.top_p.value}}},
                   {"stream", false}};
    } else {
        path = "/v1/chat/completions";
        payload = {{"model", model.version_tag},
                   {"messages", json::array({{{"role", "user"}, {"content", prompt_text}}})},
                   {"temperature", model.sampling.temperature.value},
                   {"top_p", model.sampling.top_p.value}};
    }

    auto res = client.Post(path, payload.dump(), "application/json");
    if (!res) return {false, "", "transport: " + httplib::to_string(res.error())};
    if (res->status < 200 || res->status >= 300)
        return {false, "", "http " + std::to_string(res->status) + ": " + res->body};

    json body = json::parse(res->body, nullptr, false);
    if (body.is_discarded()) return {false, "", "response body is not JSON"};
    try {
        if (model.endpoint.protocol == WireProtocol::OllamaGenerate)
            return {true, body.at("response").get<std::string>(), ""};
        return {true, body.at("choices").at(0).at("message").at("content").get<std::string>(), ""};
    } catch (const json::exception& e) {
        return {false, "", std::string("response body has wrong shape: ") + e.what()};
    }
}

}  // namespace

QueryRecord HttpGateway::submit_query(const ModelConfig& model, const RenderedPrompt& prompt) {
    QueryRecord record;
    record.fingerprint = prompt.fingerprint;

    auto& gate = gate_for(model.endpoint.url);
    gate.acquire();

    double backoff = options_.retry.initial_backoff_s;
    WireResult last;
    for (int attempt = 1; attempt <= options_.retry.max_attempts; ++attempt) {
        record.attempts = attempt;
        const double t0 = options_.now_s();
        last = post_prompt(model, prompt.text, model.timeout_s);
        record.duration_s += options_.now_s() - t0;  // backoff sleeps excluded
        if (last.ok) break;
        if (attempt < options_.retry.max_attempts) {
            options_.sleep_s(backoff);
            backoff *= options_.retry.backoff_multiplier;
        }
    }
    gate.release();

    record.completed_at = iso8601_utc_now();
    if (last.ok) {
        record.raw_output = last.body_text;
        record.output_chars = static_cast<long long>(record.raw_output.size());
    } else {
        record.transport_failed = true;
        record.error = last.error;
        record.output_chars = 0;
    }
    return record;
}

HealthReport HttpGateway::health_check(const ModelConfig& model) {
    HealthReport report;
    httplib::Client client(model.endpoint.url);
    client.set_connection_timeout(std::chrono::seconds(10));
    client.set_read_timeout(std::chrono::seconds(10));

    const bool ollama = model.endpoint.protocol == WireProtocol::OllamaGenerate;
    auto res = client.Get(ollama ? "/api/tags" : "/v1/models");
    if (!res) {
        report.error = "endpoint unreachable: " + httplib::to_string(res.error());
        return report;
    }
    if (res->status != 200) {
        report.error = "health endpoint returned http " + std::to_string(res->status);
        return report;
    }
    json body = json::parse(res->body, nullptr, false);
    if (body.is_discarded()) {
        report.error = "health endpoint body is not JSON";
        return report;
    }
    if (res->has_header("Server")) report.server_identity = res->get_header_value("Server");

    bool found = false;
    try {
        if (ollama) {
            for (const auto& m : body.at("models")) {
                if (m.at("name").get<std::string>() == model.version_tag) {
                    found = true;
                    if (m.contains("digest"))
                        report.served_digest = m.at("digest").get<std::string>();
                }
            }
        } else {
            for (const auto& m : body.at("data"))
                if (m.at("id").get<std::string>() == model.version_tag) found = true;
        }
    } catch (const json::exception& e) {
        report.error = std::string("health endpoint body has wrong shape: ") + e.what();
        return report;
    }
    if (!found) {
        report.error = "model not available: '" + model.version_tag + "' is not served";
        return report;
    }
    if (model.expected_digest && report.served_digest &&
        *model.expected_digest != *report.served_digest) {
        report.warnings.push_back("digest mismatch for '" + model.version_tag + "': config pins " +
                                  *model.expected_digest + " but server reports " +
                                  *report.served_digest);
    }
    report.ok = true;
    return report;
}

}  // namespace annobench
