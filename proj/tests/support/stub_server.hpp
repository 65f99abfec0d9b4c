// Deterministic in-process inference stub implementing both wire protocols.
// Scripted by (model, unit text); also asserts received sampling params.
#pragma once

#include <atomic>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

namespace stub {

struct SamplingExpectation {
    double temperature = 0;
    int top_k = 0;
    double top_p = 0;
};

class StubServer {
public:
    StubServer() {
        server_.Post("/api/generate", [this](const httplib::Request& req, httplib::Response& res) {
            handle_generate(req, res, /*openai=*/false);
        });
        server_.Post("/v1/chat/completions",
                     [this](const httplib::Request& req, httplib::Response& res) {
                         handle_generate(req, res, /*openai=*/true);
                     });
        server_.Get("/api/tags", [this](const httplib::Request&, httplib::Response& res) {
            nlohmann::json models = nlohmann::json::array();
            std::lock_guard lock(mutex_);
            for (const auto& [name, digest] : models_)
                models.push_back({{"name", name}, {"digest", digest}});
            respond(res, 200, nlohmann::json{{"models", models}}.dump());
        });
        server_.Get("/v1/models", [this](const httplib::Request&, httplib::Response& res) {
            nlohmann::json data = nlohmann::json::array();
            std::lock_guard lock(mutex_);
            for (const auto& [name, digest] : models_) data.push_back({{"id", name}});
            respond(res, 200, nlohmann::json{{"data", data}}.dump());
        });

        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }

    ~StubServer() {
        server_.stop();
        if (thread_.joinable()) thread_.join();
    }

    std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }

    void add_model(const std::string& name, const std::string& digest) {
        std::lock_guard lock(mutex_);
        models_.emplace_back(name, digest);
    }

    /// Canned raw output for (model, exact unit text).
    void script(const std::string& model, const std::string& unit_text, std::string raw) {
        std::lock_guard lock(mutex_);
        scripted_[{model, unit_text}] = std::move(raw);
    }

    void set_default_response(std::string raw) {
        std::lock_guard lock(mutex_);
        default_response_ = std::move(raw);
    }

    /// The next `n` generate calls fail with HTTP 500.
    void fail_next(int n) { fail_remaining_ = n; }

    /// Reject any generate call whose options do not match exactly.
    void expect_sampling(const std::string& model, SamplingExpectation e) {
        std::lock_guard lock(mutex_);
        expectations_[model] = e;
    }

    long long generate_calls() const { return calls_.load(); }
    long long sampling_mismatches() const { return mismatches_.load(); }

    std::optional<SamplingExpectation> last_received_sampling() const {
        std::lock_guard lock(mutex_);
        return last_sampling_;
    }

private:
    static void respond(httplib::Response& res, int status, std::string body) {
        res.status = status;
        res.set_header("Server", "annobench-stub/1");
        res.set_content(std::move(body), "application/json");
    }

    // The unit text is the quoted block after the final "Text:" line.
    static std::string extract_unit_text(const std::string& prompt) {
        const std::string marker = "Text:\n\"";
        auto pos = prompt.rfind(marker);
        if (pos == std::string::npos) return "";
        auto start = pos + marker.size();
        auto end = prompt.find("\"\nResponse:", start);
        if (end == std::string::npos) return "";
        return prompt.substr(start, end - start);
    }

    void handle_generate(const httplib::Request& req, httplib::Response& res, bool openai) {
        calls_.fetch_add(1);
        if (fail_remaining_.load() > 0) {
            fail_remaining_.fetch_sub(1);
            respond(res, 500, R"({"error":"scripted failure"})");
            return;
        }
        auto body = nlohmann::json::parse(req.body, nullptr, false);
        if (body.is_discarded()) {
            respond(res, 400, R"({"error":"bad json"})");
            return;
        }
        std::string model = body.value("model", "");
        std::string prompt;
        SamplingExpectation got{};
        bool has_top_k = false;
        if (openai) {
            prompt = body.at("messages").at(0).at("content").get<std::string>();
            got.temperature = body.value("temperature", -1.0);
            got.top_p = body.value("top_p", -1.0);
        } else {
            prompt = body.at("prompt").get<std::string>();
            const auto& opts = body.at("options");
            got.temperature = opts.value("temperature", -1.0);
            got.top_k = opts.value("top_k", -1);
            got.top_p = opts.value("top_p", -1.0);
            has_top_k = true;
        }

        {
            std::lock_guard lock(mutex_);
            last_sampling_ = got;
            auto it = expectations_.find(model);
            if (it != expectations_.end()) {
                const auto& want = it->second;
                bool ok = std::abs(got.temperature - want.temperature) < 1e-12 &&
                          std::abs(got.top_p - want.top_p) < 1e-12 &&
                          (!has_top_k || got.top_k == want.top_k);
                if (!ok) {
                    mismatches_.fetch_add(1);
                    respond(res, 400, R"({"error":"sampling params do not match expectation"})");
                    return;
                }
            }
        }

        std::string raw;
        {
            std::lock_guard lock(mutex_);
            auto it = scripted_.find({model, extract_unit_text(prompt)});
            raw = it != scripted_.end() ? it->second : default_response_;
        }
        if (openai) {
            nlohmann::json out = {
                {"choices",
                 nlohmann::json::array({{{"message", {{"role", "assistant"}, {"content", raw}}}}})}};
            respond(res, 200, out.dump());
        } else {
            respond(res, 200, nlohmann::json{{"response", raw}, {"done", true}}.dump());
        }
    }

    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;

    mutable std::mutex mutex_;
    std::vector<std::pair<std::string, std::string>> models_;
    std::map<std::pair<std::string, std::string>, std::string> scripted_;
    std::string default_response_ = R"({"response": 0})";
    std::map<std::string, SamplingExpectation> expectations_;
    std::optional<SamplingExpectation> last_sampling_;
    std::atomic<long long> calls_{0};
    std::atomic<long long> mismatches_{0};
    std::atomic<int> fail_remaining_{0};
};

}  // namespace stub
