#include <doctest.h>

#include "annobench/gateway.hpp"
#include "support/stub_server.hpp"

using namespace annobench;

namespace {

ModelConfig stub_model(const stub::StubServer& server, WireProtocol protocol,
                       const std::string& name = "alpha") {
    ModelConfig m;
    m.name = name;
    m.version_tag = name + ":latest";
    m.parameter_count = 1'000'000;
    m.quantisation = "Q4_K_M";
    m.sampling = resolve_sampling_params({});
    m.endpoint = {server.url(), protocol};
    m.timeout_s = 10.0;
    return m;
}

RenderedPrompt toy_prompt(const std::string& unit_text) {
    Section sec;
    sec.name = "S";
    sec.instructions = "i";
    AnnotationItem item;
    item.id = "flag";
    item.name = "Flag";
    item.tooltip = "?";
    item.kind = BinaryKind{};
    sec.items.push_back(item);
    return render_prompt(sec.items[0], sec, unit_text, "u1", PromptStyle::standard(),
                         LearningApproach::zero_shot());
}

HttpGateway::Options fast_options() {
    HttpGateway::Options o;
    o.retry.max_attempts = 3;
    o.retry.initial_backoff_s = 0.001;
    o.sleep_s = [](double) {};  // no real backoff in tests
    return o;
}

}  // namespace

TEST_CASE("resolve_sampling_params") {
    SUBCASE("full model card passes through tagged as model card") {
        auto s = resolve_sampling_params({0.6, 20, 0.95});
        CHECK(s.temperature.value == doctest::Approx(0.6));
        CHECK(s.temperature.provenance == ParamProvenance::ModelCard);
        CHECK(s.top_k.value == 20);
        CHECK(s.top_k.provenance == ParamProvenance::ModelCard);
        CHECK(s.top_p.value == doctest::Approx(0.95));
        CHECK(s.top_p.provenance == ParamProvenance::ModelCard);
    }
    SUBCASE("temperature-only card gets backend defaults for the rest") {
        auto s = resolve_sampling_params({1.0, std::nullopt, std::nullopt});
        CHECK(s.temperature.value == doctest::Approx(1.0));
        CHECK(s.temperature.provenance == ParamProvenance::ModelCard);
        CHECK(s.top_k.value == 40);
        CHECK(s.top_k.provenance == ParamProvenance::BackendDefault);
        CHECK(s.top_p.value == doctest::Approx(0.9));
        CHECK(s.top_p.provenance == ParamProvenance::BackendDefault);
    }
    SUBCASE("empty card is all backend defaults") {
        auto s = resolve_sampling_params({});
        CHECK(s.temperature.value == doctest::Approx(0.8));
        CHECK(s.top_k.value == 40);
        CHECK(s.top_p.value == doctest::Approx(0.9));
        CHECK(s.temperature.provenance == ParamProvenance::BackendDefault);
    }
    SUBCASE("invalid values are rejected") {
        CHECK_THROWS_AS(resolve_sampling_params({-0.1, std::nullopt, std::nullopt}),
                        std::invalid_argument);
        CHECK_THROWS_AS(resolve_sampling_params({std::nullopt, 0, std::nullopt}),
                        std::invalid_argument);
        CHECK_THROWS_AS(resolve_sampling_params({std::nullopt, std::nullopt, 1.5}),
                        std::invalid_argument);
    }
}

TEST_CASE("submit_query happy path on both protocols") {
    stub::StubServer server;
    server.add_model("alpha:latest", "sha256:stub-alpha");
    server.script("alpha:latest", "ping", R"({"response": 1})");

    for (auto protocol : {WireProtocol::OllamaGenerate, WireProtocol::OpenAiChat}) {
        CAPTURE(wire_protocol_name(protocol));
        HttpGateway gw(fast_options());
        auto model = stub_model(server, protocol);
        auto rec = gw.submit_query(model, toy_prompt("ping"));
        CHECK_FALSE(rec.transport_failed);
        CHECK(rec.raw_output == R"({"response": 1})");
        CHECK(rec.attempts == 1);
        CHECK(rec.output_chars == static_cast<long long>(rec.raw_output.size()));
        CHECK(rec.duration_s >= 0.0);
        CHECK_FALSE(rec.completed_at.empty());
    }
}

TEST_CASE("retry contract") {
    stub::StubServer server;
    server.add_model("alpha:latest", "sha256:stub-alpha");
    server.set_default_response(R"({"response": 0})");

    SUBCASE("two failures then success within policy") {
        server.fail_next(2);
        HttpGateway gw(fast_options());
        auto rec = gw.submit_query(stub_model(server, WireProtocol::OllamaGenerate),
                                   toy_prompt("x"));
        CHECK_FALSE(rec.transport_failed);
        CHECK(rec.attempts == 3);
    }
    SUBCASE("exhausted retries record a transport failure") {
        server.fail_next(1000);
        HttpGateway gw(fast_options());
        auto rec = gw.submit_query(stub_model(server, WireProtocol::OllamaGenerate),
                                   toy_prompt("x"));
        CHECK(rec.transport_failed);
        CHECK(rec.attempts == 3);
        CHECK(rec.output_chars == 0);
        CHECK(rec.error.find("http 500") != std::string::npos);
        server.fail_next(0);
    }
}

TEST_CASE("sampling params hit the wire exactly as resolved") {
    stub::StubServer server;
    server.add_model("alpha:latest", "sha256:stub-alpha");
    // a card specifying only temperature resolves to (temp, 40, 0.9)
    server.expect_sampling("alpha:latest", {0.77, 40, 0.9});

    auto model = stub_model(server, WireProtocol::OllamaGenerate);
    model.sampling = resolve_sampling_params({0.77, std::nullopt, std::nullopt});

    HttpGateway gw(fast_options());
    auto rec = gw.submit_query(model, toy_prompt("check"));
    CHECK_FALSE(rec.transport_failed);
    CHECK(server.sampling_mismatches() == 0);

    auto got = server.last_received_sampling();
    REQUIRE(got.has_value());
    CHECK(got->temperature == doctest::Approx(0.77));
    CHECK(got->top_k == 40);
    CHECK(got->top_p == doctest::Approx(0.9));

    // and a wrong expectation is rejected by the stub, surfacing as transport failure
    server.expect_sampling("alpha:latest", {0.5, 40, 0.9});
    auto bad = gw.submit_query(model, toy_prompt("check"));
    CHECK(bad.transport_failed);
    CHECK(server.sampling_mismatches() > 0);
}

TEST_CASE("health_check") {
    stub::StubServer server;
    server.add_model("alpha:latest", "sha256:stub-alpha");

    SUBCASE("served model reports ok with identity and digest") {
        HttpGateway gw(fast_options());
        auto h = gw.health_check(stub_model(server, WireProtocol::OllamaGenerate));
        CHECK(h.ok);
        CHECK(h.server_identity == "annobench-stub/1");
        REQUIRE(h.served_digest.has_value());
        CHECK(*h.served_digest == "sha256:stub-alpha");
        CHECK(h.warnings.empty());
    }
    SUBCASE("unknown tag names the tag") {
        HttpGateway gw(fast_options());
        auto model = stub_model(server, WireProtocol::OllamaGenerate, "ghost");
        auto h = gw.health_check(model);
        CHECK_FALSE(h.ok);
        CHECK(h.error.find("ghost:latest") != std::string::npos);
    }
    SUBCASE("digest mismatch records a warning but stays healthy") {
        HttpGateway gw(fast_options());
        auto model = stub_model(server, WireProtocol::OllamaGenerate);
        model.expected_digest = "sha256:pinned-elsewhere";
        auto h = gw.health_check(model);
        CHECK(h.ok);
        REQUIRE(h.warnings.size() == 1);
        CHECK(h.warnings[0].find("digest mismatch") != std::string::npos);
    }
    SUBCASE("openai-style model listing") {
        HttpGateway gw(fast_options());
        auto h = gw.health_check(stub_model(server, WireProtocol::OpenAiChat));
        CHECK(h.ok);
    }
    SUBCASE("unreachable endpoint") {
        HttpGateway gw(fast_options());
        auto model = stub_model(server, WireProtocol::OllamaGenerate);
        model.endpoint.url = "http://127.0.0.1:1";
        auto h = gw.health_check(model);
        CHECK_FALSE(h.ok);
        CHECK_FALSE(h.error.empty());
    }
}

TEST_CASE("injected clock makes durations deterministic") {
    stub::StubServer server;
    server.add_model("alpha:latest", "sha256:stub-alpha");
    auto options = fast_options();
    double tick = 0.0;
    options.now_s = [&tick] { return tick += 1.0; };
    HttpGateway gw(std::move(options));
    auto rec = gw.submit_query(stub_model(server, WireProtocol::OllamaGenerate), toy_prompt("x"));
    CHECK(rec.duration_s == doctest::Approx(1.0));
}

TEST_CASE("model config validation") {
    ModelConfig m;
    m.name = "m";
    m.version_tag = "m:latest";
    m.parameter_count = 0;
    m.sampling = resolve_sampling_params({});
    m.endpoint = {"http://localhost", WireProtocol::OllamaGenerate};
    CHECK_THROWS_AS(m.validate(), std::invalid_argument);
    m.parameter_count = 10;
    CHECK_NOTHROW(m.validate());
    m.endpoint.url = "";
    CHECK_THROWS_AS(m.validate(), std::invalid_argument);
}
