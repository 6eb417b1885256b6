// Copyright (C) 2026 The amk authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <mutex>

#include <json.hpp>

#include "amk/error.hpp"
#include "amk/prompt_refiner.hpp"
#include "http_stub.hpp"
#include "support.hpp"

using namespace amk;
using namespace amk::test;
using nlohmann::json;

namespace {

PromptRefiner template_refiner() { return PromptRefiner(TemplateTable::load_default()); }

LlmSettings llm_at(const std::string& url) {
    LlmSettings s;
    s.endpoint = url;
    s.model = "stub-model";
    s.token = "secret-token";
    s.timeout_ms = 2000;
    s.min_interval_ms = 0;
    return s;
}

json completion(const std::string& content) {
    return json{{"choices", json::array({json{{"message", {{"role", "assistant"}, {"content", content}}}}})}};
}

// Splits the attribute list after " with " on commas and "and".
std::size_t attribute_count(const std::string& tpl) {
    const auto with = tpl.find(" with ");
    if (with == std::string::npos) return 0;
    std::string rest = tpl.substr(with + 6);
    std::size_t n = 1;
    for (std::size_t i = 0; i < rest.size(); ++i)
        if (rest[i] == ',') ++n;
    if (rest.find(" and ") != std::string::npos && rest.find(", and ") == std::string::npos) ++n;
    return n;
}

}  // namespace

TEST_CASE("age range is 20 to 90 inclusive") {
    CHECK_NOTHROW(validate_target_age(20));
    CHECK_NOTHROW(validate_target_age(90));
    CHECK_THROWS_AS(validate_target_age(19), ValidationError);
    CHECK_THROWS_AS(validate_target_age(91), ValidationError);
    CHECK_THROWS_AS(template_refiner().refine(EditRequest{"man", 19, ""}), ValidationError);
}

TEST_CASE("default catalog holds the seven conditions in order") {
    const auto cat = template_refiner().condition_catalog();
    const std::vector<std::string> expected = {"alcoholism",    "gain weight", "good skin care",
                                               "poor skin care", "hair loss",  "strong sunlight exposure",
                                               "living in dry windy climate"};
    CHECK(cat == expected);
}

TEST_CASE("every template names the age, the subject and at least two attributes") {
    const TemplateTable table = TemplateTable::load_default();
    for (const auto& e : table.entries()) {
        CAPTURE(e.key);
        CHECK(e.text.find("{age}") != std::string::npos);
        CHECK(e.text.find("{subject}") != std::string::npos);
        CHECK(attribute_count(e.text) >= 2);
    }
}

TEST_CASE("alcohol addiction expands to the grounded description") {
    const RefinedPrompt p = template_refiner().refine(EditRequest{"male", 40, "alcohol addiction"});
    CHECK(p.text.find("40") != std::string::npos);
    CHECK(p.text.find("male") != std::string::npos);
    CHECK(p.text.find("pale skin, sunken eyes, and facial wrinkles due to long-term alcohol abuse") !=
          std::string::npos);
    CHECK_FALSE(p.from_llm);
    CHECK_FALSE(p.fell_back);
}

TEST_CASE("unknown and empty conditions") {
    const PromptRefiner r = template_refiner();
    CHECK(r.refine(EditRequest{"woman", 55, "xyzzy"}).text == "woman, 55 years old, xyzzy");
    CHECK(r.refine(EditRequest{"woman", 55, ""}).text == "woman, 55 years old");
    CHECK(r.refine(EditRequest{"", 55, "  "}).text == "person, 55 years old");
}

TEST_CASE("matching is case-insensitive and template mode is deterministic") {
    const PromptRefiner r = template_refiner();
    const auto a = r.refine(EditRequest{"man", 60, "Hair Loss"}).text;
    CHECK(a == r.refine(EditRequest{"man", 60, "hair loss"}).text);
    CHECK(a == r.refine(EditRequest{"man", 60, "balding"}).text);
    CHECK(a == template_refiner().refine(EditRequest{"man", 60, "hair loss"}).text);
}

TEST_CASE("registering conditions") {
    PromptRefiner r = template_refiner();
    r.register_condition("smoking", "a {age}-year-old {subject} with yellowed teeth and deep lip lines");
    CHECK(r.condition_catalog().back() == "smoking");
    CHECK(r.condition_catalog().size() == 8);
    CHECK(r.refine(EditRequest{"man", 70, "SMOKING"}).text ==
          "a 70-year-old man with yellowed teeth and deep lip lines");
    CHECK_THROWS_AS(r.register_condition("smoking", "x {age}"), ValidationError);
    CHECK_THROWS_AS(r.register_condition("balding", "x {age}"), ValidationError);
}

TEST_CASE("template table parsing") {
    const TemplateTable t = TemplateTable::parse("# c\n\na | b = {subject} at {age}\n");
    REQUIRE(t.entries().size() == 1);
    CHECK(t.entries()[0].aliases == std::vector<std::string>{"b"});
    CHECK(t.find("B") != nullptr);
    CHECK_THROWS_AS(TemplateTable::parse("no equals sign\n"), IoError);
    CHECK_THROWS_AS(TemplateTable::parse("a = x\na = y\n"), IoError);
    CHECK_THROWS_AS(TemplateTable::load("/nonexistent/templates.txt"), IoError);
}

TEST_CASE("LLM mode: request shape, token, audit record") {
    StubServer stub;
    std::mutex mu;
    json seen;
    std::string auth;
    stub.server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
        std::lock_guard lock(mu);
        seen = json::parse(req.body);
        auth = req.get_header_value("Authorization");
        res.set_content(completion("A 70-year-old man with deep forehead wrinkles and grey stubble.").dump(),
                        "application/json");
    });
    stub.start();

    const PromptRefiner r(TemplateTable::load_default(), llm_at(stub.url()));
    const RefinedPrompt p = r.refine(EditRequest{"man", 70, "hair loss"}, RefineMode::llm);
    CHECK(p.from_llm);
    CHECK_FALSE(p.fell_back);
    CHECK(p.text == "A 70-year-old man with deep forehead wrinkles and grey stubble.");
    CHECK(auth == "Bearer secret-token");
    CHECK(seen["model"] == "stub-model");
    REQUIRE(seen["messages"].size() == 2);
    CHECK(seen["messages"][0]["role"] == "system");
    CHECK_FALSE(seen["messages"][0]["content"].get<std::string>().empty());
    const std::string user = seen["messages"][1]["content"];
    CHECK(user.find("70") != std::string::npos);
    CHECK(user.find("hair loss") != std::string::npos);
    CHECK(json::parse(p.llm_request) == seen);
    CHECK(json::parse(p.llm_response) == completion(p.text));
}

TEST_CASE("LLM mode reads the token from AMK_LLM_TOKEN") {
    StubServer stub;
    std::string auth;
    stub.server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
        auth = req.get_header_value("Authorization");
        res.set_content(completion("a 50-year-old person").dump(), "application/json");
    });
    stub.start();
    LlmSettings s = llm_at(stub.url());
    s.token.clear();
    ::setenv("AMK_LLM_TOKEN", "from-env", 1);
    PromptRefiner(TemplateTable::load_default(), s).refine(EditRequest{"", 50, ""}, RefineMode::llm);
    ::unsetenv("AMK_LLM_TOKEN");
    CHECK(auth == "Bearer from-env");
}

TEST_CASE("LLM failures fall back to the template with a warning") {
    StubServer stub;
    std::atomic<int> mode{0};
    stub.server.Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
        switch (mode.load()) {
            case 0: res.status = 500; res.set_content("oops", "text/plain"); break;
            case 1: res.set_content("{\"choices\": []}", "application/json"); break;
            case 2: res.set_content("not json", "application/json"); break;
            case 3: res.set_content(completion("an elderly man").dump(), "application/json"); break;
        }
    });
    stub.start();
    const PromptRefiner r(TemplateTable::load_default(), llm_at(stub.url()));
    const std::string expected = template_refiner().refine(EditRequest{"man", 70, "alcoholism"}).text;
    for (int m = 0; m < 4; ++m) {
        mode = m;
        const RefinedPrompt p = r.refine(EditRequest{"man", 70, "alcoholism"}, RefineMode::llm);
        CAPTURE(m);
        CHECK(p.fell_back);
        CHECK_FALSE(p.from_llm);
        CHECK(p.text == expected);
        CHECK_FALSE(p.warning.empty());
    }
}

TEST_CASE("unreachable endpoint or missing configuration falls back") {
    int dead_port;
    {
        httplib::Server s;
        dead_port = s.bind_to_any_port("127.0.0.1");
    }
    LlmSettings s = llm_at("http://127.0.0.1:" + std::to_string(dead_port));
    s.timeout_ms = 500;
    const RefinedPrompt p =
        PromptRefiner(TemplateTable::load_default(), s).refine(EditRequest{"man", 70, ""}, RefineMode::llm);
    CHECK(p.fell_back);
    CHECK(p.text == "man, 70 years old");

    const RefinedPrompt q = template_refiner().refine(EditRequest{"man", 70, ""}, RefineMode::llm);
    CHECK(q.fell_back);
    CHECK(q.warning.find("no endpoint") != std::string::npos);
}

TEST_CASE("requests to one host are throttled") {
    StubServer stub;
    stub.server.Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
        res.set_content(completion("a 30-year-old").dump(), "application/json");
    });
    stub.start();
    LlmSettings s = llm_at(stub.url());
    s.min_interval_ms = 150;
    const PromptRefiner r(TemplateTable::load_default(), s);
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < 3; ++i) r.refine(EditRequest{"", 30, ""}, RefineMode::llm);
    const auto elapsed = std::chrono::steady_clock::now() - t0;
    CHECK(elapsed >= std::chrono::milliseconds(290));
}
