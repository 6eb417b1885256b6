// Copyright (C) 2026 The amk authors
// SPDX-License-Identifier: Apache-2.0

#include "amk/prompt_refiner.hpp"

#include <cstdlib>
#include <sstream>

#include <json.hpp>

#include "amk/error.hpp"
#include "amk/fs_util.hpp"
#include "amk/http_client.hpp"

namespace amk {

namespace {

std::string replace_all(std::string s, std::string_view from, std::string_view to) {
    std::size_t pos = 0;
    while ((pos = s.find(from, pos)) != std::string::npos) {
        s.replace(pos, from.size(), to);
        pos += to.size();
    }
    return s;
}

std::string default_subject(const std::string& s) { return s.empty() ? std::string("person") : s; }

}  // namespace

void validate_target_age(int age) {
    if (age < kMinTargetAge || age > kMaxTargetAge)
        throw ValidationError("target age " + std::to_string(age) + " is outside the supported range " +
                              std::to_string(kMinTargetAge) + "-" + std::to_string(kMaxTargetAge));
}

std::filesystem::path data_dir() {
    if (const char* env = std::getenv("AMK_DATA_DIR"); env != nullptr && *env != '\0') return env;
    return AMK_DATA_DIR;
}

TemplateTable TemplateTable::parse(std::string_view text) {
    TemplateTable table;
    std::istringstream in{std::string(text)};
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t.front() == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw IoError("template table line " + std::to_string(lineno) + ": expected 'key = template'");
        ConditionTemplate entry;
        entry.text = trim(std::string_view(t).substr(eq + 1));
        std::istringstream names(t.substr(0, eq));
        std::string name;
        while (std::getline(names, name, '|')) {
            name = trim(name);
            if (name.empty()) continue;
            if (entry.key.empty())
                entry.key = name;
            else
                entry.aliases.push_back(name);
        }
        if (entry.key.empty() || entry.text.empty())
            throw IoError("template table line " + std::to_string(lineno) + ": empty key or template");
        try {
            table.add(std::move(entry));
        } catch (const ValidationError& e) {
            throw IoError("template table line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return table;
}

TemplateTable TemplateTable::load(const std::filesystem::path& path) { return parse(read_file(path)); }

TemplateTable TemplateTable::load_default() { return load(data_dir() / "prompt_templates.txt"); }

void TemplateTable::add(ConditionTemplate entry) {
    if (find(entry.key) != nullptr) throw ValidationError("condition '" + entry.key + "' is already registered");
    for (const auto& alias : entry.aliases)
        if (find(alias) != nullptr) throw ValidationError("condition alias '" + alias + "' is already registered");
    entries_.push_back(std::move(entry));
}

const ConditionTemplate* TemplateTable::find(std::string_view condition) const {
    const std::string needle = to_lower(trim(condition));
    for (const auto& e : entries_) {
        if (to_lower(e.key) == needle) return &e;
        for (const auto& a : e.aliases)
            if (to_lower(a) == needle) return &e;
    }
    return nullptr;
}

PromptRefiner::PromptRefiner(TemplateTable table, std::optional<LlmSettings> llm)
    : table_(std::move(table)), llm_(std::move(llm)) {
    if (llm_ && llm_->system_prompt.empty()) {
        const auto path = data_dir() / "llm_system_prompt.txt";
        if (fs::exists(path)) llm_->system_prompt = trim(read_file(path));
    }
}

std::vector<std::string> PromptRefiner::condition_catalog() const {
    std::vector<std::string> keys;
    for (const auto& e : table_.entries()) keys.push_back(e.key);
    return keys;
}

void PromptRefiner::register_condition(const std::string& key, const std::string& template_text) {
    table_.add(ConditionTemplate{key, {}, template_text});
}

std::string PromptRefiner::from_template(const EditRequest& req) const {
    const std::string subject = default_subject(req.subject_desc);
    const std::string age = std::to_string(req.age_target);
    const std::string condition = trim(req.condition);
    if (condition.empty()) return subject + ", " + age + " years old";
    if (const ConditionTemplate* tpl = table_.find(condition))
        return replace_all(replace_all(tpl->text, "{subject}", subject), "{age}", age);
    return subject + ", " + age + " years old, " + condition;
}

RefinedPrompt PromptRefiner::refine(const EditRequest& req, RefineMode mode) const {
    validate_target_age(req.age_target);
    RefinedPrompt out;
    if (mode == RefineMode::template_only) {
        out.text = from_template(req);
        return out;
    }

    auto fall_back = [&](const std::string& why) {
        out.text = from_template(req);
        out.fell_back = true;
        out.warning = "LLM refinement unavailable (" + why + "); used template table";
        return out;
    };
    if (!llm_ || llm_->endpoint.empty()) return fall_back("no endpoint configured");

    using nlohmann::json;
    std::ostringstream user;
    user << "Subject: " << default_subject(req.subject_desc) << "\nTarget age: " << req.age_target
         << "\nCondition: " << (trim(req.condition).empty() ? "none" : trim(req.condition));
    json body{{"model", llm_->model},
              {"temperature", 0},
              {"messages",
               json::array({json{{"role", "system"}, {"content", llm_->system_prompt}},
                            json{{"role", "user"}, {"content", user.str()}}})}};
    out.llm_request = body.dump();

    HttpRequestOptions opts;
    opts.timeout_ms = llm_->timeout_ms;
    opts.min_interval_ms = llm_->min_interval_ms;
    std::string token = llm_->token;
    if (token.empty())
        if (const char* env = std::getenv("AMK_LLM_TOKEN")) token = env;
    if (!token.empty()) opts.headers.emplace_back("Authorization", "Bearer " + token);

    try {
        HttpResponse res = http_post_json(llm_->endpoint, llm_->path, out.llm_request, opts);
        out.llm_response = res.body;
        if (res.status != 200) return fall_back("HTTP status " + std::to_string(res.status));
        const json reply = json::parse(res.body);
        std::string text = trim(reply.at("choices").at(0).at("message").at("content").get<std::string>());
        if (text.empty()) return fall_back("empty completion");
        if (text.find(std::to_string(req.age_target)) == std::string::npos)
            return fall_back("completion does not mention the target age");
        out.text = std::move(text);
        out.from_llm = true;
        return out;
    } catch (const IoError& e) {
        return fall_back(e.what());
    } catch (const json::exception& e) {
        return fall_back(std::string("malformed completion: ") + e.what());
    }
}

}  // namespace amk
