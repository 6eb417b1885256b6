// Copyright (C) 2026 The amk authors
// SPDX-License-Identifier: Apache-2.0

// Turns (subject, target age, condition) into a prompt that names concrete
// facial attributes. Template mode is a deterministic table lookup; LLM mode
// asks a chat-completion endpoint and falls back to the table on failure.

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace amk {

inline constexpr int kMinTargetAge = 20;
inline constexpr int kMaxTargetAge = 90;

/// Throws ValidationError outside [20, 90].
void validate_target_age(int age);

struct EditRequest {
    std::string subject_desc;
    int age_target = 0;
    std::string condition;
};

struct ConditionTemplate {
    std::string key;
    std::vector<std::string> aliases;
    std::string text;  ///< with {subject} / {age} placeholders
};

/// Ordered condition table. Load order is catalog order; registered extras append.
class TemplateTable {
public:
    /// Parses the `key [| alias ...] = template` line format. Throws IoError.
    static TemplateTable parse(std::string_view text);
    static TemplateTable load(const std::filesystem::path& path);
    /// The table shipped in data/prompt_templates.txt (AMK_DATA_DIR overrides the directory).
    static TemplateTable load_default();

    /// Throws ValidationError for a key or alias already present.
    void add(ConditionTemplate entry);
    /// Case-insensitive lookup over keys and aliases.
    const ConditionTemplate* find(std::string_view condition) const;
    const std::vector<ConditionTemplate>& entries() const { return entries_; }

private:
    std::vector<ConditionTemplate> entries_;
};

enum class RefineMode { template_only, llm };

struct LlmSettings {
    std::string endpoint;  ///< base URL, e.g. "https://api.example.com"
    std::string path = "/v1/chat/completions";
    std::string model = "gpt-4o";
    std::string system_prompt;
    /// Bearer token; when empty, AMK_LLM_TOKEN is read at request time.
    std::string token;
    int timeout_ms = 30000;
    int min_interval_ms = 1000;
};

struct RefinedPrompt {
    std::string text;
    bool from_llm = false;
    /// Set when LLM mode was requested but the template path produced the text.
    bool fell_back = false;
    std::string warning;
    /// Raw request and response bodies of the LLM exchange, for audit.
    std::string llm_request;
    std::string llm_response;
};

/// Default directory holding prompt_templates.txt and llm_system_prompt.txt.
std::filesystem::path data_dir();

class PromptRefiner {
public:
    explicit PromptRefiner(TemplateTable table, std::optional<LlmSettings> llm = std::nullopt);

    /// Throws ValidationError for an out-of-range age.
    RefinedPrompt refine(const EditRequest& req, RefineMode mode = RefineMode::template_only) const;

    /// Condition keys in catalog order.
    std::vector<std::string> condition_catalog() const;
    void register_condition(const std::string& key, const std::string& template_text);

    const TemplateTable& table() const { return table_; }

private:
    std::string from_template(const EditRequest& req) const;

    TemplateTable table_;
    std::optional<LlmSettings> llm_;
};

}  // namespace amk
