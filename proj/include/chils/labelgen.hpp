/*
 * Copyright (C) 2026 The chils Authors
 * SPDX-License-Identifier: Apache-2.0
 */

#pragma once

// Label-set generation: ask a text-generation backend for "types of" each
// class, parse the list, post-process it and assemble a LabelMap.

#include <cctype>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "chils/error.hpp"
#include "chils/hierarchy.hpp"
#include "chils/tensorio.hpp"

namespace chils {

inline constexpr double kDefaultTemperature = 0.7;
inline constexpr int kDefaultLabelSetSize = 10;
inline constexpr const char* kApiKeyEnv = "CHILS_LLM_API_KEY";

struct LabelGenRequest {
    std::string class_name;
    int m = kDefaultLabelSetSize;
    std::optional<std::string> context;
    double temperature = kDefaultTemperature;
};

inline std::string build_query(const LabelGenRequest& req) {
    if (req.m < 1) throw Error("label set size m must be >= 1");
    std::string q = "Generate a list of " + std::to_string(req.m) + " types of the following";
    if (req.context && !req.context->empty()) q += " " + *req.context;
    q += ": " + req.class_name;
    return q;
}

/// One label per line. Leading enumeration ("1.", "2)", "-"), surrounding
/// whitespace and trailing punctuation are stripped; blank lines dropped;
/// result lowercased.
inline std::vector<std::string> parse_label_list(std::string_view response) {
    auto is_space = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };
    auto is_digit = [](char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; };
    auto trim = [&](std::string_view s) {
        while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
        while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
        return s;
    };

    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= response.size()) {
        std::size_t end = response.find('\n', start);
        if (end == std::string_view::npos) end = response.size();
        std::string_view line = trim(response.substr(start, end - start));
        start = end + 1;

        std::size_t i = 0;
        while (i < line.size() && is_digit(line[i])) ++i;
        if (i > 0 && i < line.size() && (line[i] == '.' || line[i] == ')')) {
            line.remove_prefix(i + 1);
        } else if (!line.empty() && line.front() == '-') {
            line.remove_prefix(1);
        }
        line = trim(line);
        while (!line.empty() && std::string_view(".,;:!?").find(line.back()) != std::string_view::npos) {
            line.remove_suffix(1);
        }
        line = trim(line);
        if (!line.empty()) out.push_back(detail::ascii_lower(line));
        if (end == response.size()) break;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Backends

/// A failure that may succeed on retry (connection refused, 5xx, rate limit).
class TransientBackendError : public Error {
public:
    using Error::Error;
};

class GenerationBackend {
public:
    virtual ~GenerationBackend() = default;
    virtual std::string complete(const std::string& prompt, double temperature) = 0;
};

/// Canned responses keyed by exact query text.
class FixtureBackend final : public GenerationBackend {
public:
    explicit FixtureBackend(std::map<std::string, std::string> responses) : responses_(std::move(responses)) {}

    static FixtureBackend from_file(const std::filesystem::path& path) {
        const auto j = detail::parse_json_file(path);
        try {
            return FixtureBackend(j.get<std::map<std::string, std::string>>());
        } catch (const nlohmann::json::exception& e) {
            throw Error("malformed fixture file " + path.string() + ": " + e.what());
        }
    }

    std::string complete(const std::string& prompt, double) override {
        auto it = responses_.find(prompt);
        if (it == responses_.end()) throw Error("fixture has no response for query \"" + prompt + "\"");
        return it->second;
    }

private:
    std::map<std::string, std::string> responses_;
};

/// Completion-style HTTP client: POST {model, prompt, temperature, max_tokens}
/// and read choices[0].text from the reply.
class HttpBackend final : public GenerationBackend {
public:
    struct Options {
        std::string endpoint;  // scheme://host[:port]/path
        std::string model = "text-davinci-002";
        std::optional<std::string> api_key;
        int max_tokens = 256;
        std::chrono::seconds timeout{30};
    };

    explicit HttpBackend(Options opts) : opts_(std::move(opts)) {
        const auto scheme_end = opts_.endpoint.find("://");
        if (scheme_end == std::string::npos) throw Error("endpoint must look like http://host[:port]/path");
        const auto path_start = opts_.endpoint.find('/', scheme_end + 3);
        base_ = opts_.endpoint.substr(0, path_start);
        path_ = path_start == std::string::npos ? "/" : opts_.endpoint.substr(path_start);
    }

    /// Options with the credential taken from CHILS_LLM_API_KEY, if set.
    static Options options_from_env(std::string endpoint) {
        Options o;
        o.endpoint = std::move(endpoint);
        if (const char* key = std::getenv(kApiKeyEnv); key != nullptr && *key != '\0') o.api_key = key;
        return o;
    }

    std::string complete(const std::string& prompt, double temperature) override {
        httplib::Client client(base_);
        client.set_connection_timeout(opts_.timeout);
        client.set_read_timeout(opts_.timeout);
        httplib::Headers headers;
        if (opts_.api_key) headers.emplace("Authorization", "Bearer " + *opts_.api_key);

        nlohmann::ordered_json body;
        body["model"] = opts_.model;
        body["prompt"] = prompt;
        body["temperature"] = temperature;
        body["max_tokens"] = opts_.max_tokens;

        auto res = client.Post(path_, headers, body.dump(), "application/json");
        if (!res) {
            throw TransientBackendError("request to " + opts_.endpoint + " failed: " + httplib::to_string(res.error()));
        }
        if (res->status == 429 || res->status >= 500) {
            throw TransientBackendError("backend returned HTTP " + std::to_string(res->status));
        }
        if (res->status != 200) throw Error("backend returned HTTP " + std::to_string(res->status) + ": " + res->body);
        try {
            const auto reply = nlohmann::json::parse(res->body);
            const auto& choice = reply.at("choices").at(0);
            if (choice.contains("text")) return choice.at("text").get<std::string>();
            return choice.at("message").at("content").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            throw Error(std::string("unexpected backend reply: ") + e.what());
        }
    }

private:
    Options opts_;
    std::string base_;
    std::string path_;
};

struct RetryPolicy {
    int attempts = 3;
    std::chrono::milliseconds initial_backoff{1000};
};

// ---------------------------------------------------------------------------

struct LabelGenFlags {
    bool append_superclass = true;
    bool include_superclass = true;
};

struct LabelGenAudit {
    std::string class_name;
    std::string query;
    std::string raw_response;
    std::vector<std::string> parsed;
    std::vector<std::string> label_set;
};

struct GeneratedLabelMap {
    LabelMap map;
    std::vector<LabelGenAudit> audit;
};

/// Sequential: one backend call per class, in class order.
inline GeneratedLabelMap generate_label_map(const std::vector<std::string>& classes, GenerationBackend& backend,
                                            int m, const std::optional<std::string>& context,
                                            const LabelGenFlags& flags, double temperature = kDefaultTemperature,
                                            const RetryPolicy& retry = {}) {
    if (classes.empty()) throw Error("no classes given");
    std::vector<LabelMap::Set> sets;
    std::vector<LabelGenAudit> audit;
    for (const auto& cls : classes) {
        LabelGenAudit rec;
        rec.class_name = cls;
        rec.query = build_query({cls, m, context, temperature});
        auto delay = retry.initial_backoff;
        for (int attempt = 1;; ++attempt) {
            try {
                rec.raw_response = backend.complete(rec.query, temperature);
                break;
            } catch (const TransientBackendError& e) {
                if (attempt >= retry.attempts) {
                    throw Error("label generation for \"" + cls + "\" failed after " + std::to_string(attempt) +
                                " attempts: " + e.what());
                }
                std::this_thread::sleep_for(delay);
                delay *= 2;
            } catch (const Error& e) {
                throw Error("label generation for \"" + cls + "\" failed: " + e.what());
            }
        }
        rec.parsed = parse_label_list(rec.raw_response);
        rec.label_set = postprocess_label_set(cls, rec.parsed, flags.append_superclass, flags.include_superclass);
        sets.push_back({cls, rec.label_set});
        audit.push_back(std::move(rec));
    }
    return {LabelMap(std::move(sets)), std::move(audit)};
}

inline nlohmann::ordered_json audit_to_json(const std::vector<LabelGenAudit>& audit) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& a : audit) {
        nlohmann::ordered_json o;
        o["class"] = a.class_name;
        o["query"] = a.query;
        o["raw_response"] = a.raw_response;
        o["parsed"] = a.parsed;
        o["label_set"] = a.label_set;
        arr.push_back(std::move(o));
    }
    return arr;
}

inline void save_audit(const std::vector<LabelGenAudit>& audit, const std::filesystem::path& path) {
    detail::ensure_parent_dir(path);
    detail::write_file(path, audit_to_json(audit).dump(2) + "\n");
}

}  // namespace chils
