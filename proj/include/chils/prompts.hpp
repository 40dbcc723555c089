/*
 * Copyright (C) 2026 The chils Authors
 * SPDX-License-Identifier: Apache-2.0
 */

#pragma once

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "chils/error.hpp"
#include "chils/hierarchy.hpp"
#include "chils/tensorio.hpp"

namespace chils {

inline constexpr std::string_view kPlaceholder = "{}";
inline constexpr std::string_view kContextMarker = "[context]";

struct PromptSet {
    std::vector<std::string> templates;
    std::optional<std::string> context;
};

namespace detail {

inline std::size_t count_occurrences(std::string_view s, std::string_view needle) {
    std::size_t n = 0;
    for (auto pos = s.find(needle); pos != std::string_view::npos; pos = s.find(needle, pos + needle.size())) ++n;
    return n;
}

inline std::string replace_all(std::string s, std::string_view from, std::string_view to) {
    for (auto pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) {
        s.replace(pos, from.size(), to);
    }
    return s;
}

}  // namespace detail

inline void validate_template(std::string_view tmpl) {
    const auto n = detail::count_occurrences(tmpl, kPlaceholder);
    if (n != 1) {
        throw Error("template \"" + std::string(tmpl) + "\" must contain exactly one {} placeholder (found " +
                    std::to_string(n) + ")");
    }
}

inline void validate_prompt_set(const PromptSet& ps) {
    if (ps.templates.empty()) throw Error("prompt set has no templates");
    for (const auto& t : ps.templates) validate_template(t);
}

/// T(c) for one template: the placeholder is replaced by the class name verbatim.
inline std::string render_prompt(std::string_view tmpl, std::string_view class_name) {
    validate_template(tmpl);
    std::string out(tmpl);
    out.replace(out.find(kPlaceholder), kPlaceholder.size(), class_name);
    return out;
}

struct RenderedCaption {
    std::size_t class_index = 0;
    std::size_t prompt_index = 0;
    std::string caption;

    friend bool operator==(const RenderedCaption&, const RenderedCaption&) = default;
};

/// Class-major rendering of every (class, template) pair. A "[context]" marker
/// in a template is filled from the prompt set's context token.
inline std::vector<RenderedCaption> render_all(const PromptSet& ps, const std::vector<std::string>& class_names) {
    validate_prompt_set(ps);
    std::vector<std::string> templates;
    for (const auto& t : ps.templates) {
        if (t.find(kContextMarker) == std::string::npos) {
            templates.push_back(t);
        } else if (ps.context) {
            templates.push_back(detail::replace_all(t, kContextMarker, *ps.context));
        } else {
            throw Error("template \"" + t + "\" uses [context] but the prompt set has no context");
        }
    }
    std::vector<RenderedCaption> out;
    out.reserve(class_names.size() * templates.size());
    for (std::size_t c = 0; c < class_names.size(); ++c) {
        for (std::size_t p = 0; p < templates.size(); ++p) {
            out.push_back({c, p, render_prompt(templates[p], class_names[c])});
        }
    }
    return out;
}

inline PromptSet load_prompt_set(const std::filesystem::path& path) {
    const auto j = detail::parse_json_file(path);
    PromptSet ps;
    try {
        ps.templates = j.at("templates").get<std::vector<std::string>>();
        if (auto it = j.find("context"); it != j.end() && !it->is_null()) ps.context = it->get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw Error("malformed prompt set " + path.string() + ": " + e.what());
    }
    validate_prompt_set(ps);
    return ps;
}

inline void save_prompt_set(const PromptSet& ps, const std::filesystem::path& path) {
    validate_prompt_set(ps);
    nlohmann::ordered_json j;
    j["templates"] = ps.templates;
    j["context"] = ps.context ? nlohmann::ordered_json(*ps.context) : nlohmann::ordered_json(nullptr);
    detail::ensure_parent_dir(path);
    detail::write_file(path, j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Text representations of a class space.

/// Text rows for a set of classes. Each row belongs to one class (`owner`).
/// With one row per class this is the usual averaged-prompt classifier; with
/// several rows per class (set-based prompts) a prediction over rows is mapped
/// back to the owning class.
struct ClassTextReps {
    std::size_t dim = 0;
    std::size_t n_classes = 0;
    std::vector<float> rows;
    std::vector<std::size_t> owner;

    std::size_t row_count() const { return owner.size(); }
    std::span<const float> row(std::size_t i) const { return std::span<const float>(rows).subspan(i * dim, dim); }
    bool one_row_per_class() const { return owner.size() == n_classes; }
};

enum class PromptAggregation { linear_average, set_based };

namespace detail {

inline void append_normalized_mean(std::vector<float>& out, const std::vector<double>& sum, std::size_t n,
                                   bool renormalize, std::size_t class_index) {
    std::vector<double> mean(sum.size());
    for (std::size_t k = 0; k < sum.size(); ++k) mean[k] = sum[k] / static_cast<double>(n);
    double norm2 = 0.0;
    for (double v : mean) norm2 += v * v;
    const double norm = std::sqrt(norm2);
    if (norm < 1e-12) throw Error("degenerate mean embedding for class " + std::to_string(class_index));
    for (double v : mean) out.push_back(static_cast<float>(renormalize ? v / norm : v));
}

}  // namespace detail

/// Turns per-caption embeddings (rows ordered as render_all) into class
/// representations.
inline ClassTextReps aggregate_prompt_embeddings(const EmbeddingBundle& per_caption, std::size_t n_classes,
                                                 std::size_t n_templates, PromptAggregation mode,
                                                 bool renormalize_mean = true) {
    if (n_classes == 0 || n_templates == 0) throw Error("class and template counts must be >= 1");
    if (per_caption.count() != n_classes * n_templates) {
        throw Error("count mismatch: bundle has " + std::to_string(per_caption.count()) + " rows, expected " +
                    std::to_string(n_classes) + " x " + std::to_string(n_templates));
    }
    ClassTextReps reps{per_caption.dim, n_classes, {}, {}};
    if (mode == PromptAggregation::set_based) {
        reps.rows = per_caption.matrix;
        for (std::size_t r = 0; r < per_caption.count(); ++r) reps.owner.push_back(r / n_templates);
        return reps;
    }
    reps.rows.reserve(n_classes * per_caption.dim);
    for (std::size_t c = 0; c < n_classes; ++c) {
        std::vector<double> sum(per_caption.dim, 0.0);
        for (std::size_t t = 0; t < n_templates; ++t) {
            const auto r = per_caption.row(c * n_templates + t);
            for (std::size_t k = 0; k < r.size(); ++k) sum[k] += static_cast<double>(r[k]);
        }
        detail::append_normalized_mean(reps.rows, sum, n_templates, renormalize_mean, c);
        reps.owner.push_back(c);
    }
    return reps;
}

/// One row per class, looked up by name in a class-level bundle.
inline ClassTextReps reps_from_bundle(const EmbeddingBundle& bundle, const std::vector<std::string>& class_names,
                                      std::string_view what = "text bundle") {
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < bundle.count(); ++i) index.emplace(bundle.names[i], i);
    ClassTextReps reps{bundle.dim, class_names.size(), {}, {}};
    reps.rows.reserve(class_names.size() * bundle.dim);
    for (std::size_t c = 0; c < class_names.size(); ++c) {
        auto it = index.find(class_names[c]);
        if (it == index.end()) {
            throw Error("class \"" + class_names[c] + "\" not found in " + std::string(what));
        }
        const auto r = bundle.row(it->second);
        reps.rows.insert(reps.rows.end(), r.begin(), r.end());
        reps.owner.push_back(c);
    }
    return reps;
}

/// Renders every class through the prompt set, looks the captions up in a
/// per-caption bundle and aggregates them.
inline ClassTextReps reps_from_captions(const EmbeddingBundle& captions, const PromptSet& ps,
                                        const std::vector<std::string>& class_names, PromptAggregation mode,
                                        bool renormalize_mean = true, std::string_view what = "caption bundle") {
    const auto rendered = render_all(ps, class_names);
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < captions.count(); ++i) index.emplace(captions.names[i], i);
    EmbeddingBundle ordered{captions.dim, {}, {}, captions.normalized};
    ordered.matrix.reserve(rendered.size() * captions.dim);
    for (const auto& rc : rendered) {
        auto it = index.find(rc.caption);
        if (it == index.end()) {
            throw Error("caption \"" + rc.caption + "\" (class \"" + class_names[rc.class_index] + "\") not found in " +
                        std::string(what));
        }
        const auto r = captions.row(it->second);
        ordered.matrix.insert(ordered.matrix.end(), r.begin(), r.end());
        // names only need to be unique within this temporary
        ordered.names.push_back(std::to_string(ordered.names.size()));
    }
    return aggregate_prompt_embeddings(ordered, class_names.size(), ps.templates.size(), mode, renormalize_mean);
}

/// Superclass representations as the linear average of their subclass rows
/// (the alternative to set-based subclass mapping). Requires one row per entry.
inline ClassTextReps average_subclass_reps(const LabelMap& map, const ClassTextReps& sub_reps,
                                           bool renormalize_mean = true) {
    if (!sub_reps.one_row_per_class() || sub_reps.n_classes != map.total_subclasses()) {
        throw Error("subclass representations must have exactly one row per union entry");
    }
    ClassTextReps reps{sub_reps.dim, map.size(), {}, {}};
    for (std::size_t i = 0; i < map.size(); ++i) {
        auto [b, e] = map.range(i);
        std::vector<double> sum(sub_reps.dim, 0.0);
        for (std::size_t j = b; j < e; ++j) {
            const auto r = sub_reps.row(j);
            for (std::size_t k = 0; k < r.size(); ++k) sum[k] += static_cast<double>(r[k]);
        }
        detail::append_normalized_mean(reps.rows, sum, e - b, renormalize_mean, i);
        reps.owner.push_back(i);
    }
    return reps;
}

}  // namespace chils
