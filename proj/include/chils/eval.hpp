/*
 * Copyright (C) 2026 The chils Authors
 * SPDX-License-Identifier: Apache-2.0
 */

#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "chils/engine.hpp"
#include "chils/error.hpp"
#include "chils/tensorio.hpp"

namespace chils {

enum class Method { baseline, chils_standard, chils_none, chils_sub_agg, chils_sup_space, best_possible };

inline constexpr Method kAllMethods[] = {Method::baseline,      Method::chils_standard,  Method::chils_none,
                                         Method::chils_sub_agg, Method::chils_sup_space, Method::best_possible};

inline std::string_view to_string(Method m) {
    switch (m) {
        case Method::baseline: return "baseline";
        case Method::chils_standard: return "chils_standard";
        case Method::chils_none: return "chils_none";
        case Method::chils_sub_agg: return "chils_sub_agg";
        case Method::chils_sup_space: return "chils_sup_space";
        case Method::best_possible: return "best_possible";
    }
    return "?";
}

inline Method method_from_string(std::string_view s) {
    for (auto m : kAllMethods) {
        if (to_string(m) == s) return m;
    }
    throw Error("unknown method \"" + std::string(s) + "\"");
}

/// Column titles for the markdown table.
inline std::string_view display_name(Method m) {
    switch (m) {
        case Method::baseline: return "Superclass";
        case Method::chils_standard: return "CHiLS";
        case Method::chils_none: return "CHiLS (No RW)";
        case Method::chils_sub_agg: return "CHiLS (RW subclass w/agg subclass)";
        case Method::chils_sup_space: return "CHiLS (RW agg subclass w/superclass)";
        case Method::best_possible: return "Best Possible";
    }
    return "?";
}

struct EvalRecord {
    std::string dataset;
    std::optional<std::string> domain;
    Method method = Method::baseline;
    double accuracy = 0.0;  // fraction
    std::size_t n = 0;

    friend bool operator==(const EvalRecord&, const EvalRecord&) = default;
};

inline double accuracy(std::span<const std::size_t> predictions, std::span<const std::size_t> labels) {
    if (predictions.size() != labels.size()) {
        throw Error("length mismatch: " + std::to_string(predictions.size()) + " predictions, " +
                    std::to_string(labels.size()) + " labels");
    }
    if (labels.empty()) throw Error("accuracy of an empty set");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) hits += predictions[i] == labels[i] ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

/// Macro average over domains: unweighted mean of accuracies, n summed.
/// The mean is taken in sorted order so the result does not depend on input order.
inline EvalRecord domain_average(std::span<const EvalRecord> records) {
    if (records.empty()) throw Error("no records to average");
    std::vector<double> accs;
    EvalRecord out{records.front().dataset, std::nullopt, records.front().method, 0.0, 0};
    for (const auto& r : records) {
        if (r.dataset != out.dataset || r.method != out.method) {
            throw Error("domain_average needs records sharing dataset and method");
        }
        accs.push_back(r.accuracy);
        out.n += r.n;
    }
    std::sort(accs.begin(), accs.end());
    double sum = 0.0;
    for (double a : accs) sum += a;
    out.accuracy = sum / static_cast<double>(accs.size());
    return out;
}

/// Percent change from base to now.
inline double relative_change(double base, double now) {
    if (base == 0.0) throw Error("relative change undefined for a zero base");
    return 100.0 * (now - base) / base;
}

// ---------------------------------------------------------------------------
// Calibration

struct ClassCalibration {
    std::vector<double> correct;    // argmax prob of items of this class predicted correctly
    std::vector<double> incorrect;  // argmax prob of the predicted class for misclassified items
    std::optional<double> correct_mean;
    std::optional<double> incorrect_mean;
};

struct CalibrationSummary {
    std::string dataset;
    std::vector<std::string> class_names;
    std::vector<ClassCalibration> per_class;

    /// Item-level means pooled over all classes.
    std::optional<double> mean_correct() const { return pooled(&ClassCalibration::correct); }
    std::optional<double> mean_incorrect() const { return pooled(&ClassCalibration::incorrect); }

private:
    std::optional<double> pooled(std::vector<double> ClassCalibration::*field) const {
        double sum = 0.0;
        std::size_t n = 0;
        for (const auto& c : per_class) {
            for (double p : c.*field) {
                sum += p;
                ++n;
            }
        }
        if (n == 0) return std::nullopt;
        return sum / static_cast<double>(n);
    }
};

namespace detail {

inline std::optional<double> mean_of(const std::vector<double>& v) {
    if (v.empty()) return std::nullopt;
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

}  // namespace detail

/// Routes each item by its true class into the correct/incorrect list,
/// recording the probability of the argmax class.
inline CalibrationSummary calibration_split(const std::vector<std::vector<double>>& probs,
                                            std::span<const std::size_t> labels,
                                            std::vector<std::string> class_names = {}, std::string dataset = {}) {
    if (probs.size() != labels.size()) {
        throw Error("length mismatch: " + std::to_string(probs.size()) + " probability vectors, " +
                    std::to_string(labels.size()) + " labels");
    }
    std::size_t k = class_names.size();
    for (const auto& p : probs) k = std::max(k, p.size());
    for (auto l : labels) k = std::max(k, l + 1);
    CalibrationSummary s;
    s.dataset = std::move(dataset);
    s.per_class.resize(k);
    for (std::size_t c = class_names.size(); c < k; ++c) class_names.push_back("class " + std::to_string(c));
    s.class_names = std::move(class_names);
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const auto pred = argmax(probs[i]);
        const double p = probs[i][pred];
        if (p < 0.0 || p > 1.0) throw Error("probability out of range at item " + std::to_string(i));
        auto& cls = s.per_class[labels[i]];
        (pred == labels[i] ? cls.correct : cls.incorrect).push_back(p);
    }
    for (auto& c : s.per_class) {
        c.correct_mean = detail::mean_of(c.correct);
        c.incorrect_mean = detail::mean_of(c.incorrect);
    }
    return s;
}

inline nlohmann::ordered_json calibration_to_json(const CalibrationSummary& s) {
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(); };
    nlohmann::ordered_json classes = nlohmann::ordered_json::array();
    for (std::size_t c = 0; c < s.per_class.size(); ++c) {
        const auto& pc = s.per_class[c];
        nlohmann::ordered_json o;
        o["class"] = s.class_names[c];
        o["correct"] = pc.correct;
        o["incorrect"] = pc.incorrect;
        o["correct_mean"] = opt(pc.correct_mean);
        o["incorrect_mean"] = opt(pc.incorrect_mean);
        classes.push_back(std::move(o));
    }
    nlohmann::ordered_json j;
    j["dataset"] = s.dataset;
    j["mean_correct"] = opt(s.mean_correct());
    j["mean_incorrect"] = opt(s.mean_incorrect());
    j["classes"] = std::move(classes);
    return j;
}

// ---------------------------------------------------------------------------
// Reports

enum class ReportFormat { csv, json, markdown };

inline ReportFormat report_format_from_string(std::string_view s) {
    if (s == "csv") return ReportFormat::csv;
    if (s == "json") return ReportFormat::json;
    if (s == "markdown" || s == "md") return ReportFormat::markdown;
    throw Error("unknown report format \"" + std::string(s) + "\"");
}

namespace detail {

inline std::string fixed2(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

inline std::string percent(double fraction) { return fixed2(100.0 * fraction); }

inline std::string signed_points(double delta_fraction) {
    const std::string s = fixed2(100.0 * delta_fraction);
    return s.front() == '-' ? s : "+" + s;
}

inline std::string csv_field(std::string_view s) {
    if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

inline std::string md_cell(std::string_view s) {
    std::string out;
    for (char c : s) {
        if (c == '|') out += '\\';
        out += c;
    }
    return out;
}

inline std::string opt_fixed(const std::optional<double>& v, int digits = 4) {
    if (!v) return "";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, *v);
    return buf;
}

}  // namespace detail

inline std::vector<EvalRecord> sorted_records(std::vector<EvalRecord> records) {
    std::sort(records.begin(), records.end(), [](const EvalRecord& a, const EvalRecord& b) {
        const auto da = a.domain.value_or(""), db = b.domain.value_or("");
        return std::tie(a.dataset, a.method, da) < std::tie(b.dataset, b.method, db);
    });
    return records;
}

inline std::string render_csv(const std::vector<EvalRecord>& records) {
    std::string out = "dataset,domain,method,accuracy,n\n";
    for (const auto& r : sorted_records(records)) {
        out += detail::csv_field(r.dataset) + "," + detail::csv_field(r.domain.value_or("")) + "," +
               std::string(to_string(r.method)) + "," + detail::percent(r.accuracy) + "," + std::to_string(r.n) + "\n";
    }
    return out;
}

inline std::string render_calibration_csv(const std::vector<CalibrationSummary>& summaries) {
    std::string out = "dataset,class,n_correct,n_incorrect,mean_correct,mean_incorrect\n";
    for (const auto& s : summaries) {
        for (std::size_t c = 0; c < s.per_class.size(); ++c) {
            const auto& pc = s.per_class[c];
            out += detail::csv_field(s.dataset) + "," + detail::csv_field(s.class_names[c]) + "," +
                   std::to_string(pc.correct.size()) + "," + std::to_string(pc.incorrect.size()) + "," +
                   detail::opt_fixed(pc.correct_mean) + "," + detail::opt_fixed(pc.incorrect_mean) + "\n";
        }
    }
    return out;
}

inline nlohmann::ordered_json records_to_json(const std::vector<EvalRecord>& records) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& r : sorted_records(records)) {
        nlohmann::ordered_json o;
        o["dataset"] = r.dataset;
        o["domain"] = r.domain ? nlohmann::ordered_json(*r.domain) : nlohmann::ordered_json();
        o["method"] = to_string(r.method);
        o["accuracy"] = r.accuracy;
        o["accuracy_pct"] = detail::percent(r.accuracy);
        o["n"] = r.n;
        arr.push_back(std::move(o));
    }
    return arr;
}

/// One row per (dataset, domain), one column per method present; CHiLS-style
/// columns carry the change against the superclass baseline in points.
inline std::string render_markdown(const std::vector<EvalRecord>& records,
                                   const std::vector<CalibrationSummary>& summaries = {}) {
    const auto rows = sorted_records(records);
    std::vector<Method> methods;
    bool any_domain = false;
    for (auto m : kAllMethods) {
        if (std::any_of(rows.begin(), rows.end(), [&](const EvalRecord& r) { return r.method == m; })) methods.push_back(m);
    }
    for (const auto& r : rows) any_domain = any_domain || r.domain.has_value();

    std::vector<std::pair<std::string, std::string>> keys;
    for (const auto& r : rows) {
        std::pair<std::string, std::string> key{r.dataset, r.domain.value_or("")};
        if (std::find(keys.begin(), keys.end(), key) == keys.end()) keys.push_back(key);
    }
    std::sort(keys.begin(), keys.end());

    std::ostringstream os;
    os << "| Dataset |";
    if (any_domain) os << " Domain |";
    for (auto m : methods) os << ' ' << display_name(m) << " |";
    os << "\n|---|";
    if (any_domain) os << "---|";
    for (std::size_t i = 0; i < methods.size(); ++i) os << "---|";
    os << '\n';
    for (const auto& [dataset, domain] : keys) {
        auto find = [&](Method m) -> const EvalRecord* {
            for (const auto& r : rows) {
                if (r.dataset == dataset && r.domain.value_or("") == domain && r.method == m) return &r;
            }
            return nullptr;
        };
        const EvalRecord* base = find(Method::baseline);
        os << "| " << detail::md_cell(dataset) << " |";
        if (any_domain) os << ' ' << detail::md_cell(domain) << " |";
        for (auto m : methods) {
            const EvalRecord* r = find(m);
            if (r == nullptr) {
                os << " N/A |";
            } else if (m == Method::baseline || base == nullptr) {
                os << ' ' << detail::percent(r->accuracy) << " |";
            } else {
                os << ' ' << detail::percent(r->accuracy) << " (" << detail::signed_points(r->accuracy - base->accuracy)
                   << ") |";
            }
        }
        os << '\n';
    }
    if (!summaries.empty()) {
        os << "\n| Dataset | Class | Correct | Mean correct prob | Incorrect | Mean incorrect prob |\n"
              "|---|---|---|---|---|---|\n";
        for (const auto& s : summaries) {
            for (std::size_t c = 0; c < s.per_class.size(); ++c) {
                const auto& pc = s.per_class[c];
                os << "| " << detail::md_cell(s.dataset) << " | " << detail::md_cell(s.class_names[c]) << " | "
                   << pc.correct.size() << " | " << (pc.correct_mean ? detail::opt_fixed(pc.correct_mean) : "N/A")
                   << " | " << pc.incorrect.size() << " | "
                   << (pc.incorrect_mean ? detail::opt_fixed(pc.incorrect_mean) : "N/A") << " |\n";
            }
        }
    }
    return os.str();
}

/// Writes the report. CSV puts calibration summaries (if any) in a sibling
/// `<stem>.calibration.csv`; JSON becomes {"records", "calibration"} when
/// summaries are given and a plain record array otherwise.
inline void emit_report(const std::vector<EvalRecord>& records, const std::vector<CalibrationSummary>& summaries,
                        ReportFormat format, const std::filesystem::path& path) {
    if (records.empty()) throw Error("no records to report");
    detail::ensure_parent_dir(path);
    switch (format) {
        case ReportFormat::csv:
            detail::write_file(path, render_csv(records));
            if (!summaries.empty()) {
                auto cal = path;
                cal.replace_extension(".calibration.csv");
                detail::write_file(cal, render_calibration_csv(summaries));
            }
            break;
        case ReportFormat::json: {
            nlohmann::ordered_json j;
            if (summaries.empty()) {
                j = records_to_json(records);
            } else {
                j["records"] = records_to_json(records);
                j["calibration"] = nlohmann::ordered_json::array();
                for (const auto& s : summaries) j["calibration"].push_back(calibration_to_json(s));
            }
            detail::write_file(path, j.dump(2) + "\n");
            break;
        }
        case ReportFormat::markdown:
            detail::write_file(path, render_markdown(records, summaries));
            break;
    }
}

}  // namespace chils
