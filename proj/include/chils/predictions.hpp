/*
 * Copyright (C) 2026 The chils Authors
 * SPDX-License-Identifier: Apache-2.0
 */

#pragma once

// Predictions file: JSON Lines, one object per image
//   {"index", "baseline", "chils", "sub_argmax", "sup_probs", "reweighted_top"}
// where reweighted_top holds up to five [entry, score] pairs, best first.

#include <algorithm>
#include <filesystem>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "chils/engine.hpp"
#include "chils/error.hpp"
#include "chils/hierarchy.hpp"
#include "chils/tensorio.hpp"

namespace chils {

inline constexpr std::size_t kTopScores = 5;

struct ScoredEntry {
    std::size_t index = 0;  // flat union index, or superclass index in superclass space
    std::string parent;
    std::string text;
    double score = 0.0;

    friend bool operator==(const ScoredEntry&, const ScoredEntry&) = default;
};

struct PredictionRecord {
    std::size_t index = 0;
    std::size_t baseline = 0;
    std::size_t chils = 0;
    std::size_t sub_argmax = 0;
    std::vector<double> sup_probs;
    std::vector<ScoredEntry> reweighted_top;

    friend bool operator==(const PredictionRecord&, const PredictionRecord&) = default;
};

inline PredictionRecord make_prediction_record(std::size_t index, const ChilsTrace& t, const LabelMap& map) {
    PredictionRecord r{index, t.baseline_superclass, t.predicted_superclass, t.sub_argmax, t.sup_probs, {}};
    std::vector<std::size_t> order(t.reweighted.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const std::size_t top = std::min(kTopScores, order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(top), order.end(),
                      [&](std::size_t a, std::size_t b) {
                          if (t.reweighted[a] != t.reweighted[b]) return t.reweighted[a] > t.reweighted[b];
                          return a < b;
                      });
    const bool superclass_space = !t.predicted_subclass.has_value();
    for (std::size_t i = 0; i < top; ++i) {
        const std::size_t e = order[i];
        if (superclass_space) {
            r.reweighted_top.push_back({e, map.superclass(e), map.superclass(e), t.reweighted[e]});
        } else {
            const auto& entry = map.union_subclasses()[e];
            r.reweighted_top.push_back({e, map.superclass(entry.parent), entry.text, t.reweighted[e]});
        }
    }
    return r;
}

inline nlohmann::ordered_json prediction_to_json(const PredictionRecord& r) {
    nlohmann::ordered_json o;
    o["index"] = r.index;
    o["baseline"] = r.baseline;
    o["chils"] = r.chils;
    o["sub_argmax"] = r.sub_argmax;
    o["sup_probs"] = r.sup_probs;
    nlohmann::ordered_json top = nlohmann::ordered_json::array();
    for (const auto& s : r.reweighted_top) {
        nlohmann::ordered_json entry;
        entry["index"] = s.index;
        entry["parent"] = s.parent;
        entry["text"] = s.text;
        top.push_back(nlohmann::ordered_json::array({entry, s.score}));
    }
    o["reweighted_top"] = std::move(top);
    return o;
}

inline PredictionRecord prediction_from_json(const nlohmann::json& j) {
    PredictionRecord r;
    r.index = j.at("index").get<std::size_t>();
    r.baseline = j.at("baseline").get<std::size_t>();
    r.chils = j.at("chils").get<std::size_t>();
    r.sub_argmax = j.at("sub_argmax").get<std::size_t>();
    r.sup_probs = j.at("sup_probs").get<std::vector<double>>();
    for (const auto& pair : j.at("reweighted_top")) {
        const auto& e = pair.at(0);
        r.reweighted_top.push_back({e.at("index").get<std::size_t>(), e.at("parent").get<std::string>(),
                                    e.at("text").get<std::string>(), pair.at(1).get<double>()});
    }
    return r;
}

inline std::string render_predictions(const std::vector<PredictionRecord>& records) {
    std::string out;
    for (const auto& r : records) out += prediction_to_json(r).dump() + "\n";
    return out;
}

inline void save_predictions(const std::vector<PredictionRecord>& records, const std::filesystem::path& path) {
    detail::ensure_parent_dir(path);
    detail::write_file(path, render_predictions(records));
}

inline std::vector<PredictionRecord> load_predictions(const std::filesystem::path& path) {
    std::istringstream in(detail::read_file(path));
    std::vector<PredictionRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            out.push_back(prediction_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw Error("malformed predictions file " + path.string() + " line " + std::to_string(lineno) + ": " +
                        e.what());
        }
    }
    return out;
}

}  // namespace chils
