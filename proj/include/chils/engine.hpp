/*
 * Copyright (C) 2026 The chils Authors
 * SPDX-License-Identifier: Apache-2.0
 */

#pragma once

// Zero-shot prediction over precomputed embeddings.
//
// Baseline: softmax over scaled cosine similarities to the superclass texts.
// CHiLS: softmax over the union of all subclass sets, each subclass probability
// multiplied by its parent's superclass probability, argmax mapped back to the
// parent. The reweighting variants replace the multiplier or move the product
// into superclass space.
//
// Reductions run sequentially in double so a trace depends only on its inputs,
// never on how images are split across threads.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <exception>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "chils/error.hpp"
#include "chils/hierarchy.hpp"
#include "chils/prompts.hpp"
#include "chils/tensorio.hpp"

namespace chils {

enum class ReweightVariant {
    standard,          // sub[s] * sup[parent(s)]
    none,              // sub[s]
    sub_with_agg_sub,  // sub[s] * agg(sub over siblings of s)
    agg_sub_with_sup,  // per superclass: agg(sub over its set) * sup[c]
};

enum class Aggregator { mean, sum };

struct InferenceConfig {
    double logit_scale = 100.0;
    ReweightVariant reweight = ReweightVariant::standard;
    Aggregator agg = Aggregator::mean;

    void validate() const {
        if (!(logit_scale > 0.0) || !std::isfinite(logit_scale)) throw Error("logit_scale must be a positive number");
    }
};

struct ChilsTrace {
    std::vector<double> sup_probs;   // over superclasses
    std::vector<double> sub_probs;   // over union_subclasses order
    std::vector<double> reweighted;  // over entries, or superclasses for agg_sub_with_sup
    std::size_t predicted_superclass = 0;
    std::optional<std::size_t> predicted_subclass;
    std::size_t baseline_superclass = 0;
    std::size_t sub_argmax = 0;

    friend bool operator==(const ChilsTrace&, const ChilsTrace&) = default;
};

/// First index of the maximum.
inline std::size_t argmax(std::span<const double> v) {
    if (v.empty()) throw Error("argmax of empty vector");
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i) {
        if (v[i] > v[best]) best = i;
    }
    return best;
}

inline std::vector<double> similarity_logits(std::span<const float> image, const ClassTextReps& text,
                                             double logit_scale) {
    if (image.size() != text.dim) {
        throw Error("dimension mismatch: image has " + std::to_string(image.size()) + ", text has " +
                    std::to_string(text.dim));
    }
    std::vector<double> out(text.row_count());
    for (std::size_t j = 0; j < out.size(); ++j) out[j] = logit_scale * dot(image, text.row(j));
    return out;
}

inline std::vector<double> softmax(std::span<const double> logits) {
    if (logits.empty()) throw Error("softmax of empty vector");
    const double mx = *std::max_element(logits.begin(), logits.end());
    std::vector<double> out(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - mx);
        sum += out[i];
    }
    for (auto& v : out) v /= sum;
    return out;
}

/// Per-class probabilities: softmax over rows, summed into owning classes.
inline std::vector<double> class_probabilities(std::span<const float> image, const ClassTextReps& text,
                                               double logit_scale) {
    const auto row_probs = softmax(similarity_logits(image, text, logit_scale));
    if (text.one_row_per_class()) return row_probs;
    std::vector<double> out(text.n_classes, 0.0);
    for (std::size_t r = 0; r < row_probs.size(); ++r) out[text.owner[r]] += row_probs[r];
    return out;
}

struct BaselinePrediction {
    std::size_t superclass = 0;
    std::vector<double> sup_probs;
};

/// Standard zero-shot prediction. With several rows per class the argmax is
/// taken over rows and mapped to the owning class.
inline BaselinePrediction predict_baseline(std::span<const float> image, const ClassTextReps& class_reps,
                                           const InferenceConfig& config) {
    config.validate();
    const auto row_probs = softmax(similarity_logits(image, class_reps, config.logit_scale));
    BaselinePrediction out;
    out.superclass = class_reps.owner[argmax(row_probs)];
    if (class_reps.one_row_per_class()) {
        out.sup_probs = row_probs;
    } else {
        out.sup_probs.assign(class_reps.n_classes, 0.0);
        for (std::size_t r = 0; r < row_probs.size(); ++r) out.sup_probs[class_reps.owner[r]] += row_probs[r];
    }
    return out;
}

namespace detail {

inline double aggregate(std::span<const double> v, Aggregator agg) {
    double s = 0.0;
    for (double x : v) s += x;
    return agg == Aggregator::mean ? s / static_cast<double>(v.size()) : s;
}

}  // namespace detail

/// Combines subclass and superclass probabilities. Scores are not renormalized.
inline std::vector<double> reweight(std::span<const double> sub_probs, std::span<const double> sup_probs,
                                    const LabelMap& map, ReweightVariant variant, Aggregator agg) {
    if (sub_probs.size() != map.total_subclasses()) {
        throw Error("subclass probabilities have length " + std::to_string(sub_probs.size()) + ", map has " +
                    std::to_string(map.total_subclasses()) + " entries");
    }
    if (sup_probs.size() != map.size()) {
        throw Error("superclass probabilities have length " + std::to_string(sup_probs.size()) + ", map has " +
                    std::to_string(map.size()) + " superclasses");
    }
    if (variant == ReweightVariant::agg_sub_with_sup) {
        std::vector<double> scores(map.size());
        for (std::size_t i = 0; i < map.size(); ++i) {
            auto [b, e] = map.range(i);
            scores[i] = detail::aggregate(sub_probs.subspan(b, e - b), agg) * sup_probs[i];
        }
        return scores;
    }
    std::vector<double> scores(sub_probs.begin(), sub_probs.end());
    if (variant == ReweightVariant::none) return scores;
    for (std::size_t i = 0; i < map.size(); ++i) {
        auto [b, e] = map.range(i);
        const double weight = variant == ReweightVariant::standard
                                  ? sup_probs[i]
                                  : detail::aggregate(sub_probs.subspan(b, e - b), agg);
        for (std::size_t j = b; j < e; ++j) scores[j] = sub_probs[j] * weight;
    }
    return scores;
}

inline void check_alignment(const LabelMap& map, const ClassTextReps& sub_reps, const ClassTextReps& sup_reps) {
    if (sub_reps.n_classes != map.total_subclasses()) {
        throw Error("subclass text representations cover " + std::to_string(sub_reps.n_classes) +
                    " classes, label map has " + std::to_string(map.total_subclasses()) + " subclass entries");
    }
    if (sup_reps.n_classes != map.size()) {
        throw Error("superclass text representations cover " + std::to_string(sup_reps.n_classes) +
                    " classes, label map has " + std::to_string(map.size()) + " superclasses");
    }
    if (sub_reps.dim != sup_reps.dim) throw Error("subclass and superclass text dimensions differ");
}

inline ChilsTrace predict_chils(std::span<const float> image, const LabelMap& map, const ClassTextReps& sub_reps,
                                const ClassTextReps& sup_reps, const InferenceConfig& config) {
    config.validate();
    check_alignment(map, sub_reps, sup_reps);
    ChilsTrace t;
    t.sub_probs = class_probabilities(image, sub_reps, config.logit_scale);
    auto base = predict_baseline(image, sup_reps, config);
    t.sup_probs = std::move(base.sup_probs);
    t.baseline_superclass = base.superclass;
    t.sub_argmax = argmax(t.sub_probs);
    t.reweighted = reweight(t.sub_probs, t.sup_probs, map, config.reweight, config.agg);
    const std::size_t best = argmax(t.reweighted);
    if (config.reweight == ReweightVariant::agg_sub_with_sup) {
        t.predicted_superclass = best;
    } else {
        t.predicted_subclass = best;
        t.predicted_superclass = map.union_subclasses()[best].parent;
    }
    return t;
}

/// Runs predict_chils over every row of an image bundle. Images are split into
/// contiguous blocks across `threads` workers; output order is row order.
inline std::vector<ChilsTrace> predict_chils_batch(const EmbeddingBundle& images, const LabelMap& map,
                                                   const ClassTextReps& sub_reps, const ClassTextReps& sup_reps,
                                                   const InferenceConfig& config, std::size_t threads = 1) {
    config.validate();
    check_alignment(map, sub_reps, sup_reps);
    if (images.dim != sub_reps.dim) {
        throw Error("dimension mismatch: images have " + std::to_string(images.dim) + ", text has " +
                    std::to_string(sub_reps.dim));
    }
    std::vector<ChilsTrace> out(images.count());
    threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(1, images.count()));
    if (threads == 1) {
        for (std::size_t i = 0; i < images.count(); ++i) out[i] = predict_chils(images.row(i), map, sub_reps, sup_reps, config);
        return out;
    }
    std::vector<std::exception_ptr> errors(threads);
    std::vector<std::thread> workers;
    const std::size_t block = (images.count() + threads - 1) / threads;
    for (std::size_t w = 0; w < threads; ++w) {
        workers.emplace_back([&, w] {
            try {
                const std::size_t end = std::min(images.count(), (w + 1) * block);
                for (std::size_t i = w * block; i < end; ++i) {
                    out[i] = predict_chils(images.row(i), map, sub_reps, sup_reps, config);
                }
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : workers) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    return out;
}

/// Fraction of items where either prediction matches the label.
inline double best_possible(std::span<const std::size_t> baseline_preds, std::span<const std::size_t> chils_norw_preds,
                            std::span<const std::size_t> labels) {
    if (baseline_preds.size() != labels.size() || chils_norw_preds.size() != labels.size()) {
        throw Error("length mismatch between predictions and labels");
    }
    if (labels.empty()) throw Error("no items");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (baseline_preds[i] == labels[i] || chils_norw_preds[i] == labels[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

inline std::string_view to_string(ReweightVariant v) {
    switch (v) {
        case ReweightVariant::standard: return "standard";
        case ReweightVariant::none: return "none";
        case ReweightVariant::sub_with_agg_sub: return "sub-agg";
        case ReweightVariant::agg_sub_with_sup: return "sup-space";
    }
    return "?";
}

inline std::string_view to_string(Aggregator a) { return a == Aggregator::mean ? "mean" : "sum"; }

}  // namespace chils
