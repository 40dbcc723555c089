/*
 * Copyright (C) 2026 The chils Authors
 * SPDX-License-Identifier: Apache-2.0
 */

#pragma once

// Synthetic zero-shot instances with a known hierarchy.
//
// Layout of the d coordinate axes:
//   [0, k*m)                      subclass directions, superclass-major
//   [k*m, k*m + k*distractors)    distractor leaves (no images)
//   next k axes                   per-superclass offset directions (coarse_gap > 0)
//
// Each image is its subclass axis plus isotropic Gaussian noise with expected
// squared norm image_noise^2 (per-coordinate std image_noise/sqrt(d)), then
// normalized. Superclass text = normalize((1-g)*mean(subclass axes) + g*offset axis).
//
// Randomness: std::mt19937_64 seeded with `seed`; uniforms take the top 53 bits;
// normals come from the Marsaglia polar method. Draw order is image by image,
// coordinate by coordinate.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "chils/error.hpp"
#include "chils/hierarchy.hpp"
#include "chils/tensorio.hpp"

namespace chils {

struct SyntheticSpec {
    std::size_t k = 5;
    std::size_t m = 4;
    std::size_t d = 32;
    std::size_t images_per_subclass = 50;
    double image_noise = 0.9;
    double coarse_gap = 0.8;
    std::uint64_t seed = 0;
    std::size_t distractors = 0;  // extra leaves per superclass that no image comes from

    std::size_t required_dim() const { return k * m + k * distractors + (coarse_gap > 0.0 ? k : 0); }

    void validate() const {
        if (k < 2) throw Error("synthetic spec needs k >= 2");
        if (m < 1) throw Error("synthetic spec needs m >= 1");
        if (images_per_subclass < 1) throw Error("synthetic spec needs images_per_subclass >= 1");
        if (!(image_noise >= 0.0)) throw Error("image_noise must be >= 0");
        if (!(coarse_gap >= 0.0 && coarse_gap <= 1.0)) throw Error("coarse_gap must lie in [0, 1]");
        if (d < required_dim()) {
            throw Error("d too small: need at least " + std::to_string(required_dim()) + " dimensions, got " +
                        std::to_string(d));
        }
    }
};

inline SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
    SyntheticSpec s;
    try {
        s.k = j.at("k").get<std::size_t>();
        s.m = j.at("m").get<std::size_t>();
        s.d = j.at("d").get<std::size_t>();
        s.images_per_subclass = j.at("images_per_subclass").get<std::size_t>();
        s.image_noise = j.at("image_noise").get<double>();
        s.coarse_gap = j.at("coarse_gap").get<double>();
        s.seed = j.at("seed").get<std::uint64_t>();
        s.distractors = j.value("distractors", std::size_t{0});
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("malformed synthetic spec: ") + e.what());
    }
    s.validate();
    return s;
}

inline nlohmann::ordered_json synthetic_spec_to_json(const SyntheticSpec& s) {
    nlohmann::ordered_json j;
    j["k"] = s.k;
    j["m"] = s.m;
    j["d"] = s.d;
    j["images_per_subclass"] = s.images_per_subclass;
    j["image_noise"] = s.image_noise;
    j["coarse_gap"] = s.coarse_gap;
    j["seed"] = s.seed;
    j["distractors"] = s.distractors;
    return j;
}

struct SyntheticInstance {
    EmbeddingBundle images;
    EmbeddingBundle sub_text;  // true subclasses, then distractors
    EmbeddingBundle sup_text;
    LabelMap map;              // true map (no distractors)
    HierarchyDag dag;          // root -> superclasses -> subclasses + distractors
    std::vector<std::size_t> labels;
    std::vector<std::size_t> subclass_of_image;  // flat union index of each image's true subclass
};

namespace detail {

class NormalSource {
public:
    explicit NormalSource(std::uint64_t seed) : engine_(seed) {}

    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double f = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * f;
        has_spare_ = true;
        return u * f;
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

inline std::string sup_name(std::size_t i) { return "c" + std::to_string(i); }
inline std::string sub_name(std::size_t i, std::size_t j) { return "c" + std::to_string(i) + "_s" + std::to_string(j); }
inline std::string distractor_name(std::size_t i, std::size_t j) {
    return "c" + std::to_string(i) + "_x" + std::to_string(j);
}

inline void push_normalized(std::vector<float>& out, const std::vector<double>& v) {
    double n2 = 0.0;
    for (double x : v) n2 += x * x;
    const double n = std::sqrt(n2);
    if (n == 0.0) throw Error("synthetic generator produced a zero vector");
    for (double x : v) out.push_back(static_cast<float>(x / n));
}

}  // namespace detail

inline SyntheticInstance generate(const SyntheticSpec& spec) {
    spec.validate();
    const std::size_t k = spec.k, m = spec.m, d = spec.d, nd = spec.distractors;
    const std::size_t distractor_base = k * m;
    const std::size_t offset_base = k * m + k * nd;

    EmbeddingBundle sub{d, {}, {}, true};
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            std::vector<double> v(d, 0.0);
            v[i * m + j] = 1.0;
            sub.names.push_back(detail::sub_name(i, j));
            detail::push_normalized(sub.matrix, v);
        }
    }
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < nd; ++j) {
            std::vector<double> v(d, 0.0);
            v[distractor_base + i * nd + j] = 1.0;
            sub.names.push_back(detail::distractor_name(i, j));
            detail::push_normalized(sub.matrix, v);
        }
    }

    EmbeddingBundle sup{d, {}, {}, true};
    for (std::size_t i = 0; i < k; ++i) {
        std::vector<double> v(d, 0.0);
        for (std::size_t j = 0; j < m; ++j) v[i * m + j] = (1.0 - spec.coarse_gap) / static_cast<double>(m);
        if (spec.coarse_gap > 0.0) v[offset_base + i] = spec.coarse_gap;
        sup.names.push_back(detail::sup_name(i));
        detail::push_normalized(sup.matrix, v);
    }

    EmbeddingBundle images{d, {}, {}, true};
    std::vector<std::size_t> labels, subclass_of_image;
    detail::NormalSource rng(spec.seed);
    const double coord_std = spec.image_noise / std::sqrt(static_cast<double>(d));
    std::size_t n = 0;
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            for (std::size_t r = 0; r < spec.images_per_subclass; ++r) {
                std::vector<double> v(d);
                for (auto& x : v) x = coord_std * rng.normal();
                v[i * m + j] += 1.0;
                images.names.push_back("img" + std::to_string(n++));
                detail::push_normalized(images.matrix, v);
                labels.push_back(i);
                subclass_of_image.push_back(i * m + j);
            }
        }
    }

    std::vector<LabelMap::Set> sets;
    std::vector<HierarchyDag::Node> nodes;
    nodes.push_back({"root", {}, 0, std::nullopt});
    for (std::size_t i = 0; i < k; ++i) {
        LabelMap::Set s{detail::sup_name(i), {}};
        const std::size_t sup_id = nodes.size();
        nodes[0].children.push_back(sup_id);
        nodes.push_back({s.superclass, {}, 1, 0});
        for (std::size_t j = 0; j < m; ++j) {
            s.subclasses.push_back(detail::sub_name(i, j));
            nodes[sup_id].children.push_back(nodes.size());
            nodes.push_back({detail::sub_name(i, j), {}, 2, sup_id});
        }
        for (std::size_t j = 0; j < nd; ++j) {
            nodes[sup_id].children.push_back(nodes.size());
            nodes.push_back({detail::distractor_name(i, j), {}, 2, sup_id});
        }
        sets.push_back(std::move(s));
    }

    return {std::move(images), std::move(sub),          std::move(sup),
            LabelMap(std::move(sets)), HierarchyDag(std::move(nodes)), std::move(labels),
            std::move(subclass_of_image)};
}

inline void save_labels(const std::vector<std::size_t>& labels, const std::filesystem::path& path) {
    detail::ensure_parent_dir(path);
    detail::write_file(path, nlohmann::json(labels).dump() + "\n");
}

inline std::vector<std::size_t> load_labels(const std::filesystem::path& path) {
    try {
        return detail::parse_json_file(path).get<std::vector<std::size_t>>();
    } catch (const nlohmann::json::exception& e) {
        throw Error("malformed labels file " + path.string() + ": " + e.what());
    }
}

/// Writes images/, sub_text/, sup_text/ bundles plus map.json, dag.json,
/// superclasses.json, labels.json and spec.json into `dir`.
inline void save_instance(const SyntheticInstance& inst, const SyntheticSpec& spec, const std::filesystem::path& dir) {
    save_bundle(inst.images, dir / "images");
    save_bundle(inst.sub_text, dir / "sub_text");
    save_bundle(inst.sup_text, dir / "sup_text");
    save_label_map(inst.map, dir / "map.json");
    save_dag(inst.dag, dir / "dag.json");
    detail::write_file(dir / "superclasses.json", nlohmann::json(inst.map.superclasses()).dump(2) + "\n");
    save_labels(inst.labels, dir / "labels.json");
    detail::write_file(dir / "spec.json", synthetic_spec_to_json(spec).dump(2) + "\n");
}

}  // namespace chils
