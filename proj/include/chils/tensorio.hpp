/*
 * Copyright (C) 2026 The chils Authors
 * SPDX-License-Identifier: Apache-2.0
 */

#pragma once

// Named embedding matrices ("bundles") and their on-disk directory format:
//
//   <dir>/manifest.json  {"version":1,"dim":d,"count":n,"normalized":b,"dtype":"f32le","names":[...]}
//   <dir>/data.bin       n*d little-endian IEEE-754 float32 values, row-major
//
// All reductions accumulate in double, sequentially in index order.

#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "chils/error.hpp"

namespace chils {

inline constexpr double kBundleNormTolerance = 1e-4;

struct EmbeddingBundle {
    std::size_t dim = 0;
    std::vector<std::string> names;
    std::vector<float> matrix;  // row-major, names.size() x dim
    bool normalized = false;

    std::size_t count() const { return names.size(); }

    std::span<const float> row(std::size_t i) const {
        return std::span<const float>(matrix).subspan(i * dim, dim);
    }
    std::span<float> row(std::size_t i) {
        return std::span<float>(matrix).subspan(i * dim, dim);
    }

    friend bool operator==(const EmbeddingBundle&, const EmbeddingBundle&) = default;
};

/// Sequential double-precision dot product.
inline double dot(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size()) {
        throw Error("dimension mismatch: " + std::to_string(a.size()) + " vs " +
                    std::to_string(b.size()));
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    }
    return acc;
}

inline double l2_norm(std::span<const float> v) { return std::sqrt(dot(v, v)); }

/// Throws if the bundle breaks any structural invariant.
inline void validate_bundle(const EmbeddingBundle& b) {
    if (b.dim == 0) throw Error("bundle dim must be >= 1");
    if (b.names.empty()) throw Error("bundle count must be >= 1");
    if (b.matrix.size() != b.names.size() * b.dim) {
        throw Error("size mismatch: expected " + std::to_string(b.names.size() * b.dim) +
                    " values, got " + std::to_string(b.matrix.size()));
    }
    std::unordered_set<std::string> seen;
    for (const auto& n : b.names) {
        if (n.empty()) throw Error("bundle names must be non-empty");
        if (!seen.insert(n).second) throw Error("duplicate name in bundle: \"" + n + "\"");
    }
    if (b.normalized) {
        for (std::size_t i = 0; i < b.count(); ++i) {
            const double norm = l2_norm(b.row(i));
            if (!(std::abs(norm - 1.0) <= kBundleNormTolerance)) {
                throw Error("norm violation in row " + std::to_string(i) + " (\"" + b.names[i] +
                            "\"): norm " + std::to_string(norm));
            }
        }
    }
}

namespace detail {

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed: " + path.string());
}

inline nlohmann::json parse_json_file(const std::filesystem::path& path) {
    const std::string text = read_file(path);
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error("malformed JSON in " + path.string() + ": " + e.what());
    }
}

inline void ensure_parent_dir(const std::filesystem::path& path) {
    if (!path.has_parent_path()) return;
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw Error("cannot create directory " + path.parent_path().string() + ": " + ec.message());
}

inline void put_f32le(std::string& out, float v) {
    const auto bits = std::bit_cast<std::uint32_t>(v);
    for (int s = 0; s < 32; s += 8) out.push_back(static_cast<char>((bits >> s) & 0xffu));
}

inline float get_f32le(const unsigned char* p) {
    const std::uint32_t bits = std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) |
                               (std::uint32_t{p[2]} << 16) | (std::uint32_t{p[3]} << 24);
    return std::bit_cast<float>(bits);
}

}  // namespace detail

inline EmbeddingBundle load_bundle(const std::filesystem::path& dir) {
    const auto manifest_path = dir / "manifest.json";
    const auto data_path = dir / "data.bin";
    if (!std::filesystem::exists(manifest_path)) throw Error("missing file: " + manifest_path.string());
    if (!std::filesystem::exists(data_path)) throw Error("missing file: " + data_path.string());

    const auto manifest = detail::parse_json_file(manifest_path);
    EmbeddingBundle b;
    std::size_t count = 0;
    try {
        if (manifest.at("version").get<int>() != 1) throw Error("unsupported bundle version");
        if (manifest.at("dtype").get<std::string>() != "f32le") throw Error("unsupported dtype (expected f32le)");
        const auto dim = manifest.at("dim").get<std::int64_t>();
        const auto cnt = manifest.at("count").get<std::int64_t>();
        if (dim < 1 || cnt < 1) throw Error("dim and count must be >= 1");
        b.dim = static_cast<std::size_t>(dim);
        count = static_cast<std::size_t>(cnt);
        b.normalized = manifest.at("normalized").get<bool>();
        b.names = manifest.at("names").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw Error("malformed manifest " + manifest_path.string() + ": " + e.what());
    }
    if (b.names.size() != count) {
        throw Error("size mismatch: manifest count " + std::to_string(count) + " but " +
                    std::to_string(b.names.size()) + " names");
    }

    const std::string bytes = detail::read_file(data_path);
    if (bytes.size() != count * b.dim * 4) {
        throw Error("size mismatch: data.bin holds " + std::to_string(bytes.size()) + " bytes, expected " +
                    std::to_string(count * b.dim * 4));
    }
    b.matrix.resize(count * b.dim);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    for (std::size_t i = 0; i < b.matrix.size(); ++i) b.matrix[i] = detail::get_f32le(p + 4 * i);

    validate_bundle(b);
    return b;
}

inline void save_bundle(const EmbeddingBundle& b, const std::filesystem::path& dir) {
    validate_bundle(b);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir)) {
        throw Error("cannot create bundle directory " + dir.string() + (ec ? ": " + ec.message() : ""));
    }
    nlohmann::ordered_json manifest;
    manifest["version"] = 1;
    manifest["dim"] = b.dim;
    manifest["count"] = b.count();
    manifest["normalized"] = b.normalized;
    manifest["dtype"] = "f32le";
    manifest["names"] = b.names;
    detail::write_file(dir / "manifest.json", manifest.dump(2) + "\n");

    std::string data;
    data.reserve(b.matrix.size() * 4);
    for (float v : b.matrix) detail::put_f32le(data, v);
    detail::write_file(dir / "data.bin", data);
}

inline EmbeddingBundle normalize_rows(EmbeddingBundle b) {
    for (std::size_t i = 0; i < b.count(); ++i) {
        auto r = b.row(i);
        const double norm = l2_norm(r);
        if (norm == 0.0) throw Error("zero-norm row " + std::to_string(i));
        for (auto& v : r) v = static_cast<float>(static_cast<double>(v) / norm);
    }
    b.normalized = true;
    return b;
}

}  // namespace chils
