/*
 * Copyright (C) 2026 The chils Authors
 * SPDX-License-Identifier: Apache-2.0
 */

#pragma once

// Superclass -> subclass label maps and tree taxonomies.
//
// A LabelMap is the mapping G from each superclass to its ordered subclass set,
// together with the inverse lookup from a subclass entry back to its parent.
// Entries are identified by (parent, text): the same caption text may appear
// under several superclasses and those are distinct entries.

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "chils/error.hpp"
#include "chils/tensorio.hpp"

namespace chils {

struct SubclassEntry {
    std::string text;
    std::size_t parent = 0;  // superclass index

    friend bool operator==(const SubclassEntry&, const SubclassEntry&) = default;
};

class LabelMap {
public:
    struct Set {
        std::string superclass;
        std::vector<std::string> subclasses;
    };

    LabelMap() = default;

    /// Validates and builds the map; superclass and subclass order is kept.
    explicit LabelMap(std::vector<Set> sets) {
        if (sets.empty()) throw Error("label map has no superclasses");
        std::unordered_set<std::string> sup_seen;
        for (std::size_t i = 0; i < sets.size(); ++i) {
            auto& s = sets[i];
            if (s.superclass.empty()) throw Error("empty superclass name");
            if (!sup_seen.insert(s.superclass).second) {
                throw Error("duplicate superclass \"" + s.superclass + "\"");
            }
            if (s.subclasses.empty()) throw Error("superclass \"" + s.superclass + "\" has an empty subclass set");
            std::unordered_set<std::string> sub_seen;
            offsets_.push_back(entries_.size());
            for (auto& text : s.subclasses) {
                if (text.empty()) throw Error("empty subclass text under \"" + s.superclass + "\"");
                if (!sub_seen.insert(text).second) {
                    throw Error("duplicate subclass \"" + text + "\" under \"" + s.superclass + "\"");
                }
                entries_.push_back(SubclassEntry{text, i});
            }
            index_.emplace(s.superclass, i);
            superclasses_.push_back(std::move(s.superclass));
        }
        offsets_.push_back(entries_.size());
    }

    std::size_t size() const { return superclasses_.size(); }
    std::size_t total_subclasses() const { return entries_.size(); }
    const std::vector<std::string>& superclasses() const { return superclasses_; }
    const std::string& superclass(std::size_t i) const { return superclasses_.at(i); }

    std::optional<std::size_t> find(std::string_view superclass) const {
        auto it = index_.find(std::string(superclass));
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    /// Flat index range [begin, end) of superclass i inside union_subclasses().
    std::pair<std::size_t, std::size_t> range(std::size_t i) const { return {offsets_.at(i), offsets_.at(i + 1)}; }
    std::size_t set_size(std::size_t i) const { return offsets_.at(i + 1) - offsets_.at(i); }

    /// Subclass set of a superclass, in file order.
    std::vector<SubclassEntry> subclasses_of(std::string_view superclass) const {
        auto i = find(superclass);
        if (!i) throw Error("unknown superclass \"" + std::string(superclass) + "\"");
        auto [b, e] = range(*i);
        return {entries_.begin() + static_cast<std::ptrdiff_t>(b), entries_.begin() + static_cast<std::ptrdiff_t>(e)};
    }

    /// Superclass owning an entry.
    const std::string& parent_of(const SubclassEntry& entry) const {
        if (entry.parent < size()) {
            auto [b, e] = range(entry.parent);
            for (std::size_t j = b; j < e; ++j) {
                if (entries_[j].text == entry.text) return superclasses_[entry.parent];
            }
        }
        throw Error("entry \"" + entry.text + "\" does not belong to this label map");
    }

    /// The union subclass space: all sets concatenated in superclass order.
    const std::vector<SubclassEntry>& union_subclasses() const { return entries_; }

    std::vector<std::string> subclass_texts() const {
        std::vector<std::string> out;
        for (const auto& e : entries_) out.push_back(e.text);
        return out;
    }

    std::vector<Set> sets() const {
        std::vector<Set> out;
        for (std::size_t i = 0; i < size(); ++i) {
            Set s{superclasses_[i], {}};
            auto [b, e] = range(i);
            for (std::size_t j = b; j < e; ++j) s.subclasses.push_back(entries_[j].text);
            out.push_back(std::move(s));
        }
        return out;
    }

    friend bool operator==(const LabelMap& a, const LabelMap& b) {
        return a.superclasses_ == b.superclasses_ && a.entries_ == b.entries_;
    }

private:
    std::vector<std::string> superclasses_;
    std::vector<SubclassEntry> entries_;
    std::vector<std::size_t> offsets_;
    std::unordered_map<std::string, std::size_t> index_;
};

inline std::vector<SubclassEntry> subclasses_of(const LabelMap& map, std::string_view superclass) {
    return map.subclasses_of(superclass);
}
inline const std::string& parent_of(const LabelMap& map, const SubclassEntry& entry) { return map.parent_of(entry); }
inline const std::vector<SubclassEntry>& union_subclasses(const LabelMap& map) { return map.union_subclasses(); }

// ---------------------------------------------------------------------------
// Label-map file: {"superclasses": [{"name": ..., "subclasses": [...]}, ...]}

inline LabelMap label_map_from_json(const nlohmann::json& j) {
    std::vector<LabelMap::Set> sets;
    try {
        for (const auto& s : j.at("superclasses")) {
            sets.push_back({s.at("name").get<std::string>(), s.at("subclasses").get<std::vector<std::string>>()});
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("malformed label map: ") + e.what());
    }
    return LabelMap(std::move(sets));
}

inline nlohmann::ordered_json label_map_to_json(const LabelMap& map) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& s : map.sets()) {
        nlohmann::ordered_json o;
        o["name"] = s.superclass;
        o["subclasses"] = s.subclasses;
        arr.push_back(std::move(o));
    }
    nlohmann::ordered_json j;
    j["superclasses"] = std::move(arr);
    return j;
}

inline LabelMap load_label_map(const std::filesystem::path& path) {
    return label_map_from_json(detail::parse_json_file(path));
}

inline void save_label_map(const LabelMap& map, const std::filesystem::path& path) {
    detail::ensure_parent_dir(path);
    detail::write_file(path, label_map_to_json(map).dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Label-set post-processing for generated subclass lists.

namespace detail {

inline std::string ascii_lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

inline bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

}  // namespace detail

/// Case-insensitive whole-word containment: "red apple" contains "apple",
/// "pineapple" does not.
inline bool contains_whole_word(std::string_view text, std::string_view word) {
    if (word.empty()) return false;
    const std::string t = detail::ascii_lower(text);
    const std::string w = detail::ascii_lower(word);
    for (std::size_t pos = t.find(w); pos != std::string::npos; pos = t.find(w, pos + 1)) {
        const bool left_ok = pos == 0 || !detail::is_word_char(t[pos - 1]);
        const std::size_t end = pos + w.size();
        const bool right_ok = end == t.size() || !detail::is_word_char(t[end]);
        if (left_ok && right_ok) return true;
    }
    return false;
}

inline std::vector<std::string> postprocess_label_set(const std::string& superclass,
                                                      const std::vector<std::string>& raw,
                                                      bool append_superclass, bool include_superclass) {
    std::vector<std::string> out;
    std::unordered_set<std::string> seen;
    for (const auto& item : raw) {
        if (item.empty()) continue;
        std::string label = item;
        if (append_superclass && !contains_whole_word(label, superclass)) label += " " + superclass;
        if (seen.insert(label).second) out.push_back(std::move(label));
    }
    if (include_superclass && !seen.contains(superclass)) out.push_back(superclass);
    if (out.empty()) throw Error("empty label set for superclass \"" + superclass + "\"");
    return out;
}

// ---------------------------------------------------------------------------
// Tree taxonomies.

class HierarchyDag {
public:
    struct Node {
        std::string name;
        std::vector<std::size_t> children;
        std::size_t depth = 0;
        std::optional<std::size_t> parent;
        bool is_leaf() const { return children.empty(); }
    };

    /// Nodes in depth-first preorder; node 0 is the root.
    explicit HierarchyDag(std::vector<Node> nodes) : nodes_(std::move(nodes)) {
        if (nodes_.empty()) throw Error("empty hierarchy");
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            if (nodes_[i].name.empty()) throw Error("hierarchy node with empty name");
            if (!index_.emplace(nodes_[i].name, i).second) {
                throw Error("node \"" + nodes_[i].name + "\" appears more than once (multiple parents are not supported)");
            }
        }
    }

    const Node& root() const { return nodes_.front(); }
    const Node& node(std::size_t i) const { return nodes_.at(i); }
    std::size_t size() const { return nodes_.size(); }
    const std::vector<Node>& nodes() const { return nodes_; }

    std::optional<std::size_t> find(std::string_view name) const {
        auto it = index_.find(std::string(name));
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    std::size_t height() const {
        std::size_t h = 0;
        for (const auto& n : nodes_) h = std::max(h, n.depth);
        return h;
    }

    /// Leaf names under node i in depth-first order (a leaf yields itself).
    std::vector<std::string> descendant_leaves(std::size_t i) const {
        std::vector<std::string> out;
        std::function<void(std::size_t)> walk = [&](std::size_t n) {
            if (nodes_[n].is_leaf()) {
                out.push_back(nodes_[n].name);
                return;
            }
            for (auto c : nodes_[n].children) walk(c);
        };
        walk(i);
        return out;
    }

    std::vector<std::string> leaves() const { return descendant_leaves(0); }

private:
    std::vector<Node> nodes_;
    std::unordered_map<std::string, std::size_t> index_;
};

inline HierarchyDag dag_from_json(const nlohmann::json& j) {
    std::vector<HierarchyDag::Node> nodes;
    std::function<std::size_t(const nlohmann::json&, std::size_t, std::optional<std::size_t>)> add =
        [&](const nlohmann::json& o, std::size_t depth, std::optional<std::size_t> parent) -> std::size_t {
        const std::size_t id = nodes.size();
        nodes.push_back({o.at("name").get<std::string>(), {}, depth, parent});
        if (auto it = o.find("children"); it != o.end() && !it->is_null()) {
            if (!it->is_array()) throw Error("\"children\" must be an array");
            for (const auto& c : *it) {
                const std::size_t cid = add(c, depth + 1, id);
                nodes[id].children.push_back(cid);
            }
        }
        return id;
    };
    try {
        add(j, 0, std::nullopt);
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("malformed hierarchy: ") + e.what());
    }
    return HierarchyDag(std::move(nodes));
}

inline nlohmann::ordered_json dag_to_json(const HierarchyDag& dag) {
    std::function<nlohmann::ordered_json(std::size_t)> emit = [&](std::size_t i) {
        nlohmann::ordered_json o;
        o["name"] = dag.node(i).name;
        nlohmann::ordered_json kids = nlohmann::ordered_json::array();
        for (auto c : dag.node(i).children) kids.push_back(emit(c));
        o["children"] = std::move(kids);
        return o;
    };
    return emit(0);
}

inline HierarchyDag load_dag(const std::filesystem::path& path) { return dag_from_json(detail::parse_json_file(path)); }

inline void save_dag(const HierarchyDag& dag, const std::filesystem::path& path) {
    detail::ensure_parent_dir(path);
    detail::write_file(path, dag_to_json(dag).dump(2) + "\n");
}

/// Classes at a given depth: every node at that root distance (internal nodes
/// map to their descendant leaves, leaves to themselves) plus every shallower
/// leaf as its own class. Preorder.
inline LabelMap slice_at_depth(const HierarchyDag& dag, std::size_t depth) {
    if (depth < 1) throw Error("depth must be >= 1");
    std::vector<LabelMap::Set> sets;
    bool any_at_depth = false;
    for (std::size_t i = 0; i < dag.size(); ++i) {
        const auto& n = dag.node(i);
        if (n.depth == depth) {
            any_at_depth = true;
            sets.push_back({n.name, dag.descendant_leaves(i)});
        } else if (n.depth < depth && n.is_leaf()) {
            sets.push_back({n.name, {n.name}});
        }
    }
    if (!any_at_depth) throw Error("empty slice: no nodes at depth " + std::to_string(depth));
    return LabelMap(std::move(sets));
}

/// Each named node maps to all of its descendant leaves.
inline LabelMap expand_noisy(const HierarchyDag& dag, const std::vector<std::string>& superclasses) {
    std::vector<LabelMap::Set> sets;
    for (const auto& name : superclasses) {
        auto i = dag.find(name);
        if (!i) throw Error("unknown hierarchy node \"" + name + "\"");
        sets.push_back({name, dag.descendant_leaves(*i)});
    }
    return LabelMap(std::move(sets));
}

}  // namespace chils
