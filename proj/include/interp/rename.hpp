#pragma once

// Maps a dialect's native module tree onto the standard layout
//
//   embed_tokens
//   layers[i]
//   |-- self_attn
//   `-- mlp
//   ln_final
//   lm_head
//
// Renaming is pure aliasing: the underlying ModuleTree is shared and never
// mutated, so every original path keeps resolving to the same node.

#include <algorithm>
#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "interp/error.hpp"
#include "interp/model.hpp"
#include "interp/module_tree.hpp"

namespace interp {

/// One or more alternative names for a component. Empty means "not provided".
using NameAlternatives = std::vector<std::string>;

struct RenameConfig {
    NameAlternatives model_name;
    NameAlternatives layers_name;
    NameAlternatives attn_name;
    NameAlternatives mlp_name;
    NameAlternatives ln_final_name;
    NameAlternatives lm_head_name;
    NameAlternatives embed_tokens_name;
    /// Intermediate inside the attention module that holds post-softmax weights.
    std::optional<std::string> attn_prob_source;

    friend bool operator==(const RenameConfig&, const RenameConfig&) = default;
};

/// Field names in their serialized spelling, in resolution order.
inline const std::vector<std::pair<std::string, NameAlternatives RenameConfig::*>>& rename_fields() {
    static const std::vector<std::pair<std::string, NameAlternatives RenameConfig::*>> fields = {
        {"model_name", &RenameConfig::model_name},         {"layers_name", &RenameConfig::layers_name},
        {"attn_name", &RenameConfig::attn_name},           {"mlp_name", &RenameConfig::mlp_name},
        {"ln_final_name", &RenameConfig::ln_final_name},   {"lm_head_name", &RenameConfig::lm_head_name},
        {"embed_tokens_name", &RenameConfig::embed_tokens_name},
    };
    return fields;
}

inline RenameConfig builtin_config(Dialect dialect) {
    RenameConfig c;
    c.lm_head_name = {"lm_head"};
    switch (dialect) {
        case Dialect::alpha:
            c.model_name = {"transformer"};
            c.layers_name = {"h"};
            c.attn_name = {"attn"};
            c.mlp_name = {"mlp"};
            c.ln_final_name = {"transformer.ln_f"};
            c.embed_tokens_name = {"transformer.wte"};
            break;
        case Dialect::beta:
        case Dialect::beta_legacy:
            c.model_name = {"model"};
            c.layers_name = {"model.layers"};
            c.attn_name = {"self_attn"};
            c.mlp_name = {"mlp"};
            c.ln_final_name = {"model.norm"};
            c.embed_tokens_name = {"model.embed_tokens"};
            break;
        case Dialect::gamma:
            c.model_name = {"transformer"};
            c.layers_name = {"h"};
            c.attn_name = {"self_attention"};
            c.mlp_name = {"mlp"};
            c.ln_final_name = {"transformer.ln_f"};
            c.embed_tokens_name = {"transformer.word_embeddings"};
            break;
    }
    c.attn_prob_source = dialect_spec(dialect).attn_prob_source;
    return c;
}

/// Config that maps the standard layout onto itself.
inline RenameConfig identity_config() {
    RenameConfig c;
    c.layers_name = {"layers"};
    c.attn_name = {"self_attn"};
    c.mlp_name = {"mlp"};
    c.ln_final_name = {"ln_final"};
    c.lm_head_name = {"lm_head"};
    c.embed_tokens_name = {"embed_tokens"};
    return c;
}

/// The config as an original-name -> standard-name dictionary (first
/// alternative of each field). Identity entries are omitted.
inline std::vector<std::pair<std::string, std::string>> rename_map(const RenameConfig& c) {
    std::vector<std::pair<std::string, std::string>> out;
    auto put = [&](const NameAlternatives& from, const std::string& to) {
        if (!from.empty() && from.front() != to) out.emplace_back(from.front(), to);
    };
    put(c.model_name, "model");
    put(c.layers_name, "layers");
    // Dotted layer paths also get the bare "model.layers" spelling so that
    // "model.layers[0]" keeps working once "model" is itself an alias.
    if (!c.layers_name.empty() && c.layers_name.front() != "model.layers") out.emplace_back("model.layers", "layers");
    put(c.attn_name, "self_attn");
    put(c.mlp_name, "mlp");
    put(c.ln_final_name, "ln_final");
    put(c.lm_head_name, "lm_head");
    put(c.embed_tokens_name, "embed_tokens");
    return out;
}

inline nlohmann::json to_json(const RenameConfig& c) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [name, member] : rename_fields()) {
        const auto& alts = c.*member;
        if (alts.empty()) continue;
        j[name] = alts.size() == 1 ? nlohmann::json(alts.front()) : nlohmann::json(alts);
    }
    if (c.attn_prob_source) j["attn_prob_source"] = *c.attn_prob_source;
    return j;
}

/// Parses a RenameConfig; each field is a string or a list of strings.
/// Fields absent from `j` keep their value from `base`.
inline RenameConfig rename_config_from_json(const nlohmann::json& j, RenameConfig base = {}) {
    if (!j.is_object()) throw Error("bad-rename-config", "expected a JSON object");
    std::set<std::string> known{"attn_prob_source"};
    for (const auto& [name, member] : rename_fields()) {
        known.insert(name);
        if (!j.contains(name)) continue;
        const auto& v = j.at(name);
        NameAlternatives alts;
        if (v.is_string()) {
            alts.push_back(v.get<std::string>());
        } else if (v.is_array() && !v.empty()) {
            for (const auto& e : v) {
                if (!e.is_string()) throw Error("bad-rename-config", name + " entries must be strings");
                alts.push_back(e.get<std::string>());
            }
        } else {
            throw Error("bad-rename-config", name + " must be a string or a nonempty list of strings");
        }
        base.*member = std::move(alts);
    }
    if (j.contains("attn_prob_source")) {
        if (!j.at("attn_prob_source").is_string()) throw Error("bad-rename-config", "attn_prob_source must be a string");
        base.attn_prob_source = j.at("attn_prob_source").get<std::string>();
    }
    for (const auto& [key, _] : j.items()) {
        if (!known.contains(key)) throw Error("bad-rename-config", "unknown field " + key);
    }
    return base;
}

struct Alias {
    std::string original;
    std::string canonical;
    NodeId node;
};

class StandardizedTree {
public:
    const ModuleTree& tree() const noexcept { return *tree_; }
    std::shared_ptr<const ModuleTree> shared_tree() const noexcept { return tree_; }

    NodeId embed_tokens() const noexcept { return embed_; }
    NodeId layer_list() const noexcept { return layer_list_; }
    NodeId ln_final() const noexcept { return ln_final_; }
    NodeId lm_head() const noexcept { return lm_head_; }
    std::optional<NodeId> model_node() const noexcept { return model_; }

    std::size_t n_layers() const noexcept { return layers_.size(); }
    std::optional<std::size_t> expected_layers() const noexcept { return expected_layers_; }
    /// Index labels of the layer children, ascending. Contiguous when healthy.
    const std::vector<std::size_t>& layer_indices() const noexcept { return layer_indices_; }
    NodeId layer(std::size_t i) const { return layers_.at(i); }
    NodeId attention(std::size_t i) const { return attn_.at(i); }
    NodeId mlp(std::size_t i) const { return mlp_.at(i); }

    /// Renamed nodes: those whose standard name differs from their original name.
    const std::vector<Alias>& aliases() const noexcept { return aliases_; }
    std::size_t alias_count() const noexcept { return aliases_.size(); }

    /// Child lookup through the standardized view: standard names bound on
    /// this node first, then original names.
    std::optional<NodeId> child(NodeId parent, std::string_view name) const {
        if (auto it = extra_.find(parent); it != extra_.end()) {
            if (auto jt = it->second.find(std::string(name)); jt != it->second.end()) return jt->second;
        }
        return tree_->child(parent, name);
    }

    /// Original modules hidden behind a standard name bound to another node.
    const std::vector<std::string>& shadowed() const noexcept { return shadowed_; }

    /// Resolves canonical, original or mixed paths.
    std::optional<NodeId> resolve(std::string_view path, NodeId from = 0) const {
        NodeId at = from;
        for (const auto& seg : split_path(path)) {
            auto next = child(at, seg);
            if (!next) return std::nullopt;
            at = *next;
        }
        return at;
    }

    NodeId require(std::string_view path) const {
        auto n = resolve(path);
        if (!n) throw Error("unknown-module", std::string(path));
        return *n;
    }

    /// Standard path of a node when it has one, else its original path.
    std::string canonical_path(NodeId node) const {
        auto it = canonical_.find(node);
        if (it != canonical_.end()) return it->second;
        return tree_->path_of(node);
    }

private:
    friend StandardizedTree standardize_with(std::shared_ptr<const ModuleTree>, const RenameConfig&,
                                             std::optional<std::size_t>,
                                             const std::function<std::optional<NodeId>(NodeId, std::string_view)>&,
                                             const StandardizedTree*);

    std::shared_ptr<const ModuleTree> tree_;
    NodeId embed_ = 0;
    NodeId layer_list_ = 0;
    NodeId ln_final_ = 0;
    NodeId lm_head_ = 0;
    std::optional<NodeId> model_;
    std::vector<NodeId> layers_;
    std::vector<std::size_t> layer_indices_;
    std::vector<NodeId> attn_;
    std::vector<NodeId> mlp_;
    std::optional<std::size_t> expected_layers_;
    std::vector<Alias> aliases_;
    std::map<NodeId, std::map<std::string, NodeId>> extra_;
    std::map<NodeId, std::string> canonical_;
    std::vector<std::string> shadowed_;
};

inline StandardizedTree standardize_with(
    std::shared_ptr<const ModuleTree> tree, const RenameConfig& cfg, std::optional<std::size_t> expected_layers,
    const std::function<std::optional<NodeId>(NodeId, std::string_view)>& lookup, const StandardizedTree* prior) {
    StandardizedTree out;
    out.tree_ = tree;
    out.expected_layers_ = expected_layers;
    if (prior) {
        out.extra_ = prior->extra_;
        out.aliases_ = prior->aliases_;
        out.canonical_ = prior->canonical_;
        out.shadowed_ = prior->shadowed_;
    }

    auto walk = [&](NodeId from, const std::string& path) -> std::optional<NodeId> {
        NodeId at = from;
        for (const auto& seg : split_path(path)) {
            auto next = lookup(at, seg);
            if (!next) return std::nullopt;
            at = *next;
        }
        return at;
    };

    // First alternative that resolves wins; two alternatives resolving to
    // different nodes is an error.
    auto resolve_field = [&](const std::string& field, const NameAlternatives& alts,
                             const std::vector<NodeId>& bases) -> std::optional<NodeId> {
        std::optional<NodeId> chosen;
        for (const auto& alt : alts) {
            std::optional<NodeId> hit;
            for (NodeId base : bases) {
                if ((hit = walk(base, alt))) break;
            }
            if (!hit) continue;
            if (!chosen) {
                chosen = hit;
            } else if (*chosen != *hit) {
                throw Error("rename-ambiguous:" + field, "alternatives resolve to different modules: " +
                                                             tree->path_of(*chosen) + " and " + tree->path_of(*hit));
            }
        }
        return chosen;
    };
    auto require_field = [&](const std::string& field, const NameAlternatives& alts,
                             const std::vector<NodeId>& bases) -> NodeId {
        if (alts.empty()) throw Error("rename-missing:" + field, "no name configured");
        auto hit = resolve_field(field, alts, bases);
        if (!hit) {
            std::string tried;
            for (const auto& a : alts) tried += (tried.empty() ? "" : ", ") + a;
            throw Error("rename-missing:" + field, "none of [" + tried + "] resolves");
        }
        return *hit;
    };

    const NodeId root = tree->root();
    std::vector<NodeId> top_bases{root};
    if (!cfg.model_name.empty()) {
        out.model_ = require_field("model_name", cfg.model_name, {root});
        top_bases.push_back(*out.model_);
    }
    out.layer_list_ = require_field("layers_name", cfg.layers_name, top_bases);
    out.ln_final_ = require_field("ln_final_name", cfg.ln_final_name, top_bases);
    out.lm_head_ = require_field("lm_head_name", cfg.lm_head_name, top_bases);
    out.embed_ = require_field("embed_tokens_name", cfg.embed_tokens_name, top_bases);

    std::vector<std::pair<std::size_t, NodeId>> indexed;
    for (NodeId c : tree->node(out.layer_list_).children) {
        const auto& name = tree->node(c).name;
        if (is_index_segment(name)) indexed.emplace_back(std::stoul(name), c);
    }
    std::sort(indexed.begin(), indexed.end());
    for (const auto& [index, node] : indexed) {
        out.layer_indices_.push_back(index);
        out.layers_.push_back(node);
        out.attn_.push_back(require_field("attn_name", cfg.attn_name, {node}));
        out.mlp_.push_back(require_field("mlp_name", cfg.mlp_name, {node}));
    }

    auto alias = [&](NodeId node, NodeId view_parent, const std::string& name, const std::string& canonical_path) {
        out.canonical_[node] = canonical_path;
        const auto& original = tree->node(node);
        auto existing = tree->child(view_parent, name);
        if (!existing || *existing != node) {
            // The standard binding wins; a displaced original is recorded so
            // validate_layout can report it.
            if (existing) out.shadowed_.push_back(canonical_path + " shadows " + tree->path_of(*existing));
            auto& slot = out.extra_[view_parent];
            if (auto it = slot.find(name); it != slot.end() && it->second != node) {
                out.shadowed_.push_back(canonical_path + " rebound from " + tree->path_of(it->second));
            }
            slot[name] = node;
        }
        if (original.name == name) return;
        // Renamed nodes are also reachable under the standard name from their
        // original parent, e.g. alpha's "model.layers".
        if (original.parent && *original.parent != view_parent && !tree->child(*original.parent, name)) {
            out.extra_[*original.parent][name] = node;
        }
        const bool seen = std::any_of(out.aliases_.begin(), out.aliases_.end(),
                                      [&](const Alias& a) { return a.node == node && a.canonical == canonical_path; });
        if (!seen) out.aliases_.push_back({tree->path_of(node), canonical_path, node});
    };

    if (out.model_) alias(*out.model_, root, "model", "model");
    alias(out.embed_, root, "embed_tokens", "embed_tokens");
    alias(out.layer_list_, root, "layers", "layers");
    for (std::size_t i = 0; i < out.layers_.size(); ++i) {
        const std::string base = "layers[" + std::to_string(out.layer_indices_[i]) + "]";
        out.canonical_[out.layers_[i]] = base;
        alias(out.attn_[i], out.layers_[i], "self_attn", base + ".self_attn");
        alias(out.mlp_[i], out.layers_[i], "mlp", base + ".mlp");
    }
    alias(out.ln_final_, root, "ln_final", "ln_final");
    alias(out.lm_head_, root, "lm_head", "lm_head");
    return out;
}

/// Applies `cfg` to a raw module tree.
inline StandardizedTree standardize(std::shared_ptr<const ModuleTree> tree, const RenameConfig& cfg,
                                    std::optional<std::size_t> expected_layers = std::nullopt) {
    const ModuleTree* raw = tree.get();
    return standardize_with(
        std::move(tree), cfg, expected_layers,
        [raw](NodeId parent, std::string_view name) { return raw->child(parent, name); }, nullptr);
}

/// Re-applies a config on top of an existing standardized view; names resolve
/// through the view, so standard names are accepted.
inline StandardizedTree standardize(const StandardizedTree& view, const RenameConfig& cfg) {
    return standardize_with(
        view.shared_tree(), cfg, view.expected_layers(),
        [&view](NodeId parent, std::string_view name) { return view.child(parent, name); }, &view);
}

struct LayoutEntryStatus {
    std::string family;
    std::string path;
    bool found;
    std::string detail;
};

struct LayoutReport {
    std::vector<LayoutEntryStatus> entries;
    std::vector<std::string> failures;
    bool pass = true;
};

/// Checks that every required standard path family is present, that layer
/// indices run contiguously from 0, and that attention and MLP are distinct.
inline LayoutReport validate_layout(const StandardizedTree& t) {
    LayoutReport report;
    const ModuleTree& tree = t.tree();
    auto entry = [&](const std::string& family, const std::string& path, bool found, std::string detail = {}) {
        report.entries.push_back({family, path, found, detail});
        if (!found) {
            report.pass = false;
            report.failures.push_back(path + ": " + (detail.empty() ? "missing" : detail));
        }
    };
    auto present = [&](const std::string& path, NodeId node) {
        auto hit = t.resolve(path);
        return hit && *hit == node && tree.reachable(node);
    };

    entry("embed_tokens", "embed_tokens", present("embed_tokens", t.embed_tokens()));
    entry("layers", "layers", present("layers", t.layer_list()) && t.n_layers() > 0,
          t.n_layers() == 0 ? "no layers" : "");

    bool attn_ok = t.n_layers() > 0;
    bool mlp_ok = t.n_layers() > 0;
    std::string attn_detail;
    std::string mlp_detail;
    for (std::size_t i = 0; i < t.n_layers(); ++i) {
        const std::string base = "layers[" + std::to_string(t.layer_indices()[i]) + "]";
        if (!present(base + ".self_attn", t.attention(i))) {
            attn_ok = false;
            attn_detail = base + ".self_attn missing";
        }
        if (!present(base + ".mlp", t.mlp(i))) {
            mlp_ok = false;
            mlp_detail = base + ".mlp missing";
        }
        if (t.attention(i) == t.mlp(i)) {
            attn_ok = false;
            attn_detail = base + ".self_attn and " + base + ".mlp resolve to the same module (" +
                          tree.path_of(t.mlp(i)) + ")";
        }
    }
    entry("layers[i].self_attn", "layers[i].self_attn", attn_ok, attn_detail);
    entry("layers[i].mlp", "layers[i].mlp", mlp_ok, mlp_detail);
    entry("ln_final", "ln_final", present("ln_final", t.ln_final()));
    entry("lm_head", "lm_head", present("lm_head", t.lm_head()));

    for (const auto& s : t.shadowed()) {
        report.pass = false;
        report.failures.push_back(s);
    }

    const auto& idx = t.layer_indices();
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] != i) {
            report.pass = false;
            report.failures.push_back("non-contiguous layers: expected layers[" + std::to_string(i) + "], found layers[" +
                                      std::to_string(idx[i]) + "]");
            break;
        }
    }
    if (t.expected_layers() && *t.expected_layers() != t.n_layers()) {
        report.pass = false;
        report.failures.push_back("layer count " + std::to_string(t.n_layers()) + " != expected " +
                                  std::to_string(*t.expected_layers()));
    }
    return report;
}

}  // namespace interp
