#pragma once

// Named hierarchy of model components. Paths are dot-joined segments; indexed
// children use bracket syntax (`transformer.h[0].attn`), which is sugar for a
// child literally named "0".

#include <cctype>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "interp/error.hpp"

namespace interp {

using NodeId = std::size_t;

enum class NodeRole { container, embedding, position_embedding, layer_list, layer, norm, attention, mlp, head };

/// How a module hands its result back: a bare tensor or a tuple whose slot 0
/// is the hidden state.
enum class ReturnKind { bare, tuple };

inline std::string_view to_string(ReturnKind kind) { return kind == ReturnKind::bare ? "bare-tensor" : "tuple"; }

struct ModuleNode {
    std::string name;
    std::optional<NodeId> parent;
    std::vector<NodeId> children;
    NodeRole role = NodeRole::container;
    ReturnKind returns = ReturnKind::bare;
    std::size_t tuple_arity = 0;
    std::optional<std::size_t> layer;
    /// Named intermediate values observable inside the module's forward.
    std::vector<std::string> sources;
};

/// Splits "a.b[2].c" into {"a", "b", "2", "c"}. Throws "invalid-path".
inline std::vector<std::string> split_path(std::string_view path) {
    std::vector<std::string> out;
    if (path.empty()) return out;
    std::size_t i = 0;
    auto bad = [&] { return Error("invalid-path", std::string(path)); };
    while (i < path.size()) {
        if (path[i] == '[') {
            const auto close = path.find(']', i);
            if (close == std::string_view::npos || close == i + 1) throw bad();
            std::string index(path.substr(i + 1, close - i - 1));
            for (char c : index) {
                if (!std::isdigit(static_cast<unsigned char>(c))) throw bad();
            }
            out.push_back(std::move(index));
            i = close + 1;
            if (i < path.size()) {
                if (path[i] == '.') {
                    ++i;
                    if (i == path.size()) throw bad();
                } else if (path[i] != '[') {
                    throw bad();
                }
            }
            continue;
        }
        std::size_t end = i;
        while (end < path.size() && path[end] != '.' && path[end] != '[') ++end;
        if (end == i) throw bad();
        out.emplace_back(path.substr(i, end - i));
        i = end;
        if (i < path.size() && path[i] == '.') {
            ++i;
            if (i == path.size()) throw bad();
        }
    }
    return out;
}

inline bool is_index_segment(std::string_view s) {
    if (s.empty()) return false;
    for (char c : s) {
        if (!std::isdigit(static_cast<unsigned char>(c))) return false;
    }
    return true;
}

/// Joins segments back, rendering numeric segments in bracket form.
inline std::string join_path(const std::vector<std::string>& segments) {
    std::string out;
    for (const auto& s : segments) {
        if (is_index_segment(s)) {
            out += "[" + s + "]";
        } else {
            if (!out.empty()) out += '.';
            out += s;
        }
    }
    return out;
}

class ModuleTree {
public:
    ModuleTree() { nodes_.push_back(ModuleNode{}); }

    NodeId root() const noexcept { return 0; }

    NodeId add(NodeId parent, std::string name, NodeRole role = NodeRole::container) {
        if (child(parent, name)) throw Error("duplicate-module", path_of(parent) + "." + name);
        ModuleNode node;
        node.name = std::move(name);
        node.parent = parent;
        node.role = role;
        nodes_.push_back(std::move(node));
        const NodeId id = nodes_.size() - 1;
        nodes_[parent].children.push_back(id);
        return id;
    }

    const ModuleNode& node(NodeId id) const { return nodes_.at(id); }
    ModuleNode& node(NodeId id) { return nodes_.at(id); }
    std::size_t node_count() const noexcept { return nodes_.size(); }

    std::optional<NodeId> child(NodeId parent, std::string_view name) const {
        for (NodeId c : nodes_.at(parent).children) {
            if (nodes_[c].name == name) return c;
        }
        return std::nullopt;
    }

    std::optional<NodeId> resolve(std::string_view path, NodeId from = 0) const {
        NodeId at = from;
        for (const auto& seg : split_path(path)) {
            auto next = child(at, seg);
            if (!next) return std::nullopt;
            at = *next;
        }
        return at;
    }

    /// Detaches a node (and its subtree) from its parent. The node id stays
    /// valid but is no longer reachable by path.
    void detach(NodeId id) {
        auto& n = nodes_.at(id);
        if (!n.parent) throw Error("invalid-path", "cannot detach the root");
        auto& siblings = nodes_[*n.parent].children;
        std::erase(siblings, id);
        n.parent.reset();
    }

    bool reachable(NodeId id) const {
        NodeId at = id;
        while (at != 0) {
            const auto& p = nodes_.at(at).parent;
            if (!p) return false;
            at = *p;
        }
        return true;
    }

    std::string path_of(NodeId id) const {
        std::vector<std::string> segs;
        for (NodeId at = id; at != 0;) {
            const auto& n = nodes_.at(at);
            segs.push_back(n.name);
            if (!n.parent) break;
            at = *n.parent;
        }
        return join_path({segs.rbegin(), segs.rend()});
    }

    /// Every reachable node except the root, depth-first in child order.
    std::vector<NodeId> descendants(NodeId from = 0) const {
        std::vector<NodeId> out;
        std::vector<NodeId> stack(nodes_.at(from).children.rbegin(), nodes_.at(from).children.rend());
        while (!stack.empty()) {
            const NodeId id = stack.back();
            stack.pop_back();
            out.push_back(id);
            const auto& kids = nodes_[id].children;
            stack.insert(stack.end(), kids.rbegin(), kids.rend());
        }
        return out;
    }

private:
    std::vector<ModuleNode> nodes_;
};

}  // namespace interp
