#pragma once

// Toy causal transformers in four "architecture dialects". The dialects share
// the same pre-LN residual math but differ in module naming, norm type,
// positional encoding and what a decoder layer returns:
//
//   alpha        GPT-2-like   transformer.{wte,wpe,h[i],ln_f}   LayerNorm, gelu-tanh, learned positions, tuple (hidden, probs)
//   beta         LLaMA-like   model.{embed_tokens,layers[i],norm} RMSNorm, gated silu, rotary, bare tensor
//   beta-legacy  as beta, but layers return (hidden,)
//   gamma        BLOOM-like   transformer.{word_embeddings,position_embeddings,h[i],ln_f}  LayerNorm, gelu-tanh, learned positions, (hidden,)
//
// Linear weights are stored (in, out) so y = x W + b. Embedding tables and
// lm_head are (rows, d_model).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "interp/error.hpp"
#include "interp/kernels.hpp"
#include "interp/module_tree.hpp"
#include "interp/rng.hpp"
#include "interp/tensor.hpp"
#include "interp/tokenizer.hpp"

namespace interp {

struct ModelDims {
    std::size_t vocab_size = 0;
    std::size_t d_model = 16;
    std::size_t n_heads = 2;
    std::size_t n_layers = 2;
    std::size_t d_ff = 32;
    std::size_t max_seq_len = 32;

    /// Desk-scale defaults for a given vocabulary size.
    static ModelDims desk(std::size_t vocab_size) {
        ModelDims d;
        d.vocab_size = vocab_size;
        return d;
    }

    std::size_t head_dim() const { return d_model / n_heads; }

    void validate() const {
        if (vocab_size == 0 || d_model == 0 || n_heads == 0 || n_layers == 0 || d_ff == 0 || max_seq_len == 0) {
            throw Error("invalid-dims", "all dimensions must be positive");
        }
        if (d_model % n_heads != 0) throw Error("invalid-dims", "n_heads must divide d_model");
    }

    friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

enum class Dialect { alpha, beta, beta_legacy, gamma };
enum class NormKind { layer_norm, rms_norm };
enum class PositionKind { learned, rotary };

struct LayoutEntry {
    std::string component;
    std::string path;
};

struct DialectSpec {
    Dialect id;
    std::string name;
    std::string family;
    NormKind norm;
    ActivationKind activation;
    PositionKind positions;
    ReturnKind layer_returns;
    std::size_t layer_tuple_arity;
    /// Name of the intermediate holding post-softmax attention weights.
    std::string attn_prob_source;
    std::vector<LayoutEntry> layout;
};

inline const std::vector<DialectSpec>& list_dialects() {
    static const std::vector<DialectSpec> specs = {
        {Dialect::alpha, "alpha", "GPT-2-like", NormKind::layer_norm, ActivationKind::gelu_tanh,
         PositionKind::learned, ReturnKind::tuple, 2, "attn_weights",
         {{"embed_tokens", "transformer.wte"},
          {"position_embeddings", "transformer.wpe"},
          {"layers", "transformer.h"},
          {"attention_norm", "transformer.h[i].ln_1"},
          {"attention", "transformer.h[i].attn"},
          {"mlp_norm", "transformer.h[i].ln_2"},
          {"mlp", "transformer.h[i].mlp"},
          {"final_norm", "transformer.ln_f"},
          {"lm_head", "lm_head"}}},
        {Dialect::beta, "beta", "LLaMA-like", NormKind::rms_norm, ActivationKind::silu, PositionKind::rotary,
         ReturnKind::bare, 0, "attn_weights",
         {{"embed_tokens", "model.embed_tokens"},
          {"layers", "model.layers"},
          {"attention_norm", "model.layers[i].input_layernorm"},
          {"attention", "model.layers[i].self_attn"},
          {"mlp_norm", "model.layers[i].post_attention_layernorm"},
          {"mlp", "model.layers[i].mlp"},
          {"final_norm", "model.norm"},
          {"lm_head", "lm_head"}}},
        {Dialect::beta_legacy, "beta-legacy", "LLaMA-like, pre-tensor-return", NormKind::rms_norm,
         ActivationKind::silu, PositionKind::rotary, ReturnKind::tuple, 1, "attn_weights",
         {{"embed_tokens", "model.embed_tokens"},
          {"layers", "model.layers"},
          {"attention_norm", "model.layers[i].input_layernorm"},
          {"attention", "model.layers[i].self_attn"},
          {"mlp_norm", "model.layers[i].post_attention_layernorm"},
          {"mlp", "model.layers[i].mlp"},
          {"final_norm", "model.norm"},
          {"lm_head", "lm_head"}}},
        {Dialect::gamma, "gamma", "BLOOM-like", NormKind::layer_norm, ActivationKind::gelu_tanh,
         PositionKind::learned, ReturnKind::tuple, 1, "attention_probs",
         {{"embed_tokens", "transformer.word_embeddings"},
          {"position_embeddings", "transformer.position_embeddings"},
          {"layers", "transformer.h"},
          {"attention_norm", "transformer.h[i].input_layernorm"},
          {"attention", "transformer.h[i].self_attention"},
          {"mlp_norm", "transformer.h[i].post_attention_layernorm"},
          {"mlp", "transformer.h[i].mlp"},
          {"final_norm", "transformer.ln_f"},
          {"lm_head", "lm_head"}}},
    };
    return specs;
}

inline const DialectSpec& dialect_spec(Dialect id) {
    for (const auto& s : list_dialects()) {
        if (s.id == id) return s;
    }
    throw Error("unknown-dialect");
}

inline Dialect parse_dialect(std::string_view name) {
    for (const auto& s : list_dialects()) {
        if (s.name == name) return s.id;
    }
    throw Error("unknown-dialect", std::string(name));
}

/// A module's native return value: a bare tensor or a tuple of tensors.
struct ModuleValue {
    std::variant<Tensor, std::vector<Tensor>> value;

    bool is_tuple() const { return std::holds_alternative<std::vector<Tensor>>(value); }
    const Tensor& tensor() const { return std::get<Tensor>(value); }
    Tensor& tensor() { return std::get<Tensor>(value); }
    const std::vector<Tensor>& tuple() const { return std::get<std::vector<Tensor>>(value); }
    std::vector<Tensor>& tuple() { return std::get<std::vector<Tensor>>(value); }
};

enum class Port { input, output, source };

struct HookSite {
    NodeId node;
    Port port;
    std::string_view source;  // set when port == source
};

/// Observer invoked at every module boundary of a forward pass. It may read
/// or replace the value in place.
class ForwardHooks {
public:
    virtual ~ForwardHooks() = default;
    virtual void on(const HookSite& site, ModuleValue& value) = 0;
    virtual bool skip_layer(std::size_t /*layer*/) const { return false; }
};

struct LayerNodes {
    NodeId layer;
    NodeId attn_norm;
    NodeId attn;
    NodeId mlp_norm;
    NodeId mlp;
};

struct WeightInfo {
    std::string path;
    Shape shape;
};

/// Deliberate corruptions used by fault injection.
struct ModelFaults {
    float attn_prob_scale = 1.0f;

    bool any() const { return attn_prob_scale != 1.0f; }
};

class Model {
public:
    static Model build(Dialect dialect, const ModelDims& dims, std::uint64_t seed) {
        dims.validate();
        Model m(dialect, dims, seed);
        for (const auto& w : m.weight_table_) {
            Pcg32 rng(seed ^ fnv1a64(w.path));
            Tensor t(w.shape);
            for (auto& v : t.data()) v = rng.next_weight();
            m.weights_.emplace(w.path, std::move(t));
        }
        return m;
    }

    /// Model with externally supplied weights; every expected tensor must be
    /// present with the documented shape and no extras are allowed.
    static Model with_weights(Dialect dialect, const ModelDims& dims, std::uint64_t seed,
                              std::map<std::string, Tensor> weights) {
        dims.validate();
        Model m(dialect, dims, seed);
        if (weights.size() != m.weight_table_.size()) {
            throw Error("weights-mismatch", "expected " + std::to_string(m.weight_table_.size()) + " tensors, got " +
                                                std::to_string(weights.size()));
        }
        for (const auto& w : m.weight_table_) {
            auto it = weights.find(w.path);
            if (it == weights.end()) throw Error("weights-mismatch", "missing " + w.path);
            if (it->second.shape() != w.shape) {
                throw Error("weights-mismatch", w.path + " has shape " + shape_string(it->second.shape()) +
                                                    ", expected " + shape_string(w.shape));
            }
        }
        m.weights_ = std::move(weights);
        return m;
    }

    const ModelDims& dims() const noexcept { return dims_; }
    const DialectSpec& dialect() const { return dialect_spec(dialect_); }
    Dialect dialect_id() const noexcept { return dialect_; }
    std::uint64_t seed() const noexcept { return seed_; }
    const ModuleTree& tree() const noexcept { return tree_; }
    const std::map<std::string, Tensor>& weights() const noexcept { return weights_; }
    /// Tensor paths and shapes in creation order.
    const std::vector<WeightInfo>& weight_table() const noexcept { return weight_table_; }

    const Tensor& weight(const std::string& path) const {
        auto it = weights_.find(path);
        if (it == weights_.end()) throw Error("unknown-weight", path);
        return it->second;
    }

    NodeId embed_node() const noexcept { return embed_; }
    std::optional<NodeId> position_node() const noexcept { return positions_; }
    const std::vector<LayerNodes>& layer_nodes() const noexcept { return layers_; }
    NodeId final_norm_node() const noexcept { return final_norm_; }
    NodeId head_node() const noexcept { return head_; }

    const ModelFaults& faults() const noexcept { return faults_; }
    Model with_faults(ModelFaults faults) const {
        Model copy = *this;
        copy.faults_ = faults;
        return copy;
    }

    void check_tokens(const TokenBatch& tokens) const {
        if (tokens.empty()) throw Error("empty-batch");
        const std::size_t len = tokens.front().size();
        if (len == 0) throw Error("empty-sequence");
        for (const auto& seq : tokens) {
            if (seq.size() != len) throw Error("ragged-batch", "pad sequences with id 0 to equal length");
            if (seq.size() > dims_.max_seq_len) {
                throw Error("sequence-too-long", std::to_string(seq.size()) + " > " + std::to_string(dims_.max_seq_len));
            }
            for (TokenId id : seq) {
                if (id < 0 || static_cast<std::size_t>(id) >= dims_.vocab_size) {
                    throw Error("token-out-of-range", std::to_string(id));
                }
            }
        }
    }

    /// Logits (batch, seq, vocab).
    Tensor forward(const TokenBatch& tokens) const { return forward(tokens, nullptr); }

    Tensor forward(const TokenBatch& tokens, ForwardHooks* hooks) const {
        check_tokens(tokens);
        Tensor h = embed(tokens, hooks);
        for (std::size_t i = 0; i < layers_.size(); ++i) h = run_layer(i, std::move(h), hooks);
        Tensor normed = run_module(final_norm_, h, hooks, [&](const Tensor& x) { return apply_final_norm(x); });
        return run_module(head_, normed, hooks, [&](const Tensor& x) { return unembed(x); });
    }

    /// Residual stream entering layer 0: token embeddings plus learned
    /// positions where the dialect has them.
    Tensor embed(const TokenBatch& tokens, ForwardHooks* hooks = nullptr) const {
        check_tokens(tokens);
        const std::size_t batch = tokens.size();
        const std::size_t seq = tokens.front().size();
        const std::size_t d = dims_.d_model;
        const Tensor& table = weight(weight_path(embed_));
        Tensor tok({batch, seq, d});
        for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t s = 0; s < seq; ++s) {
                const auto src = table.row(static_cast<std::size_t>(tokens[b][s]));
                std::copy(src.begin(), src.end(), tok.row(b * seq + s).begin());
            }
        }
        tok = fire_output(embed_, std::move(tok), hooks);
        if (!positions_) return tok;
        const Tensor& ptable = weight(weight_path(*positions_));
        Tensor pos({batch, seq, d});
        for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t s = 0; s < seq; ++s) {
                const auto src = ptable.row(s);
                std::copy(src.begin(), src.end(), pos.row(b * seq + s).begin());
            }
        }
        pos = fire_output(*positions_, std::move(pos), hooks);
        return add(tok, pos);
    }

    Tensor apply_final_norm(const Tensor& h) const { return norm(final_norm_, h); }

    Tensor unembed(const Tensor& h) const { return project_rows(h, weight(weight_path(head_))); }

private:
    Model(Dialect dialect, const ModelDims& dims, std::uint64_t seed) : dialect_(dialect), dims_(dims), seed_(seed) {
        build_tree();
    }

    std::string weight_path(NodeId node, std::string_view leaf = "weight") const {
        return tree_.path_of(node) + "." + std::string(leaf);
    }

    NodeId add_node(NodeId parent, std::string name, NodeRole role,
                    std::initializer_list<std::pair<std::string_view, Shape>> params = {}) {
        const NodeId id = tree_.add(parent, std::move(name), role);
        for (const auto& [leaf, shape] : params) weight_table_.push_back({weight_path(id, leaf), shape});
        return id;
    }

    void build_tree() {
        const auto& spec = dialect();
        const std::size_t d = dims_.d_model;
        const std::size_t ff = dims_.d_ff;
        const std::size_t vocab = dims_.vocab_size;
        const bool ln = spec.norm == NormKind::layer_norm;

        auto norm_node = [&](NodeId parent, std::string name) {
            if (ln) return add_node(parent, std::move(name), NodeRole::norm, {{"weight", {d}}, {"bias", {d}}});
            return add_node(parent, std::move(name), NodeRole::norm, {{"weight", {d}}});
        };
        auto linear_node = [&](NodeId parent, std::string name, std::size_t in, std::size_t out, bool bias) {
            if (bias) return add_node(parent, std::move(name), NodeRole::container, {{"weight", {in, out}}, {"bias", {out}}});
            return add_node(parent, std::move(name), NodeRole::container, {{"weight", {in, out}}});
        };

        const bool gamma = dialect_ == Dialect::gamma;
        const bool alpha = dialect_ == Dialect::alpha;
        const NodeId body = tree_.add(tree_.root(), alpha || gamma ? "transformer" : "model");

        embed_ = add_node(body, alpha ? "wte" : gamma ? "word_embeddings" : "embed_tokens", NodeRole::embedding,
                          {{"weight", {vocab, d}}});
        if (spec.positions == PositionKind::learned) {
            positions_ = add_node(body, alpha ? "wpe" : "position_embeddings", NodeRole::position_embedding,
                                  {{"weight", {dims_.max_seq_len, d}}});
        }
        const NodeId list = tree_.add(body, alpha || gamma ? "h" : "layers", NodeRole::layer_list);

        for (std::size_t i = 0; i < dims_.n_layers; ++i) {
            const NodeId layer = tree_.add(list, std::to_string(i), NodeRole::layer);
            auto& ln_node = tree_.node(layer);
            ln_node.layer = i;
            ln_node.returns = spec.layer_returns;
            ln_node.tuple_arity = spec.layer_tuple_arity;

            LayerNodes nodes{};
            nodes.layer = layer;
            nodes.attn_norm = norm_node(layer, alpha ? "ln_1" : "input_layernorm");
            nodes.attn = tree_.add(layer, alpha ? "attn" : gamma ? "self_attention" : "self_attn", NodeRole::attention);
            if (alpha) {
                linear_node(nodes.attn, "c_attn", d, 3 * d, true);
                linear_node(nodes.attn, "c_proj", d, d, true);
            } else if (gamma) {
                linear_node(nodes.attn, "query_key_value", d, 3 * d, true);
                linear_node(nodes.attn, "dense", d, d, true);
            } else {
                for (const char* name : {"q_proj", "k_proj", "v_proj", "o_proj"}) linear_node(nodes.attn, name, d, d, false);
            }
            nodes.mlp_norm = norm_node(layer, alpha ? "ln_2" : "post_attention_layernorm");
            nodes.mlp = tree_.add(layer, "mlp", NodeRole::mlp);
            if (alpha) {
                linear_node(nodes.mlp, "c_fc", d, ff, true);
                linear_node(nodes.mlp, "c_proj", ff, d, true);
            } else if (gamma) {
                linear_node(nodes.mlp, "dense_h_to_4h", d, ff, true);
                linear_node(nodes.mlp, "dense_4h_to_h", ff, d, true);
            } else {
                linear_node(nodes.mlp, "gate_proj", d, ff, false);
                linear_node(nodes.mlp, "up_proj", d, ff, false);
                linear_node(nodes.mlp, "down_proj", ff, d, false);
            }
            // HF-style attention modules return (attn_output, attn_weights).
            auto& an = tree_.node(nodes.attn);
            an.layer = i;
            an.returns = ReturnKind::tuple;
            an.tuple_arity = 2;
            an.sources = {spec.attn_prob_source};
            tree_.node(nodes.mlp).layer = i;
            tree_.node(nodes.attn_norm).layer = i;
            tree_.node(nodes.mlp_norm).layer = i;
            layers_.push_back(nodes);
        }
        final_norm_ = norm_node(body, alpha || gamma ? "ln_f" : "norm");
        head_ = add_node(tree_.root(), "lm_head", NodeRole::head, {{"weight", {vocab, d}}});
    }

    Tensor norm(NodeId node, const Tensor& x) const {
        if (dialect().norm == NormKind::layer_norm) {
            return layer_norm(x, weight(weight_path(node)), weight(weight_path(node, "bias")), 1e-5f);
        }
        return rms_norm(x, weight(weight_path(node)), 1e-6f);
    }

    Tensor sub_linear(NodeId parent, std::string_view child, const Tensor& x) const {
        const std::string base = tree_.path_of(parent) + "." + std::string(child);
        auto bias = weights_.find(base + ".bias");
        return linear(x, weight(base + ".weight"), bias == weights_.end() ? nullptr : &bias->second);
    }

    static Tensor unwrap(ModuleValue v) {
        if (v.is_tuple()) return std::move(v.tuple().at(0));
        return std::move(v.tensor());
    }

    Tensor fire_input(NodeId node, Tensor x, ForwardHooks* hooks) const {
        if (!hooks) return x;
        ModuleValue v{std::move(x)};
        hooks->on({node, Port::input, {}}, v);
        return std::move(v.tensor());
    }

    Tensor fire_output(NodeId node, Tensor y, ForwardHooks* hooks) const {
        if (!hooks) return y;
        ModuleValue v{std::move(y)};
        hooks->on({node, Port::output, {}}, v);
        return std::move(v.tensor());
    }

    template <class Fn>
    Tensor run_module(NodeId node, Tensor x, ForwardHooks* hooks, Fn&& fn) const {
        x = fire_input(node, std::move(x), hooks);
        return fire_output(node, fn(x), hooks);
    }

    ModuleValue wrap_layer_output(Tensor hidden, Tensor probs) const {
        const auto& spec = dialect();
        if (spec.layer_returns == ReturnKind::bare) return {std::move(hidden)};
        std::vector<Tensor> tuple;
        tuple.push_back(std::move(hidden));
        if (spec.layer_tuple_arity > 1) tuple.push_back(std::move(probs));
        return {std::move(tuple)};
    }

    Tensor run_layer(std::size_t i, Tensor h, ForwardHooks* hooks) const {
        const LayerNodes& n = layers_[i];
        h = fire_input(n.layer, std::move(h), hooks);
        ModuleValue out;
        if (hooks && hooks->skip_layer(i)) {
            out = wrap_layer_output(h, Tensor());
        } else {
            Tensor x = run_module(n.attn_norm, h, hooks, [&](const Tensor& t) { return norm(n.attn_norm, t); });
            x = fire_input(n.attn, std::move(x), hooks);
            ModuleValue attn = attention(i, x, hooks);
            if (hooks) hooks->on({n.attn, Port::output, {}}, attn);
            Tensor probs = attn.is_tuple() && attn.tuple().size() > 1 ? attn.tuple()[1] : Tensor();
            Tensor mid = add(h, unwrap(std::move(attn)));
            Tensor y = run_module(n.mlp_norm, mid, hooks, [&](const Tensor& t) { return norm(n.mlp_norm, t); });
            y = run_module(n.mlp, std::move(y), hooks, [&](const Tensor& t) { return mlp(n.mlp, t); });
            out = wrap_layer_output(add(mid, y), std::move(probs));
        }
        if (hooks) hooks->on({n.layer, Port::output, {}}, out);
        return unwrap(std::move(out));
    }

    Tensor mlp(NodeId node, const Tensor& x) const {
        switch (dialect_) {
            case Dialect::alpha:
                return sub_linear(node, "c_proj", activation(ActivationKind::gelu_tanh, sub_linear(node, "c_fc", x)));
            case Dialect::gamma:
                return sub_linear(node, "dense_4h_to_h",
                                  activation(ActivationKind::gelu_tanh, sub_linear(node, "dense_h_to_4h", x)));
            case Dialect::beta:
            case Dialect::beta_legacy:
                return sub_linear(node, "down_proj",
                                  multiply(activation(ActivationKind::silu, sub_linear(node, "gate_proj", x)),
                                           sub_linear(node, "up_proj", x)));
        }
        throw Error("unknown-dialect");
    }

    /// Rotates even/odd channel pairs of each head by position * 10000^(-2j/d_head).
    void apply_rotary(Tensor& t) const {
        const std::size_t batch = t.dim(0);
        const std::size_t seq = t.dim(1);
        const std::size_t hd = dims_.head_dim();
        for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t s = 0; s < seq; ++s) {
                auto row = t.row(b * seq + s);
                for (std::size_t h = 0; h < dims_.n_heads; ++h) {
                    for (std::size_t j = 0; 2 * j + 1 < hd; ++j) {
                        const double theta = std::pow(10000.0, -2.0 * static_cast<double>(j) / static_cast<double>(hd));
                        const double angle = static_cast<double>(s) * theta;
                        const double c = std::cos(angle);
                        const double sn = std::sin(angle);
                        float& x0 = row[h * hd + 2 * j];
                        float& x1 = row[h * hd + 2 * j + 1];
                        const double a = x0;
                        const double bv = x1;
                        x0 = static_cast<float>(a * c - bv * sn);
                        x1 = static_cast<float>(a * sn + bv * c);
                    }
                }
            }
        }
    }

    static Tensor columns(const Tensor& x, std::size_t begin, std::size_t count) {
        Shape shape = x.shape();
        shape.back() = count;
        Tensor out(shape);
        for (std::size_t r = 0; r < x.row_count(); ++r) {
            const auto src = x.row(r).subspan(begin, count);
            std::copy(src.begin(), src.end(), out.row(r).begin());
        }
        return out;
    }

    ModuleValue attention(std::size_t layer, const Tensor& x, ForwardHooks* hooks) const {
        const LayerNodes& n = layers_[layer];
        const std::size_t d = dims_.d_model;
        Tensor q, k, v;
        std::string_view out_proj;
        switch (dialect_) {
            case Dialect::alpha:
            case Dialect::gamma: {
                const Tensor qkv = sub_linear(n.attn, dialect_ == Dialect::alpha ? "c_attn" : "query_key_value", x);
                q = columns(qkv, 0, d);
                k = columns(qkv, d, d);
                v = columns(qkv, 2 * d, d);
                out_proj = dialect_ == Dialect::alpha ? "c_proj" : "dense";
                break;
            }
            case Dialect::beta:
            case Dialect::beta_legacy:
                q = sub_linear(n.attn, "q_proj", x);
                k = sub_linear(n.attn, "k_proj", x);
                v = sub_linear(n.attn, "v_proj", x);
                apply_rotary(q);
                apply_rotary(k);
                out_proj = "o_proj";
                break;
        }

        const std::size_t batch = x.dim(0);
        const std::size_t seq = x.dim(1);
        const std::size_t heads = dims_.n_heads;
        const std::size_t hd = dims_.head_dim();
        const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

        Tensor probs({batch, heads, seq, seq});
        std::vector<double> scores(seq);
        for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t h = 0; h < heads; ++h) {
                for (std::size_t i = 0; i < seq; ++i) {
                    const auto qi = q.row(b * seq + i).subspan(h * hd, hd);
                    double peak = -INFINITY;
                    for (std::size_t j = 0; j <= i; ++j) {
                        const auto kj = k.row(b * seq + j).subspan(h * hd, hd);
                        double dot = 0.0;
                        for (std::size_t c = 0; c < hd; ++c) dot += static_cast<double>(qi[c]) * kj[c];
                        scores[j] = dot * scale;
                        peak = std::max(peak, scores[j]);
                    }
                    double total = 0.0;
                    for (std::size_t j = 0; j <= i; ++j) {
                        scores[j] = std::exp(scores[j] - peak);
                        total += scores[j];
                    }
                    auto row = probs.row(((b * heads + h) * seq) + i);
                    for (std::size_t j = 0; j <= i; ++j) {
                        row[j] = static_cast<float>(scores[j] / total * faults_.attn_prob_scale);
                    }
                }
            }
        }

        if (hooks) {
            ModuleValue pv{std::move(probs)};
            hooks->on({n.attn, Port::source, dialect().attn_prob_source}, pv);
            probs = std::move(pv.tensor());
        }

        Tensor context({batch, seq, d});
        for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t h = 0; h < heads; ++h) {
                for (std::size_t i = 0; i < seq; ++i) {
                    const auto p = probs.row(((b * heads + h) * seq) + i);
                    auto dst = context.row(b * seq + i).subspan(h * hd, hd);
                    for (std::size_t c = 0; c < hd; ++c) {
                        double acc = 0.0;
                        for (std::size_t j = 0; j < seq; ++j) acc += static_cast<double>(p[j]) * v.row(b * seq + j)[h * hd + c];
                        dst[c] = static_cast<float>(acc);
                    }
                }
            }
        }
        std::vector<Tensor> tuple;
        tuple.push_back(sub_linear(n.attn, out_proj, context));
        tuple.push_back(std::move(probs));
        return {std::move(tuple)};
    }

    Dialect dialect_;
    ModelDims dims_;
    std::uint64_t seed_;
    ModuleTree tree_;
    std::vector<WeightInfo> weight_table_;
    std::map<std::string, Tensor> weights_;
    NodeId embed_ = 0;
    std::optional<NodeId> positions_;
    std::vector<LayerNodes> layers_;
    NodeId final_norm_ = 0;
    NodeId head_ = 0;
    ModelFaults faults_;
};

inline Model build_model(Dialect dialect, const ModelDims& dims, std::uint64_t seed) {
    return Model::build(dialect, dims, seed);
}

inline Model build_model(std::string_view dialect, const ModelDims& dims, std::uint64_t seed) {
    return Model::build(parse_dialect(dialect), dims, seed);
}

}  // namespace interp
