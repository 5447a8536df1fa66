#pragma once

// Forward passes with read/write interventions at standardized hook points.
//
// Accessor hooks (`layers_output[3]`, `attention_probabilities[0]`, ...) always
// hand out the hidden-state tensor regardless of whether the underlying module
// returns a bare tensor or a tuple. The accessor's expectation of the return
// structure is configuration (AccessorConfig); the module's actual behaviour
// is a property of the model. When the two disagree the accessor behaves like
// indexing a tensor as if it were a tuple, which is the silent failure mode the
// validation suite exists to catch.

#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <tuple>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "interp/error.hpp"
#include "interp/model.hpp"
#include "interp/rename.hpp"
#include "interp/tensor.hpp"

namespace interp {

/// Which return structure each accessor family expects from its module.
struct AccessorConfig {
    ReturnKind layer_output = ReturnKind::bare;
    ReturnKind attention_output = ReturnKind::tuple;
    ReturnKind mlp_output = ReturnKind::bare;

    static AccessorConfig for_dialect(const DialectSpec& spec) {
        AccessorConfig c;
        c.layer_output = spec.layer_returns;
        return c;
    }

    friend bool operator==(const AccessorConfig&, const AccessorConfig&) = default;
};

/// A model seen through the standard naming scheme.
class StandardizedModel {
public:
    StandardizedModel(std::shared_ptr<const Model> model, RenameConfig config, bool enable_attention_probs = false)
        : model_(std::move(model)),
          config_(std::move(config)),
          tree_(standardize(std::shared_ptr<const ModuleTree>(model_, &model_->tree()), config_, model_->dims().n_layers)),
          accessors_(AccessorConfig::for_dialect(model_->dialect())),
          attention_probs_(enable_attention_probs) {}

    StandardizedModel(Model model, RenameConfig config, bool enable_attention_probs = false)
        : StandardizedModel(std::make_shared<const Model>(std::move(model)), std::move(config), enable_attention_probs) {}

    const Model& model() const noexcept { return *model_; }
    std::shared_ptr<const Model> shared_model() const noexcept { return model_; }
    const StandardizedTree& tree() const noexcept { return tree_; }
    const RenameConfig& config() const noexcept { return config_; }
    const AccessorConfig& accessors() const noexcept { return accessors_; }
    bool attention_probs_enabled() const noexcept { return attention_probs_; }

    std::size_t n_layers() const noexcept { return tree_.n_layers(); }
    std::size_t d_model() const noexcept { return model_->dims().d_model; }

    StandardizedModel with_accessors(AccessorConfig accessors) const {
        StandardizedModel copy = *this;
        copy.accessors_ = accessors;
        return copy;
    }

    /// Names of deliberately injected faults, for reporting.
    const std::vector<std::string>& faults() const noexcept { return faults_; }
    StandardizedModel with_fault_label(std::string label) const {
        StandardizedModel copy = *this;
        copy.faults_.push_back(std::move(label));
        return copy;
    }

private:
    std::shared_ptr<const Model> model_;
    RenameConfig config_;
    StandardizedTree tree_;
    AccessorConfig accessors_;
    bool attention_probs_;
    std::vector<std::string> faults_;
};

enum class HookKind {
    layers_input,
    layers_output,
    attentions_input,
    attentions_output,
    mlps_input,
    mlps_output,
    attention_probabilities,
    logits,
};

inline constexpr std::string_view hook_kind_name(HookKind k) {
    switch (k) {
        case HookKind::layers_input: return "layers_input";
        case HookKind::layers_output: return "layers_output";
        case HookKind::attentions_input: return "attentions_input";
        case HookKind::attentions_output: return "attentions_output";
        case HookKind::mlps_input: return "mlps_input";
        case HookKind::mlps_output: return "mlps_output";
        case HookKind::attention_probabilities: return "attention_probabilities";
        case HookKind::logits: return "logits";
    }
    return "?";
}

struct HookPoint {
    HookKind kind;
    std::size_t layer = 0;

    static HookPoint layers_input(std::size_t i) { return {HookKind::layers_input, i}; }
    static HookPoint layers_output(std::size_t i) { return {HookKind::layers_output, i}; }
    static HookPoint attentions_input(std::size_t i) { return {HookKind::attentions_input, i}; }
    static HookPoint attentions_output(std::size_t i) { return {HookKind::attentions_output, i}; }
    static HookPoint mlps_input(std::size_t i) { return {HookKind::mlps_input, i}; }
    static HookPoint mlps_output(std::size_t i) { return {HookKind::mlps_output, i}; }
    static HookPoint attention_probabilities(std::size_t i) { return {HookKind::attention_probabilities, i}; }
    static HookPoint logits() { return {HookKind::logits, 0}; }

    friend bool operator==(const HookPoint&, const HookPoint&) = default;
};

/// A raw module boundary addressed by path (standard, original or mixed).
struct ModuleHook {
    std::string path;
    Port port = Port::output;
    std::string source;  // intermediate name when port == source
};

using HookTarget = std::variant<HookPoint, ModuleHook>;

inline std::string to_string(const HookTarget& target) {
    if (const auto* h = std::get_if<HookPoint>(&target)) {
        if (h->kind == HookKind::logits) return "logits";
        return std::string(hook_kind_name(h->kind)) + "[" + std::to_string(h->layer) + "]";
    }
    const auto& m = std::get<ModuleHook>(target);
    switch (m.port) {
        case Port::input: return m.path + ".input";
        case Port::output: return m.path + ".output";
        case Port::source: return m.path + "@" + m.source;
    }
    return m.path;
}

/// Parses "layers_output[2]", "logits", "<path>.input", "<path>.output" or
/// "<path>@<intermediate>".
inline HookTarget parse_hook(std::string_view text) {
    static const std::regex accessor(R"(^([a-z_]+)\[(\d+)\]$)");
    const std::string s(text);
    if (s == "logits") return HookPoint::logits();
    std::smatch m;
    if (std::regex_match(s, m, accessor)) {
        for (HookKind k : {HookKind::layers_input, HookKind::layers_output, HookKind::attentions_input,
                           HookKind::attentions_output, HookKind::mlps_input, HookKind::mlps_output,
                           HookKind::attention_probabilities}) {
            if (m[1].str() == hook_kind_name(k)) return HookPoint{k, std::stoul(m[2])};
        }
    }
    if (auto at = s.rfind('@'); at != std::string::npos && at > 0 && at + 1 < s.size()) {
        return ModuleHook{s.substr(0, at), Port::source, s.substr(at + 1)};
    }
    for (auto [suffix, port] : {std::pair{std::string_view(".input"), Port::input},
                                std::pair{std::string_view(".output"), Port::output}}) {
        if (s.size() > suffix.size() && s.ends_with(suffix)) {
            return ModuleHook{s.substr(0, s.size() - suffix.size()), port, {}};
        }
    }
    throw Error("unknown-hook", s);
}

/// Half-open range of sequence positions.
struct PositionSlice {
    std::size_t begin = 0;
    std::size_t end = 0;

    static PositionSlice at(std::size_t pos) { return {pos, pos + 1}; }
    std::size_t size() const { return end - begin; }
};

using TensorTransform = std::function<Tensor(const Tensor&)>;

struct ReadAction {
    HookTarget hook;
};
struct WriteAction {
    HookTarget hook;
    Tensor value;
    std::optional<PositionSlice> positions;
};
struct WriteFnAction {
    HookTarget hook;
    TensorTransform transform;
    std::optional<PositionSlice> positions;
};
/// Layers [from, to) become identity maps on the residual stream.
struct SkipAction {
    std::size_t from = 0;
    std::size_t to = 0;
};

using Action = std::variant<ReadAction, WriteAction, WriteFnAction, SkipAction>;

class InterventionPlan {
public:
    /// Registers a read; returns its capture index in the TraceResult.
    std::size_t read(HookTarget hook) {
        actions_.emplace_back(ReadAction{std::move(hook)});
        return reads_++;
    }

    InterventionPlan& write(HookTarget hook, Tensor value, std::optional<PositionSlice> positions = std::nullopt) {
        actions_.emplace_back(WriteAction{std::move(hook), std::move(value), positions});
        return *this;
    }

    InterventionPlan& write_fn(HookTarget hook, TensorTransform fn, std::optional<PositionSlice> positions = std::nullopt) {
        actions_.emplace_back(WriteFnAction{std::move(hook), std::move(fn), positions});
        return *this;
    }

    InterventionPlan& skip(std::size_t from, std::size_t to) {
        actions_.emplace_back(SkipAction{from, to});
        return *this;
    }

    const std::vector<Action>& actions() const noexcept { return actions_; }
    std::size_t read_count() const noexcept { return reads_; }
    bool empty() const noexcept { return actions_.empty(); }

private:
    std::vector<Action> actions_;
    std::size_t reads_ = 0;
};

struct Capture {
    std::string hook;
    Tensor value;
};

struct TraceResult {
    std::vector<Capture> captures;
    Tensor logits;
    std::vector<std::string> warnings;

    const Tensor& capture(std::size_t index) const { return captures.at(index).value; }

    /// First capture taken at `hook` (e.g. "layers_output[0]").
    const Tensor& capture(std::string_view hook) const {
        for (const auto& c : captures) {
            if (c.hook == hook) return c.value;
        }
        throw Error("unknown-capture", std::string(hook));
    }
};

namespace detail {

struct BoundHook {
    NodeId node;
    Port port;
    std::string source;
    /// Structure the accessor expects; reads/writes adapt through it.
    ReturnKind expect;
    bool probabilities;
    std::string label;
};

inline BoundHook bind_hook(const StandardizedModel& sm, const HookTarget& target) {
    const auto& tree = sm.tree();
    const std::string label = to_string(target);
    if (const auto* h = std::get_if<HookPoint>(&target)) {
        if (h->kind == HookKind::logits) return {tree.lm_head(), Port::output, {}, ReturnKind::bare, false, label};
        if (h->layer >= sm.n_layers()) {
            throw Error("unknown-hook", label + ": model has " + std::to_string(sm.n_layers()) + " layers");
        }
        const std::size_t i = h->layer;
        const auto& acc = sm.accessors();
        switch (h->kind) {
            case HookKind::layers_input: return {tree.layer(i), Port::input, {}, ReturnKind::bare, false, label};
            case HookKind::layers_output: return {tree.layer(i), Port::output, {}, acc.layer_output, false, label};
            case HookKind::attentions_input: return {tree.attention(i), Port::input, {}, ReturnKind::bare, false, label};
            case HookKind::attentions_output:
                return {tree.attention(i), Port::output, {}, acc.attention_output, false, label};
            case HookKind::mlps_input: return {tree.mlp(i), Port::input, {}, ReturnKind::bare, false, label};
            case HookKind::mlps_output: return {tree.mlp(i), Port::output, {}, acc.mlp_output, false, label};
            case HookKind::attention_probabilities: {
                if (!sm.attention_probs_enabled()) {
                    throw Error("attn-probs-unavailable", label + ": model was loaded without attention-probability capture");
                }
                const auto& src = sm.config().attn_prob_source;
                const NodeId node = tree.attention(i);
                const auto& sources = tree.tree().node(node).sources;
                if (!src || std::find(sources.begin(), sources.end(), *src) == sources.end()) {
                    throw Error("attn-probs-unavailable",
                                label + ": " + tree.canonical_path(node) + " (" + tree.tree().path_of(node) +
                                    ") exposes no intermediate '" + src.value_or("<unset>") + "'");
                }
                return {node, Port::source, *src, ReturnKind::bare, true, label};
            }
            case HookKind::logits: break;
        }
        throw Error("unknown-hook", label);
    }
    const auto& m = std::get<ModuleHook>(target);
    auto node = tree.resolve(m.path);
    if (!node) throw Error("unknown-hook", label + ": no module at " + m.path);
    const auto& n = tree.tree().node(*node);
    if (m.port == Port::source) {
        if (!sm.attention_probs_enabled()) {
            throw Error("attn-probs-unavailable", label + ": intermediate capture requires attention-probability mode");
        }
        if (std::find(n.sources.begin(), n.sources.end(), m.source) == n.sources.end()) {
            throw Error("unknown-hook", label + ": module exposes no intermediate '" + m.source + "'");
        }
        return {*node, Port::source, m.source, ReturnKind::bare, true, label};
    }
    const ReturnKind expect = m.port == Port::output ? n.returns : ReturnKind::bare;
    return {*node, m.port, {}, expect, false, label};
}

inline Tensor accessor_get(const ModuleValue& v, const BoundHook& hook) {
    if (hook.expect == ReturnKind::bare) {
        if (v.is_tuple()) {
            throw Error("accessor-structure-mismatch", hook.label + ": accessor expects a bare tensor, module returned a tuple of " +
                                                           std::to_string(v.tuple().size()));
        }
        return v.tensor();
    }
    if (v.is_tuple()) return v.tuple().at(0);
    // Tuple-style [0] on a bare tensor selects the first batch row.
    return v.tensor().index_first(0);
}

inline void accessor_set(ModuleValue& v, const BoundHook& hook, Tensor t) {
    auto check = [&](const Tensor& current) {
        if (current.shape() != t.shape()) {
            throw Error("write-shape-mismatch", hook.label + ": target is " + shape_string(current.shape()) +
                                                    ", value is " + shape_string(t.shape()));
        }
    };
    if (hook.expect == ReturnKind::bare) {
        if (v.is_tuple()) {
            throw Error("accessor-structure-mismatch", hook.label + ": accessor expects a bare tensor, module returned a tuple of " +
                                                           std::to_string(v.tuple().size()));
        }
        check(v.tensor());
        v.tensor() = std::move(t);
        return;
    }
    if (v.is_tuple()) {
        check(v.tuple().at(0));
        v.tuple()[0] = std::move(t);
        return;
    }
    check(v.tensor().index_first(0));
    v.tensor().assign_first(0, t);
}

/// Sequence axis of an activation: dim 1 of (batch, seq, d), dim 2 of
/// (batch, heads, q, k). In general rank - 2.
inline std::size_t seq_axis(const Tensor& t) { return t.rank() >= 2 ? t.rank() - 2 : 0; }

/// Copies `value` into `target` over `slice` along the sequence axis.
inline void merge_slice(Tensor& target, const Tensor& value, PositionSlice slice, const std::string& label) {
    const std::size_t axis = seq_axis(target);
    if (target.rank() < 2) throw Error("write-shape-mismatch", label + ": position slices need rank >= 2");
    const std::size_t seq = target.dim(axis);
    if (slice.begin >= slice.end || slice.end > seq) {
        throw Error("invalid-positions", label + ": [" + std::to_string(slice.begin) + ", " + std::to_string(slice.end) +
                                             ") outside sequence of length " + std::to_string(seq));
    }
    Shape expected = target.shape();
    expected[axis] = slice.size();
    if (value.shape() != expected) {
        throw Error("write-shape-mismatch", label + ": slice expects " + shape_string(expected) + ", value is " +
                                                shape_string(value.shape()));
    }
    std::size_t outer = 1;
    for (std::size_t a = 0; a < axis; ++a) outer *= target.dim(a);
    std::size_t inner = 1;
    for (std::size_t a = axis + 1; a < target.rank(); ++a) inner *= target.dim(a);
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t p = 0; p < slice.size(); ++p) {
            const float* src = value.data().data() + (o * slice.size() + p) * inner;
            float* dst = target.data().data() + (o * seq + slice.begin + p) * inner;
            std::copy(src, src + inner, dst);
        }
    }
}

/// Rows of `probs` not summing to 1 within `tol`; returns the worst deviation.
inline double max_row_sum_deviation(const Tensor& probs) {
    double worst = 0.0;
    for (std::size_t r = 0; r < probs.row_count(); ++r) {
        double s = 0.0;
        for (float v : probs.row(r)) s += v;
        worst = std::max(worst, std::fabs(s - 1.0));
    }
    return worst;
}

class PlanHooks final : public ForwardHooks {
public:
    PlanHooks(const StandardizedModel& sm, const InterventionPlan& plan, TraceResult& result)
        : result_(result), skipped_(sm.model().dims().n_layers, false) {
        const std::size_t n_layers = sm.model().dims().n_layers;
        std::vector<std::pair<std::size_t, std::size_t>> ranges;
        std::size_t read_slot = 0;
        for (const auto& action : plan.actions()) {
            if (const auto* skip = std::get_if<SkipAction>(&action)) {
                if (skip->from > skip->to || skip->to > n_layers) {
                    throw Error("invalid-skip-range", "[" + std::to_string(skip->from) + ", " + std::to_string(skip->to) +
                                                          ") with " + std::to_string(n_layers) + " layers");
                }
                for (const auto& [a, b] : ranges) {
                    if (skip->from < b && a < skip->to) throw Error("invalid-skip-range", "overlapping skip ranges");
                }
                ranges.emplace_back(skip->from, skip->to);
                for (std::size_t l = skip->from; l < skip->to; ++l) skipped_[l] = true;
                continue;
            }
            const HookTarget& target = std::visit(
                [](const auto& a) -> const HookTarget& {
                    if constexpr (std::is_same_v<std::decay_t<decltype(a)>, SkipAction>) {
                        throw Error("unknown-hook");
                    } else {
                        return a.hook;
                    }
                },
                action);
            Pending p{bind_hook(sm, target), &action, std::nullopt, false};
            if (std::holds_alternative<ReadAction>(action)) {
                p.capture = read_slot++;
                result_.captures.push_back({p.hook.label, Tensor()});
            }
            pending_.push_back(std::move(p));
        }
        for (std::size_t i = 0; i < pending_.size(); ++i) {
            const auto& h = pending_[i].hook;
            by_site_[{h.node, h.port, h.source}].push_back(i);
        }
    }

    void on(const HookSite& site, ModuleValue& value) override {
        auto it = by_site_.find({site.node, site.port, std::string(site.source)});
        if (it == by_site_.end()) return;
        for (std::size_t idx : it->second) apply(pending_[idx], value);
    }

    bool skip_layer(std::size_t layer) const override { return layer < skipped_.size() && skipped_[layer]; }

    void finish() const {
        for (const auto& p : pending_) {
            if (!p.fired) throw Error("hook-not-reached", p.hook.label + " never executed (inside a skipped layer?)");
        }
    }

private:
    struct Pending {
        BoundHook hook;
        const Action* action;
        std::optional<std::size_t> capture;
        bool fired;
    };

    void apply(Pending& p, ModuleValue& value) {
        p.fired = true;
        if (p.capture) {
            result_.captures[*p.capture].value = accessor_get(value, p.hook);
            return;
        }
        Tensor next;
        if (const auto* w = std::get_if<WriteAction>(p.action)) {
            if (w->positions) {
                next = accessor_get(value, p.hook);
                merge_slice(next, w->value, *w->positions, p.hook.label);
            } else {
                next = w->value;
            }
        } else if (const auto* f = std::get_if<WriteFnAction>(p.action)) {
            const Tensor current = accessor_get(value, p.hook);
            Tensor transformed = f->transform(current);
            if (transformed.shape() != current.shape()) {
                throw Error("write-shape-mismatch", p.hook.label + ": transform changed shape " +
                                                        shape_string(current.shape()) + " -> " +
                                                        shape_string(transformed.shape()));
            }
            if (f->positions) {
                next = current;
                const PositionSlice s = *f->positions;
                Tensor part = slice_positions(transformed, s, p.hook.label);
                merge_slice(next, part, s, p.hook.label);
            } else {
                next = std::move(transformed);
            }
        }
        if (p.hook.probabilities) {
            const double dev = max_row_sum_deviation(next);
            if (dev > 1e-5) {
                result_.warnings.push_back(p.hook.label + ": written attention rows deviate from sum 1 by up to " +
                                           std::to_string(dev) + " (not renormalized)");
            }
        }
        accessor_set(value, p.hook, std::move(next));
    }

    static Tensor slice_positions(const Tensor& t, PositionSlice s, const std::string& label) {
        const std::size_t axis = seq_axis(t);
        if (t.rank() < 2 || s.begin >= s.end || s.end > t.dim(axis)) {
            throw Error("invalid-positions", label);
        }
        Shape shape = t.shape();
        const std::size_t seq = shape[axis];
        shape[axis] = s.size();
        Tensor out(shape);
        std::size_t outer = 1;
        for (std::size_t a = 0; a < axis; ++a) outer *= t.dim(a);
        std::size_t inner = 1;
        for (std::size_t a = axis + 1; a < t.rank(); ++a) inner *= t.dim(a);
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t p = 0; p < s.size(); ++p) {
                const float* src = t.data().data() + (o * seq + s.begin + p) * inner;
                std::copy(src, src + inner, out.data().data() + (o * s.size() + p) * inner);
            }
        }
        return out;
    }

    TraceResult& result_;
    std::vector<bool> skipped_;
    std::vector<Pending> pending_;
    std::map<std::tuple<NodeId, Port, std::string>, std::vector<std::size_t>> by_site_;
};

}  // namespace detail

/// Runs one forward pass applying `plan`. Actions at the same hook run in
/// registration order.
inline TraceResult trace(const StandardizedModel& sm, const TokenBatch& tokens, const InterventionPlan& plan = {}) {
    TraceResult result;
    if (plan.empty()) {
        result.logits = sm.model().forward(tokens);
        return result;
    }
    detail::PlanHooks hooks(sm, plan, result);
    result.logits = sm.model().forward(tokens, &hooks);
    hooks.finish();
    return result;
}

/// Logits with layers [from, to) replaced by the identity.
inline Tensor skip_layers(const StandardizedModel& sm, const TokenBatch& tokens, std::size_t from, std::size_t to) {
    if (from > to || to > sm.n_layers()) {
        throw Error("invalid-skip-range", "[" + std::to_string(from) + ", " + std::to_string(to) + ")");
    }
    InterventionPlan plan;
    plan.skip(from, to);
    return trace(sm, tokens, plan).logits;
}

inline nlohmann::json tensor_summary(const Tensor& t) {
    double sum = 0.0;
    double sq = 0.0;
    float lo = t.size() ? t[0] : 0.0f;
    float hi = lo;
    for (float v : t.data()) {
        sum += v;
        sq += static_cast<double>(v) * v;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const double n = t.size() ? static_cast<double>(t.size()) : 1.0;
    return {{"min", lo}, {"max", hi}, {"mean", sum / n}, {"l2", std::sqrt(sq)}};
}

inline nlohmann::json to_json(const TraceResult& r, bool include_data = false) {
    nlohmann::json captures = nlohmann::json::object();
    std::map<std::string, int> seen;
    for (const auto& c : r.captures) {
        std::string key = c.hook;
        if (const int n = seen[c.hook]++; n > 0) key += "#" + std::to_string(n + 1);
        nlohmann::json entry = {{"shape", c.value.shape()}};
        if (include_data) {
            entry["data"] = c.value.values();
        } else {
            entry["summary"] = tensor_summary(c.value);
        }
        captures[key] = std::move(entry);
    }
    nlohmann::json logits = tensor_summary(r.logits);
    logits["shape"] = r.logits.shape();
    if (r.logits.rank() > 0 && r.logits.row_length() > 0) logits["argmax"] = argmax_rows(r.logits);
    return {{"captures", std::move(captures)}, {"logits_summary", std::move(logits)}, {"warnings", r.warnings}};
}

}  // namespace interp
