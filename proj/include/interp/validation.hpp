#pragma once

// Self-checks run when a model is standardized, and on demand:
//
//   module-naming                 required standard paths resolve, layers contiguous, attention != mlp
//   layer-io-shapes               layers_{input,output}[i] are (batch, seq, d_model)
//   attention-io-shapes           attentions_{input,output}[i] are (batch, seq, d_model)
//   mlp-io-shapes                 mlps_{input,output}[i] are (batch, seq, d_model)
//   attention-prob-shapes         attention_probabilities[i] is (batch, heads, seq, seq)      (skip if capture off)
//   attention-prob-normalization  every attention row sums to 1 within 1e-6                  (skip if capture off)
//   intervention-effect           zeroing layers_output[0] moves the logits by more than 1e-4
//   layer-skip-causality          with layer 0 skipped, a last-position edit leaves earlier logits unchanged
//
// Plus fault injection for exercising the checks themselves.

#include <cmath>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "interp/error.hpp"
#include "interp/model_io.hpp"
#include "interp/rename.hpp"
#include "interp/trace.hpp"

namespace interp {

enum class CheckStatus { pass, fail, skip };

inline std::string_view to_string(CheckStatus s) {
    switch (s) {
        case CheckStatus::pass: return "pass";
        case CheckStatus::fail: return "fail";
        case CheckStatus::skip: return "skip";
    }
    return "?";
}

struct CheckResult {
    std::string id;
    CheckStatus status = CheckStatus::pass;
    std::string message;
    nlohmann::json values = nlohmann::json::object();
};

struct ValidationReport {
    nlohmann::json model = nlohmann::json::object();
    std::vector<CheckResult> checks;

    bool pass() const {
        return std::none_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.status == CheckStatus::fail; });
    }

    const CheckResult& check(std::string_view id) const {
        for (const auto& c : checks) {
            if (c.id == id) return c;
        }
        throw Error("unknown-check", std::string(id));
    }

    std::vector<std::string> failed() const {
        std::vector<std::string> out;
        for (const auto& c : checks) {
            if (c.status == CheckStatus::fail) out.push_back(c.id);
        }
        return out;
    }
};

inline constexpr std::size_t kProbeLength = 6;
inline constexpr double kProbRowTolerance = 1e-6;
inline constexpr double kInterventionEffectThreshold = 1e-4;
inline constexpr double kCausalityTolerance = 1e-6;

/// Fixed probe prompt; independent of any vocabulary file.
inline TokenSeq probe_tokens(std::size_t vocab_size) {
    TokenSeq t;
    for (std::size_t i = 0; i < kProbeLength; ++i) t.push_back(static_cast<TokenId>((3 + 7 * i) % vocab_size));
    return t;
}

namespace detail {

inline std::string structure_note(ReturnKind expected, ReturnKind native) {
    if (expected == native) return {};
    return "; accessor expects " + std::string(to_string(expected)) + ", module returns " + std::string(to_string(native));
}

/// Reads each hook in its own trace so one broken accessor does not hide
/// the state of the others.
inline CheckResult shape_check(const StandardizedModel& sm, const TokenBatch& probe, std::string id,
                               const std::vector<std::pair<HookPoint, ReturnKind>>& hooks, const Shape& expected) {
    CheckResult r{std::move(id), CheckStatus::pass, {}, nlohmann::json::object()};
    std::vector<std::string> problems;
    nlohmann::json found = nlohmann::json::object();
    for (const auto& [hook, native] : hooks) {
        const std::string label = to_string(HookTarget(hook));
        try {
            InterventionPlan plan;
            plan.read(hook);
            const Tensor t = trace(sm, probe, plan).capture(0);
            found[label] = t.shape();
            if (t.shape() != expected) {
                ReturnKind expect = ReturnKind::bare;
                if (hook.kind == HookKind::layers_output) expect = sm.accessors().layer_output;
                if (hook.kind == HookKind::attentions_output) expect = sm.accessors().attention_output;
                if (hook.kind == HookKind::mlps_output) expect = sm.accessors().mlp_output;
                problems.push_back(label + ": expected " + shape_string(expected) + ", found " + shape_string(t.shape()) +
                                   structure_note(expect, native));
            } else if (!t.all_finite()) {
                problems.push_back(label + ": non-finite values");
            }
        } catch (const Error& e) {
            found[label] = e.code();
            problems.push_back(e.what());
        }
    }
    r.values = {{"expected", expected}, {"found", found}};
    if (!problems.empty()) {
        r.status = CheckStatus::fail;
        for (std::size_t i = 0; i < problems.size(); ++i) r.message += (i ? "; " : "") + problems[i];
    } else {
        r.message = std::to_string(hooks.size()) + " hooks have shape " + shape_string(expected);
    }
    return r;
}

}  // namespace detail

inline ValidationReport run_validation(const StandardizedModel& sm) {
    ValidationReport report;
    const Model& model = sm.model();
    const ModelDims& dims = model.dims();
    report.model = {{"dialect", model.dialect().name},
                    {"dims", dims_to_json(dims)},
                    {"seed", model.seed()},
                    {"attention_probs", sm.attention_probs_enabled()},
                    {"faults", sm.faults()}};

    const TokenBatch probe{probe_tokens(dims.vocab_size)};
    const std::size_t seq = kProbeLength;
    const std::size_t n = sm.n_layers();
    const auto& tree = sm.tree();
    const Shape hidden{1, seq, dims.d_model};

    {
        const LayoutReport layout = validate_layout(tree);
        CheckResult c{"module-naming", layout.pass ? CheckStatus::pass : CheckStatus::fail, {}, nlohmann::json::object()};
        nlohmann::json families = nlohmann::json::object();
        for (const auto& e : layout.entries) families[e.family] = e.found ? "found" : "missing";
        c.values = {{"families", families}, {"layers", n}, {"aliases", tree.alias_count()}};
        if (layout.pass) {
            c.message = std::to_string(layout.entries.size()) + " required path families found, " + std::to_string(n) +
                        " contiguous layers";
        } else {
            for (std::size_t i = 0; i < layout.failures.size(); ++i) c.message += (i ? "; " : "") + layout.failures[i];
        }
        report.checks.push_back(std::move(c));
    }

    std::vector<std::pair<HookPoint, ReturnKind>> layer_hooks, attn_hooks, mlp_hooks;
    for (std::size_t i = 0; i < n; ++i) {
        layer_hooks.push_back({HookPoint::layers_input(i), ReturnKind::bare});
        layer_hooks.push_back({HookPoint::layers_output(i), tree.tree().node(tree.layer(i)).returns});
        attn_hooks.push_back({HookPoint::attentions_input(i), ReturnKind::bare});
        attn_hooks.push_back({HookPoint::attentions_output(i), tree.tree().node(tree.attention(i)).returns});
        mlp_hooks.push_back({HookPoint::mlps_input(i), ReturnKind::bare});
        mlp_hooks.push_back({HookPoint::mlps_output(i), tree.tree().node(tree.mlp(i)).returns});
    }
    report.checks.push_back(detail::shape_check(sm, probe, "layer-io-shapes", layer_hooks, hidden));
    report.checks.push_back(detail::shape_check(sm, probe, "attention-io-shapes", attn_hooks, hidden));
    report.checks.push_back(detail::shape_check(sm, probe, "mlp-io-shapes", mlp_hooks, hidden));

    if (!sm.attention_probs_enabled()) {
        const std::string why = "attention-probability capture disabled";
        report.checks.push_back({"attention-prob-shapes", CheckStatus::skip, why, nlohmann::json::object()});
        report.checks.push_back({"attention-prob-normalization", CheckStatus::skip, why, nlohmann::json::object()});
    } else {
        std::vector<std::pair<HookPoint, ReturnKind>> prob_hooks;
        for (std::size_t i = 0; i < n; ++i) prob_hooks.push_back({HookPoint::attention_probabilities(i), ReturnKind::bare});
        report.checks.push_back(
            detail::shape_check(sm, probe, "attention-prob-shapes", prob_hooks, Shape{1, dims.n_heads, seq, seq}));

        CheckResult c{"attention-prob-normalization", CheckStatus::pass, {}, nlohmann::json::object()};
        double worst = 0.0;
        double min_sum = INFINITY;
        double max_sum = -INFINITY;
        std::vector<std::string> problems;
        for (std::size_t i = 0; i < n; ++i) {
            try {
                InterventionPlan plan;
                plan.read(HookPoint::attention_probabilities(i));
                const Tensor probs = trace(sm, probe, plan).capture(0);
                double layer_worst = 0.0;
                double layer_sum = 1.0;
                for (std::size_t r = 0; r < probs.row_count(); ++r) {
                    double s = 0.0;
                    for (float v : probs.row(r)) s += v;
                    min_sum = std::min(min_sum, s);
                    max_sum = std::max(max_sum, s);
                    if (std::fabs(s - 1.0) > layer_worst) {
                        layer_worst = std::fabs(s - 1.0);
                        layer_sum = s;
                    }
                }
                worst = std::max(worst, layer_worst);
                if (layer_worst > kProbRowTolerance) {
                    problems.push_back("attention_probabilities[" + std::to_string(i) + "]: row sum " +
                                       std::to_string(layer_sum) + " deviates from 1 by " + std::to_string(layer_worst));
                }
            } catch (const Error& e) {
                problems.push_back(e.what());
            }
        }
        c.values = {{"max_deviation", worst}, {"tolerance", kProbRowTolerance}};
        if (std::isfinite(min_sum)) {
            c.values["min_row_sum"] = min_sum;
            c.values["max_row_sum"] = max_sum;
        }
        if (problems.empty()) {
            c.message = "all rows sum to 1 within " + std::to_string(kProbRowTolerance);
        } else {
            c.status = CheckStatus::fail;
            for (std::size_t i = 0; i < problems.size(); ++i) c.message += (i ? "; " : "") + problems[i];
        }
        report.checks.push_back(std::move(c));
    }

    {
        CheckResult c{"intervention-effect", CheckStatus::pass, {}, nlohmann::json::object()};
        try {
            const Tensor base = trace(sm, probe).logits;
            InterventionPlan plan;
            plan.write(HookPoint::layers_output(0), Tensor(hidden));
            const Tensor zeroed = trace(sm, probe, plan).logits;
            const double diff = max_abs_diff(base, zeroed);
            c.values = {{"max_abs_diff", diff}, {"threshold", kInterventionEffectThreshold}};
            if (diff > kInterventionEffectThreshold) {
                c.message = "zeroing layers_output[0] changed logits by " + std::to_string(diff);
            } else {
                c.status = CheckStatus::fail;
                c.message = "layers_output[0]: zeroing changed logits by only " + std::to_string(diff);
            }
        } catch (const Error& e) {
            c.status = CheckStatus::fail;
            c.message = e.what();
        }
        report.checks.push_back(std::move(c));
    }

    {
        CheckResult c{"layer-skip-causality", CheckStatus::pass, {}, nlohmann::json::object()};
        try {
            const std::size_t last_layer = n - 1;
            InterventionPlan skip_only;
            skip_only.skip(0, 1);
            const Tensor skipped = trace(sm, probe, skip_only).logits;

            InterventionPlan skip_write;
            skip_write.skip(0, 1);
            skip_write.write(HookPoint::layers_output(last_layer), Tensor({1, 1, dims.d_model}),
                             PositionSlice::at(seq - 1));
            const Tensor edited = trace(sm, probe, skip_write).logits;

            TokenBatch changed = probe;
            changed[0][seq - 1] = static_cast<TokenId>((changed[0][seq - 1] + 1) % static_cast<TokenId>(dims.vocab_size));
            const Tensor token_edited = trace(sm, changed, skip_only).logits;

            const Shape logits_shape{1, seq, dims.vocab_size};
            double prefix = 0.0;
            for (const Tensor* other : {&edited, &token_edited}) {
                if (other->shape() != logits_shape) continue;
                for (std::size_t p = 0; p + 1 < seq; ++p) {
                    const auto a = skipped.row(p);
                    const auto b = other->row(p);
                    for (std::size_t v = 0; v < a.size(); ++v) prefix = std::max(prefix, std::fabs(double(a[v]) - b[v]));
                }
            }
            c.values = {{"max_prefix_diff", prefix}, {"tolerance", kCausalityTolerance}, {"skipped", {0, 1}}};
            std::vector<std::string> problems;
            for (const Tensor* t : {&skipped, &edited, &token_edited}) {
                if (t->shape() != logits_shape) {
                    problems.push_back("logits shape " + shape_string(t->shape()) + " != " + shape_string(logits_shape));
                    break;
                }
            }
            if (prefix > kCausalityTolerance) {
                problems.push_back("layers_output[" + std::to_string(last_layer) +
                                   "]: edit at the last position changed earlier logits by " + std::to_string(prefix));
            }
            if (problems.empty()) {
                c.message = "with layer 0 skipped, last-position edits leave earlier logits unchanged";
            } else {
                c.status = CheckStatus::fail;
                for (std::size_t i = 0; i < problems.size(); ++i) c.message += (i ? "; " : "") + problems[i];
            }
        } catch (const Error& e) {
            c.status = CheckStatus::fail;
            c.message = e.what();
        }
        report.checks.push_back(std::move(c));
    }
    return report;
}

inline nlohmann::json to_json(const ValidationReport& r) {
    nlohmann::json checks = nlohmann::json::array();
    for (const auto& c : r.checks) {
        checks.push_back({{"id", c.id}, {"status", to_string(c.status)}, {"message", c.message}, {"values", c.values}});
    }
    return {{"model", r.model}, {"checks", std::move(checks)}, {"overall", r.pass() ? "pass" : "fail"}};
}

enum class Fault { tuple_convention_flip, misrenamed_attn, denormalized_attn_probs };

inline std::string_view to_string(Fault f) {
    switch (f) {
        case Fault::tuple_convention_flip: return "tuple-convention-flip";
        case Fault::misrenamed_attn: return "misrenamed-attn";
        case Fault::denormalized_attn_probs: return "denormalized-attn-probs";
    }
    return "?";
}

inline Fault parse_fault(std::string_view name) {
    for (Fault f : {Fault::tuple_convention_flip, Fault::misrenamed_attn, Fault::denormalized_attn_probs}) {
        if (to_string(f) == name) return f;
    }
    throw Error("unknown-fault", std::string(name));
}

/// Returns a corrupted copy of `sm`:
///   tuple-convention-flip    layer accessors expect the opposite return structure
///   misrenamed-attn          attn_name bound to the MLP module
///   denormalized-attn-probs  attention rows scaled by 1.1 (enables capture so it is observable)
inline StandardizedModel inject_fault(const StandardizedModel& sm, Fault fault) {
    switch (fault) {
        case Fault::tuple_convention_flip: {
            AccessorConfig acc = sm.accessors();
            acc.layer_output = acc.layer_output == ReturnKind::bare ? ReturnKind::tuple : ReturnKind::bare;
            return sm.with_accessors(acc).with_fault_label(std::string(to_string(fault)));
        }
        case Fault::misrenamed_attn: {
            RenameConfig cfg = sm.config();
            cfg.attn_name = cfg.mlp_name;
            StandardizedModel out(sm.shared_model(), cfg, sm.attention_probs_enabled());
            for (const auto& f : sm.faults()) out = out.with_fault_label(f);
            return out.with_accessors(sm.accessors()).with_fault_label(std::string(to_string(fault)));
        }
        case Fault::denormalized_attn_probs: {
            ModelFaults mf = sm.model().faults();
            mf.attn_prob_scale = 1.1f;
            StandardizedModel out(std::make_shared<const Model>(sm.model().with_faults(mf)), sm.config(), true);
            for (const auto& f : sm.faults()) out = out.with_fault_label(f);
            return out.with_accessors(sm.accessors()).with_fault_label(std::string(to_string(fault)));
        }
    }
    throw Error("unknown-fault");
}

struct LoadOptions {
    bool enable_attention_probs = false;
    bool validate = true;
};

struct LoadedModel {
    StandardizedModel model;
    std::optional<ValidationReport> report;
};

/// Standardizes `model` and, unless disabled, validates it immediately.
inline LoadedModel load_standardized(std::shared_ptr<const Model> model, const RenameConfig& cfg, LoadOptions opts = {}) {
    LoadedModel out{StandardizedModel(std::move(model), cfg, opts.enable_attention_probs), std::nullopt};
    if (opts.validate) out.report = run_validation(out.model);
    return out;
}

inline LoadedModel load_standardized(Model model, const RenameConfig& cfg, LoadOptions opts = {}) {
    return load_standardized(std::make_shared<const Model>(std::move(model)), cfg, opts);
}

/// Standardizes with the dialect's built-in rename config.
inline LoadedModel load_standardized(Model model, LoadOptions opts = {}) {
    const RenameConfig cfg = builtin_config(model.dialect_id());
    return load_standardized(std::move(model), cfg, opts);
}

}  // namespace interp
