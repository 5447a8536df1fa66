#pragma once

// Built-in interpretability methods, written only against the standardized
// accessors so they behave identically on every dialect.

#include <cstddef>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "interp/error.hpp"
#include "interp/kernels.hpp"
#include "interp/tokenizer.hpp"
#include "interp/trace.hpp"

namespace interp {

struct LogitLensResult {
    /// (n_layers + 1, seq, vocab). Row 0 is the residual stream entering
    /// layer 0 (embeddings); row L is the output of layer L - 1.
    Tensor probs;

    std::size_t n_rows() const { return probs.dim(0); }
    std::size_t seq_len() const { return probs.dim(1); }
};

/// Projects every intermediate residual state through the model's final norm
/// and unembedding.
inline LogitLensResult logit_lens(const StandardizedModel& sm, const TokenSeq& tokens) {
    InterventionPlan plan;
    plan.read(HookPoint::layers_input(0));
    for (std::size_t i = 0; i < sm.n_layers(); ++i) plan.read(HookPoint::layers_output(i));
    const TraceResult r = trace(sm, {tokens}, plan);

    const std::size_t seq = tokens.size();
    const std::size_t vocab = sm.model().dims().vocab_size;
    LogitLensResult out{Tensor({sm.n_layers() + 1, seq, vocab})};
    for (std::size_t l = 0; l < r.captures.size(); ++l) {
        const Tensor& hidden = r.capture(l);
        if (hidden.shape() != Shape{1, seq, sm.d_model()}) {
            throw Error("write-shape-mismatch", r.captures[l].hook + " has shape " + shape_string(hidden.shape()));
        }
        const Tensor probs = softmax_rows(sm.model().unembed(sm.model().apply_final_norm(hidden)));
        std::copy(probs.data().begin(), probs.data().end(), out.probs.data().begin() + static_cast<std::ptrdiff_t>(l * seq * vocab));
    }
    return out;
}

struct TokenProbability {
    TokenId id;
    float p;
};

struct LensCell {
    std::size_t layer;
    std::size_t position;
    std::vector<TokenProbability> top;
};

inline std::vector<LensCell> lens_top_k(const LogitLensResult& lens, std::size_t k) {
    std::vector<LensCell> cells;
    for (std::size_t l = 0; l < lens.n_rows(); ++l) {
        for (std::size_t s = 0; s < lens.seq_len(); ++s) {
            LensCell cell{l, s, {}};
            for (const auto& [id, p] : top_k(lens.probs.row(l * lens.seq_len() + s), k)) {
                cell.top.push_back({static_cast<TokenId>(id), p});
            }
            cells.push_back(std::move(cell));
        }
    }
    return cells;
}

inline nlohmann::json to_json(const std::vector<LensCell>& cells, const Vocabulary& vocab) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& c : cells) {
        nlohmann::json top = nlohmann::json::array();
        for (const auto& t : c.top) top.push_back({{"token", vocab.token(t.id)}, {"id", t.id}, {"p", t.p}});
        rows.push_back({{"layer", c.layer}, {"position", c.position}, {"top", std::move(top)}});
    }
    return rows;
}

/// One side of a patch: which model and prompt, and where in it.
struct PatchSite {
    const StandardizedModel& model;
    TokenSeq tokens;
    std::size_t layer;
    std::size_t position;
};

/// Copies the residual vector at (source.layer output, source.position) into
/// the target run at (target.layer output, target.position) and returns the
/// target logits.
inline Tensor patchscope(const PatchSite& source, const PatchSite& target) {
    if (source.model.d_model() != target.model.d_model()) {
        throw Error("hidden-size-mismatch", std::to_string(source.model.d_model()) + " vs " +
                                                std::to_string(target.model.d_model()));
    }
    if (source.position >= source.tokens.size() || target.position >= target.tokens.size()) {
        throw Error("invalid-positions", "patch position outside prompt");
    }
    InterventionPlan read_plan;
    read_plan.read(HookPoint::layers_output(source.layer));
    const TraceResult src = trace(source.model, {source.tokens}, read_plan);
    const Tensor& hidden = src.capture(0);
    const std::size_t d = source.model.d_model();
    if (hidden.shape() != Shape{1, source.tokens.size(), d}) {
        throw Error("write-shape-mismatch", "source capture has shape " + shape_string(hidden.shape()));
    }
    const auto row = hidden.row(source.position);
    Tensor vec({1, 1, d}, std::vector<float>(row.begin(), row.end()));

    InterventionPlan write_plan;
    write_plan.write(HookPoint::layers_output(target.layer), std::move(vec), PositionSlice::at(target.position));
    return trace(target.model, {target.tokens}, write_plan).logits;
}

/// Adds scale * direction to the residual stream after each listed layer,
/// at all positions or only `positions`.
inline Tensor steer(const StandardizedModel& sm, const TokenBatch& tokens, const std::set<std::size_t>& layers,
                    const Tensor& direction, float scale, std::optional<PositionSlice> positions = std::nullopt) {
    if (direction.size() != sm.d_model() || direction.rank() != 1) {
        throw Error("steer-dim-mismatch", "direction " + shape_string(direction.shape()) + ", d_model " +
                                              std::to_string(sm.d_model()));
    }
    InterventionPlan plan;
    for (std::size_t layer : layers) {
        plan.write_fn(
            HookPoint::layers_output(layer),
            [direction, scale](const Tensor& h) {
                Tensor out = h;
                const std::size_t d = direction.size();
                for (std::size_t r = 0; r < out.row_count(); ++r) {
                    auto row = out.row(r);
                    for (std::size_t c = 0; c < d; ++c) row[c] += scale * direction[c];
                }
                return out;
            },
            positions);
    }
    return trace(sm, tokens, plan).logits;
}

}  // namespace interp
