#pragma once

// Prompts with per-category tracked tokens. A category's tracked set is the
// union of first tokens of its target strings, with and without a word-start
// marker; its probability is the total next-token mass on that set.

#include <cstddef>
#include <map>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "interp/error.hpp"
#include "interp/kernels.hpp"
#include "interp/model.hpp"
#include "interp/tokenizer.hpp"

namespace interp {

struct Prompt {
    std::string text;
    TokenSeq tokens;
    std::map<std::string, std::set<TokenId>> categories;
    std::size_t vocab_size = 0;
};

using TargetStrings = std::variant<std::string, std::vector<std::string>>;

inline Prompt prompt_from_strings(const std::string& text, const std::map<std::string, TargetStrings>& targets,
                                  const Vocabulary& vocab) {
    Prompt p;
    p.text = text;
    p.tokens = tokenize(vocab, text);
    if (p.tokens.empty()) throw Error("empty-prompt");
    p.vocab_size = vocab.size();
    for (const auto& [category, spec] : targets) {
        std::vector<std::string> strings;
        if (const auto* one = std::get_if<std::string>(&spec)) {
            strings.push_back(*one);
        } else {
            strings = std::get<std::vector<std::string>>(spec);
        }
        if (strings.empty()) throw Error("empty-category", category);
        auto& tracked = p.categories[category];
        for (const auto& target : strings) tracked.merge(first_tokens(vocab, target));
    }
    return p;
}

/// Sum of probabilities of `ids` in one distribution row.
inline double category_mass(std::span<const float> probs, const std::set<TokenId>& ids) {
    double total = 0.0;
    for (TokenId id : ids) total += probs[static_cast<std::size_t>(id)];
    return total;
}

using CategoryProbabilities = std::map<std::string, double>;

/// Next-token category probabilities at each prompt's last position.
/// Prompts of equal length share one batched forward.
inline std::vector<CategoryProbabilities> run_prompts(const Model& model, const std::vector<Prompt>& prompts) {
    if (prompts.empty()) throw Error("empty-batch", "no prompts");
    const std::size_t vocab = model.dims().vocab_size;
    std::map<std::size_t, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < prompts.size(); ++i) {
        const Prompt& p = prompts[i];
        if (p.vocab_size > vocab) {
            throw Error("vocab-mismatch", "prompt vocabulary has " + std::to_string(p.vocab_size) + " entries, model " +
                                              std::to_string(vocab));
        }
        for (TokenId id : p.tokens) {
            if (id < 0 || static_cast<std::size_t>(id) >= vocab) throw Error("vocab-mismatch", "token " + std::to_string(id));
        }
        for (const auto& [_, ids] : p.categories) {
            for (TokenId id : ids) {
                if (id < 0 || static_cast<std::size_t>(id) >= vocab) throw Error("vocab-mismatch", "token " + std::to_string(id));
            }
        }
        groups[p.tokens.size()].push_back(i);
    }

    std::vector<CategoryProbabilities> out(prompts.size());
    for (const auto& [len, members] : groups) {
        TokenBatch batch;
        for (std::size_t i : members) batch.push_back(prompts[i].tokens);
        const Tensor logits = model.forward(batch);
        for (std::size_t b = 0; b < members.size(); ++b) {
            const auto last = logits.row(b * len + len - 1);
            const Tensor probs = softmax_rows(Tensor({vocab}, std::vector<float>(last.begin(), last.end())));
            for (const auto& [name, ids] : prompts[members[b]].categories) {
                out[members[b]][name] = category_mass(probs.data(), ids);
            }
        }
    }
    return out;
}

/// Reads [{"text": ..., "targets": {category: string | [string, ...]}}, ...].
inline std::vector<Prompt> prompts_from_json(const nlohmann::json& j, const Vocabulary& vocab) {
    if (!j.is_array()) throw Error("bad-prompts-file", "expected a JSON array");
    std::vector<Prompt> out;
    for (const auto& rec : j) {
        if (!rec.is_object() || !rec.contains("text") || !rec.at("text").is_string() || !rec.contains("targets") ||
            !rec.at("targets").is_object()) {
            throw Error("bad-prompts-file", "each record needs a string \"text\" and an object \"targets\"");
        }
        std::map<std::string, TargetStrings> targets;
        for (const auto& [category, v] : rec.at("targets").items()) {
            if (v.is_string()) {
                targets[category] = v.get<std::string>();
            } else if (v.is_array()) {
                std::vector<std::string> list;
                for (const auto& e : v) {
                    if (!e.is_string()) throw Error("bad-prompts-file", "targets must be strings");
                    list.push_back(e.get<std::string>());
                }
                targets[category] = std::move(list);
            } else {
                throw Error("bad-prompts-file", "category " + category + " must be a string or a list");
            }
        }
        out.push_back(prompt_from_strings(rec.at("text").get<std::string>(), targets, vocab));
    }
    return out;
}

inline nlohmann::json to_json(const Prompt& p, const CategoryProbabilities& probs) {
    return {{"prompt", p.text}, {"categories", probs}};
}

}  // namespace interp
