#pragma once

// Greedy longest-match tokenizer with a sentencepiece-style word-start marker.
// Spaces in the input become a "▁" prefix on the following word before matching.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "interp/error.hpp"

namespace interp {

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;
using TokenBatch = std::vector<TokenSeq>;

inline constexpr std::string_view kWordStart = "\xE2\x96\x81";  // U+2581
inline constexpr std::string_view kBosToken = "<s>";

inline std::string mark_word_starts(std::string_view text) {
    std::string out;
    out.reserve(text.size() * 2);
    for (char c : text) {
        if (c == ' ') {
            out += kWordStart;
        } else {
            out += c;
        }
    }
    return out;
}

class Vocabulary {
public:
    explicit Vocabulary(std::vector<std::string> entries) : entries_(std::move(entries)) {
        if (entries_.empty() || entries_[0] != kBosToken) {
            throw Error("invalid-vocabulary", "entry 0 must be \"<s>\"");
        }
        for (std::size_t i = 0; i < entries_.size(); ++i) {
            if (entries_[i].empty()) throw Error("invalid-vocabulary", "empty entry at line " + std::to_string(i));
            if (!index_.emplace(entries_[i], static_cast<TokenId>(i)).second) {
                throw Error("invalid-vocabulary", "duplicate entry \"" + entries_[i] + "\"");
            }
            longest_ = std::max(longest_, entries_[i].size());
        }
    }

    /// One token per line; the line number is the id.
    static Vocabulary load(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw Error("io-error", "cannot open vocabulary " + path.string());
        std::vector<std::string> entries;
        std::string line;
        while (std::getline(in, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            entries.push_back(line);
        }
        // A trailing newline does not make an empty final entry.
        while (!entries.empty() && entries.back().empty()) entries.pop_back();
        return Vocabulary(std::move(entries));
    }

    std::size_t size() const noexcept { return entries_.size(); }
    const std::string& token(TokenId id) const {
        if (id < 0 || static_cast<std::size_t>(id) >= entries_.size()) {
            throw Error("unknown-token-id", std::to_string(id));
        }
        return entries_[static_cast<std::size_t>(id)];
    }
    std::optional<TokenId> find(std::string_view piece) const {
        auto it = index_.find(std::string(piece));
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }
    TokenId id(std::string_view piece) const {
        auto found = find(piece);
        if (!found) throw Error("unknown-token", std::string(piece));
        return *found;
    }
    std::size_t longest_entry() const noexcept { return longest_; }
    const std::vector<std::string>& entries() const noexcept { return entries_; }

private:
    std::vector<std::string> entries_;
    std::unordered_map<std::string, TokenId> index_;
    std::size_t longest_ = 0;
};

inline TokenSeq tokenize(const Vocabulary& vocab, std::string_view text) {
    const std::string marked = mark_word_starts(text);
    TokenSeq ids;
    std::size_t pos = 0;
    while (pos < marked.size()) {
        std::size_t len = std::min(vocab.longest_entry(), marked.size() - pos);
        std::optional<TokenId> hit;
        for (; len > 0; --len) {
            hit = vocab.find(std::string_view(marked).substr(pos, len));
            if (hit) break;
        }
        if (!hit) {
            throw Error("unknown-character", "no vocabulary entry covers byte offset " + std::to_string(pos) +
                                                 " of \"" + std::string(text) + "\"");
        }
        ids.push_back(*hit);
        pos += len;
    }
    return ids;
}

inline std::string detokenize(const Vocabulary& vocab, const TokenSeq& ids) {
    std::string joined;
    for (TokenId id : ids) joined += vocab.token(id);
    std::string out;
    out.reserve(joined.size());
    for (std::size_t i = 0; i < joined.size();) {
        if (std::string_view(joined).substr(i, kWordStart.size()) == kWordStart) {
            out += ' ';
            i += kWordStart.size();
        } else {
            out += joined[i++];
        }
    }
    return out;
}

/// First token of `target` spelled with and without a word-start marker.
/// A target that already starts with a space is its own marked spelling.
inline std::set<TokenId> first_tokens(const Vocabulary& vocab, std::string_view target) {
    if (target.empty()) throw Error("empty-target");
    const bool marked = target.front() == ' ' || target.starts_with(kWordStart);
    std::set<TokenId> out;
    out.insert(tokenize(vocab, target).front());
    out.insert(tokenize(vocab, marked ? std::string(target) : " " + std::string(target)).front());
    return out;
}

}  // namespace interp
