#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include <gtest/gtest.h>

#include "interp/interp.hpp"

namespace testutil {

inline const std::filesystem::path kFixtures = INTERP_TEST_FIXTURES_DIR;

inline const interp::Vocabulary& vocab() {
    static const interp::Vocabulary v = interp::Vocabulary::load(kFixtures / "vocab.txt");
    return v;
}

inline const char* const kDialects[] = {"alpha", "beta", "beta-legacy", "gamma"};

inline interp::Model model(std::string_view dialect, std::uint64_t seed = 42) {
    return interp::build_model(dialect, interp::ModelDims::desk(vocab().size()), seed);
}

inline interp::StandardizedModel standardized(std::string_view dialect, bool probs = false, std::uint64_t seed = 42) {
    interp::Model m = model(dialect, seed);
    const auto cfg = interp::builtin_config(m.dialect_id());
    return interp::StandardizedModel(std::move(m), cfg, probs);
}

inline interp::TokenSeq france() { return interp::tokenize(vocab(), "The capital of France is"); }
inline interp::TokenSeq england() { return interp::tokenize(vocab(), "The capital of England is"); }

// Max |a - b| over positions [0, upto) of (1, seq, vocab) logits.
inline float prefix_diff(const interp::Tensor& a, const interp::Tensor& b, std::size_t upto) {
    float worst = 0.0f;
    for (std::size_t r = 0; r < upto; ++r) {
        const auto x = a.row(r);
        const auto y = b.row(r);
        for (std::size_t i = 0; i < x.size(); ++i) worst = std::max(worst, std::fabs(x[i] - y[i]));
    }
    return worst;
}

}  // namespace testutil

#define EXPECT_ERROR_CODE(stmt, expected_code)                                       \
    do {                                                                             \
        try {                                                                        \
            stmt;                                                                    \
            ADD_FAILURE() << "expected interp::Error " << (expected_code);           \
        } catch (const interp::Error& e_) {                                          \
            EXPECT_EQ(e_.code(), (expected_code)) << e_.what();                      \
        }                                                                            \
    } while (0)
