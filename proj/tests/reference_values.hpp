#pragma once
// Values frozen from tests/oracles/reference.py, which re-implements the PRNG,
// tokenizer and forward pass independently (float64, plain loops).
// tests/oracles/reference_expected.json holds the full script output.

#include <bit>
#include <cstddef>
#include <cstdint>

#include "interp/tensor.hpp"

namespace reference {

inline std::uint64_t fnv_of_bits(const interp::Tensor& t) {
    std::uint64_t h = 14695981039346656037ull;
    for (float v : t.data()) {
        const auto bits = std::bit_cast<std::uint32_t>(v);
        for (int b = 0; b < 4; ++b) {
            h ^= (bits >> (8 * b)) & 0xFFu;
            h *= 1099511628211ull;
        }
    }
    return h;
}

struct Stream {
    std::uint64_t seed;
    const char* dialect;
    const char* path;
    std::uint32_t first4[4];
    std::uint64_t digest;
};

inline const Stream kStreams[] = {
    {42, "alpha", "transformer.wte.weight", {0x3d9147da, 0xbd9a4a3e, 0x3d5c08c0, 0xbc27beb3}, 0xf378f02bae360158ull},
    {42, "beta", "model.layers[1].mlp.down_proj.weight", {0x3d614376, 0x3be3af4d, 0xbd0da503, 0x3dc6e650},
     0xd9aa980dfbdb14c9ull},
    {42, "gamma", "lm_head.weight", {0x3ce2d4e0, 0x3dbed752, 0x3d60c7c0, 0x3d248c7d}, 0x366be1687a8587a5ull},
    {7, "alpha", "transformer.wte.weight", {0x3daa066b, 0x3ca897f3, 0x3cfe5c73, 0x3d395c30}, 0x19e796ddd3a5e5cdull},
    {7, "beta-legacy", "model.layers[1].mlp.down_proj.weight", {0x3dca1a50, 0xbd9d36e3, 0xbd89f3e2, 0x3d05cd96},
     0xf85df6a7b69ffd8full},
    {7, "beta", "lm_head.weight", {0xbc8bc88d, 0x3d8c3945, 0xbc3b4cda, 0xbdad152b}, 0xa4cbfb41eb889a1eull},
};

struct ForwardGolden {
    const char* dialect;
    std::size_t argmax[5];
    double last_logits[5];
    std::size_t lens1_argmax;
    double lens1[5];
    double target;
    double fake;
};

inline const ForwardGolden kForward[] = {
    {"alpha",
     {74, 59, 59, 74, 112},
     {-0.008785797852361579, -0.006301115048350587, 0.015610719273011768, 0.0013464049052920588, -0.01927000624866573},
     80,
     {0.008024424712582284, 0.008025272018726147, 0.00812285749122677, 0.008039191205800706, 0.008000740355763652},
     0.0161339296897667,
     0.03158346978232841},
    {"beta",
     {63, 41, 41, 34, 48},
     {-0.00624762541689598, -0.007784242054764657, 0.012117741189598652, -0.0033169307563097137,
      -0.004510913374748534},
     48,
     {0.008009968995734106, 0.007998113835033082, 0.008160470868876578, 0.008033598557064783, 0.008030619279648267},
     0.016146477325571982,
     0.03212391232085521},
};


}  // namespace reference
