#pragma once

// Deterministic dense float kernels. Storage is float32; every reduction
// (sums, means, variances, dot products) accumulates in double and rounds once.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <string_view>
#include <utility>
#include <vector>

#include "interp/error.hpp"
#include "interp/tensor.hpp"

namespace interp {

enum class ActivationKind { gelu_tanh, silu };

inline ActivationKind parse_activation(std::string_view name) {
    if (name == "gelu-tanh") return ActivationKind::gelu_tanh;
    if (name == "silu") return ActivationKind::silu;
    throw Error("unknown-activation", std::string(name));
}

inline std::string_view to_string(ActivationKind kind) {
    return kind == ActivationKind::gelu_tanh ? "gelu-tanh" : "silu";
}

/// Softmax over the last axis, max-subtracted.
inline Tensor softmax_rows(const Tensor& x) {
    if (x.rank() == 0 || x.row_length() == 0) throw Error("empty-axis");
    Tensor out(x.shape());
    const std::size_t rows = x.row_count();
    for (std::size_t r = 0; r < rows; ++r) {
        const auto in = x.row(r);
        auto dst = out.row(r);
        const double peak = *std::max_element(in.begin(), in.end());
        std::vector<double> e(in.size());
        double total = 0.0;
        for (std::size_t i = 0; i < in.size(); ++i) {
            e[i] = std::exp(static_cast<double>(in[i]) - peak);
            total += e[i];
        }
        for (std::size_t i = 0; i < in.size(); ++i) dst[i] = static_cast<float>(e[i] / total);
    }
    return out;
}

inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps) {
    const std::size_t n = x.row_length();
    if (x.rank() == 0 || gain.shape() != Shape{n} || bias.shape() != Shape{n}) {
        throw Error("shape-mismatch", "layer_norm affine parameters must match the last axis");
    }
    if (!(eps > 0.0f)) throw Error("invalid-eps");
    Tensor out(x.shape());
    for (std::size_t r = 0; r < x.row_count(); ++r) {
        const auto in = x.row(r);
        auto dst = out.row(r);
        double mean = 0.0;
        for (float v : in) mean += v;
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (float v : in) var += (v - mean) * (v - mean);
        var /= static_cast<double>(n);
        const double inv = 1.0 / std::sqrt(var + eps);
        for (std::size_t i = 0; i < n; ++i) {
            dst[i] = static_cast<float>((in[i] - mean) * inv * gain[i] + bias[i]);
        }
    }
    return out;
}

/// x / sqrt(mean(x^2) + eps) * gain. eps may be zero for nonzero rows.
inline Tensor rms_norm(const Tensor& x, const Tensor& gain, float eps) {
    const std::size_t n = x.row_length();
    if (x.rank() == 0 || gain.shape() != Shape{n}) {
        throw Error("shape-mismatch", "rms_norm gain must match the last axis");
    }
    if (eps < 0.0f) throw Error("invalid-eps");
    Tensor out(x.shape());
    for (std::size_t r = 0; r < x.row_count(); ++r) {
        const auto in = x.row(r);
        auto dst = out.row(r);
        double ms = 0.0;
        for (float v : in) ms += static_cast<double>(v) * v;
        ms /= static_cast<double>(n);
        const double inv = 1.0 / std::sqrt(ms + eps);
        for (std::size_t i = 0; i < n; ++i) dst[i] = static_cast<float>(in[i] * inv * gain[i]);
    }
    return out;
}

inline float gelu_tanh(float x) {
    const double v = x;
    const double c = std::sqrt(2.0 / std::numbers::pi);
    return static_cast<float>(0.5 * v * (1.0 + std::tanh(c * (v + 0.044715 * v * v * v))));
}

inline float silu(float x) {
    const double v = x;
    return static_cast<float>(v / (1.0 + std::exp(-v)));
}

inline Tensor activation(ActivationKind kind, const Tensor& x) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = kind == ActivationKind::gelu_tanh ? gelu_tanh(x[i]) : silu(x[i]);
    }
    return out;
}

inline Tensor activation(std::string_view kind, const Tensor& x) { return activation(parse_activation(kind), x); }

/// x (..., in) times weight (in, out) plus optional bias (out).
inline Tensor linear(const Tensor& x, const Tensor& weight, const Tensor* bias = nullptr) {
    if (weight.rank() != 2 || x.rank() == 0 || x.row_length() != weight.dim(0)) {
        throw Error("shape-mismatch", "linear: input " + shape_string(x.shape()) + " vs weight " +
                                          shape_string(weight.shape()));
    }
    const std::size_t in = weight.dim(0);
    const std::size_t outn = weight.dim(1);
    if (bias && bias->shape() != Shape{outn}) throw Error("shape-mismatch", "linear: bias");
    Shape shape = x.shape();
    shape.back() = outn;
    Tensor out(shape);
    std::vector<double> acc(outn);
    for (std::size_t r = 0; r < x.row_count(); ++r) {
        const auto src = x.row(r);
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t k = 0; k < in; ++k) {
            const double a = src[k];
            const float* w = weight.data().data() + k * outn;
            for (std::size_t j = 0; j < outn; ++j) acc[j] += a * w[j];
        }
        auto dst = out.row(r);
        for (std::size_t j = 0; j < outn; ++j) {
            dst[j] = static_cast<float>(bias ? acc[j] + (*bias)[j] : acc[j]);
        }
    }
    return out;
}

/// x (..., d) against each row of table (n, d): out[..., i] = <x, table[i]>.
inline Tensor project_rows(const Tensor& x, const Tensor& table) {
    if (table.rank() != 2 || x.rank() == 0 || x.row_length() != table.dim(1)) {
        throw Error("shape-mismatch", "project_rows: input " + shape_string(x.shape()) + " vs table " +
                                          shape_string(table.shape()));
    }
    const std::size_t n = table.dim(0);
    Shape shape = x.shape();
    shape.back() = n;
    Tensor out(shape);
    for (std::size_t r = 0; r < x.row_count(); ++r) {
        const auto src = x.row(r);
        auto dst = out.row(r);
        for (std::size_t i = 0; i < n; ++i) {
            const auto w = table.row(i);
            double acc = 0.0;
            for (std::size_t k = 0; k < src.size(); ++k) acc += static_cast<double>(src[k]) * w[k];
            dst[i] = static_cast<float>(acc);
        }
    }
    return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw Error("shape-mismatch", shape_string(a.shape()) + " + " + shape_string(b.shape()));
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
    return out;
}

inline Tensor multiply(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw Error("shape-mismatch", shape_string(a.shape()) + " * " + shape_string(b.shape()));
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
    return out;
}

/// Index of the largest element of each last-axis row (first wins on ties).
inline std::vector<std::size_t> argmax_rows(const Tensor& x) {
    if (x.rank() == 0 || x.row_length() == 0) throw Error("empty-axis");
    std::vector<std::size_t> out(x.row_count());
    for (std::size_t r = 0; r < out.size(); ++r) {
        const auto row = x.row(r);
        out[r] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    }
    return out;
}

/// Top-k (index, value) pairs of one row, descending by value, ties by lower index.
inline std::vector<std::pair<std::size_t, float>> top_k(std::span<const float> row, std::size_t k) {
    std::vector<std::pair<std::size_t, float>> items(row.size());
    for (std::size_t i = 0; i < row.size(); ++i) items[i] = {i, row[i]};
    k = std::min(k, items.size());
    std::partial_sort(items.begin(), items.begin() + static_cast<std::ptrdiff_t>(k), items.end(),
                      [](const auto& a, const auto& b) { return a.second != b.second ? a.second > b.second : a.first < b.first; });
    items.resize(k);
    return items;
}

}  // namespace interp
