#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "interp/error.hpp"

namespace interp {

using Shape = std::vector<std::size_t>;

inline std::size_t element_count(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    if (shape.size() == 1) os << ',';
    os << ')';
    return os.str();
}

/// Dense row-major float32 array. Value type; copies are deep.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(element_count(shape_), 0.0f) {}

    Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (element_count(shape_) != data_.size()) {
            throw Error("shape-mismatch", "shape " + shape_string(shape_) + " holds " +
                                              std::to_string(element_count(shape_)) + " elements, got " +
                                              std::to_string(data_.size()));
        }
    }

    static Tensor filled(Shape shape, float value) {
        Tensor t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), value);
        return t;
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return shape_.empty(); }

    /// Size of the last axis (the "row" length for row-wise kernels).
    std::size_t row_length() const { return shape_.empty() ? 1 : shape_.back(); }
    std::size_t row_count() const {
        const std::size_t len = row_length();
        return len == 0 ? 0 : data_.size() / len;
    }

    std::span<const float> data() const noexcept { return data_; }
    std::span<float> data() noexcept { return data_; }
    const std::vector<float>& values() const noexcept { return data_; }

    float operator[](std::size_t i) const { return data_[i]; }
    float& operator[](std::size_t i) { return data_[i]; }

    std::span<const float> row(std::size_t r) const {
        return std::span<const float>(data_).subspan(r * row_length(), row_length());
    }
    std::span<float> row(std::size_t r) { return std::span<float>(data_).subspan(r * row_length(), row_length()); }

    float at(std::initializer_list<std::size_t> index) const { return data_[offset(index)]; }
    float& at(std::initializer_list<std::size_t> index) { return data_[offset(index)]; }

    bool all_finite() const {
        for (float v : data_) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    /// Same data viewed under a new shape with equal element count.
    Tensor reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

    /// Sub-tensor at `index` along axis 0, i.e. what `t[index]` yields on a
    /// Python tensor. Rank drops by one.
    Tensor index_first(std::size_t index) const {
        if (shape_.empty() || index >= shape_[0]) throw Error("index-out-of-range");
        Shape rest(shape_.begin() + 1, shape_.end());
        const std::size_t stride = element_count(rest);
        return Tensor(std::move(rest),
                      std::vector<float>(data_.begin() + static_cast<std::ptrdiff_t>(index * stride),
                                         data_.begin() + static_cast<std::ptrdiff_t>((index + 1) * stride)));
    }

    /// Overwrites the axis-0 slice at `index` with `value`.
    void assign_first(std::size_t index, const Tensor& value) {
        if (shape_.empty() || index >= shape_[0]) throw Error("index-out-of-range");
        Shape rest(shape_.begin() + 1, shape_.end());
        if (rest != value.shape()) throw Error("shape-mismatch");
        std::copy(value.data_.begin(), value.data_.end(),
                  data_.begin() + static_cast<std::ptrdiff_t>(index * value.size()));
    }

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    std::size_t offset(std::initializer_list<std::size_t> index) const {
        if (index.size() != shape_.size()) throw Error("rank-mismatch");
        std::size_t off = 0;
        std::size_t axis = 0;
        for (std::size_t i : index) {
            if (i >= shape_[axis]) throw Error("index-out-of-range");
            off = off * shape_[axis] + i;
            ++axis;
        }
        return off;
    }

    Shape shape_;
    std::vector<float> data_;
};

inline float max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw Error("shape-mismatch", shape_string(a.shape()) + " vs " + shape_string(b.shape()));
    float worst = 0.0f;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::fabs(a[i] - b[i]));
    return worst;
}

}  // namespace interp
