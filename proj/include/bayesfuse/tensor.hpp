#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "error.hpp"

namespace bayesfuse {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
    std::string s;
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s.empty() ? "scalar" : s;
}

/// Dense row-major tensor of doubles. Canonical image layout is N x C x H x W.
///
/// Every extent is >= 1 and the element count always equals the product of
/// the extents. A default-constructed tensor is the scalar 0 with shape {1}.
class Tensor {
public:
    Tensor() : shape_{1}, data_(1, 0.0) {}

    explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
        validate_extents();
        data_.assign(shape_numel(shape_), fill);
    }

    Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
        validate_extents();
        if (data_.size() != shape_numel(shape_))
            throw ShapeError("Tensor: shape " + shape_str(shape_) + " needs " +
                             std::to_string(shape_numel(shape_)) + " values, got " +
                             std::to_string(data_.size()));
    }

    static Tensor scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }

    static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape()); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const {
        if (axis >= shape_.size())
            throw ShapeError("Tensor::dim: axis " + std::to_string(axis) + " out of range for shape " +
                             shape_str(shape_));
        return shape_[axis];
    }
    std::size_t numel() const noexcept { return data_.size(); }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    const std::vector<double>& values() const noexcept { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // 4-D accessors, no bounds checks beyond the flat vector's.
    double& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
        return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }
    double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
        return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }

    double item() const {
        if (data_.size() != 1)
            throw ShapeError("Tensor::item: tensor of shape " + shape_str(shape_) + " is not a scalar");
        return data_[0];
    }

    Tensor reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
    }

    /// Bitwise equality of shape and payload.
    bool identical(const Tensor& other) const {
        if (shape_ != other.shape_) return false;
        for (std::size_t i = 0; i < data_.size(); ++i) {
            if (std::bit_cast<std::uint64_t>(data_[i]) != std::bit_cast<std::uint64_t>(other.data_[i])) return false;
        }
        return true;
    }

private:
    void validate_extents() const {
        for (std::size_t i = 0; i < shape_.size(); ++i) {
            if (shape_[i] == 0)
                throw ShapeError("Tensor: extent " + std::to_string(i) + " of shape " + shape_str(shape_) +
                                 " is zero");
        }
    }

    Shape shape_;
    std::vector<double> data_;
};

inline void require_rank(const Tensor& t, std::size_t rank, const char* what) {
    if (t.rank() != rank)
        throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got shape " +
                         shape_str(t.shape()));
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

/// Copies images [begin, begin+count) of an N x ... tensor.
inline Tensor batch_slice(const Tensor& t, std::size_t begin, std::size_t count) {
    if (t.rank() == 0 || begin + count > t.dim(0) || count == 0)
        throw ShapeError("batch_slice: range out of bounds for shape " + shape_str(t.shape()));
    Shape s = t.shape();
    const std::size_t per = t.numel() / s[0];
    s[0] = count;
    std::vector<double> out(t.values().begin() + static_cast<std::ptrdiff_t>(begin * per),
                            t.values().begin() + static_cast<std::ptrdiff_t>((begin + count) * per));
    return Tensor(std::move(s), std::move(out));
}

/// Stacks same-shaped 1 x ... tensors (or N_i x ... tensors) along the batch axis.
inline Tensor batch_stack(std::span<const Tensor> parts) {
    if (parts.empty()) throw ShapeError("batch_stack: no tensors");
    Shape s = parts[0].shape();
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.rank() != s.size() || !std::equal(p.shape().begin() + 1, p.shape().end(), s.begin() + 1))
            throw ShapeError("batch_stack: shape mismatch " + shape_str(p.shape()) + " vs " + shape_str(s));
        total += p.dim(0);
    }
    s[0] = total;
    std::vector<double> out;
    out.reserve(shape_numel(s));
    for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
    return Tensor(std::move(s), std::move(out));
}

} // namespace bayesfuse
