// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <concepts>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cgdrcn/errors.hpp"

namespace cgdrcn {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string to_string(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

/// Dense row-major array. Images and feature maps are channels-first: [C, H, W].
template <std::floating_point T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T{0}) : shape_(std::move(shape)), values_(numel(shape_), fill) {}

    Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)), values_(std::move(values)) {
        if (values_.size() != numel(shape_))
            throw ShapeError("tensor of shape " + to_string(shape_) + " given " + std::to_string(values_.size()) +
                             " values");
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor full(Shape shape, T value) { return Tensor(std::move(shape), value); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const noexcept { return values_.size(); }
    bool empty() const noexcept { return values_.empty(); }

    std::span<T> values() noexcept { return values_; }
    std::span<const T> values() const noexcept { return values_; }
    std::vector<T>& storage() noexcept { return values_; }
    const std::vector<T>& storage() const noexcept { return values_; }

    T& operator[](std::size_t i) noexcept { return values_[i]; }
    const T& operator[](std::size_t i) const noexcept { return values_[i]; }

    T& at(std::size_t c, std::size_t y, std::size_t x) noexcept {
        return values_[(c * shape_[1] + y) * shape_[2] + x];
    }
    const T& at(std::size_t c, std::size_t y, std::size_t x) const noexcept {
        return values_[(c * shape_[1] + y) * shape_[2] + x];
    }

    bool requires_grad() const noexcept { return requires_grad_; }
    Tensor& set_requires_grad(bool on) {
        requires_grad_ = on;
        return *this;
    }

    /// Gradient accumulator; allocated (zero) on first access.
    std::vector<T>& grad() {
        if (grad_.size() != values_.size()) grad_.assign(values_.size(), T{0});
        return grad_;
    }
    const std::vector<T>& grad() const { return grad_; }
    bool has_grad() const noexcept { return !grad_.empty(); }
    void zero_grad() { grad_.assign(values_.size(), T{0}); }

    T sum() const { return std::accumulate(values_.begin(), values_.end(), T{0}); }

    void reshape(Shape shape) {
        if (numel(shape) != values_.size())
            throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
        shape_ = std::move(shape);
    }

    template <std::floating_point U>
    Tensor<U> cast() const {
        return Tensor<U>(shape_, std::vector<U>(values_.begin(), values_.end()));
    }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.values_ == b.values_;
    }

private:
    Shape shape_;
    std::vector<T> values_;
    std::vector<T> grad_;
    bool requires_grad_ = false;
};

} // namespace cgdrcn
