#pragma once

#include <cmath>
#include <cstddef>
#include <new>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "gopstream/error.hpp"

namespace gopstream::ad {

using Shape = std::vector<std::size_t>;

/// Allocator with a fixed 64-byte alignment. Eigen picks its vectorized
/// reduction split from the runtime address, so buffers with varying
/// alignment sum in different orders and training stops being reproducible.
template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlign{64};

    AlignedAllocator() = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
    void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }

    template <class U>
    bool operator==(const AlignedAllocator<U>&) const {
        return true;
    }
};

template <class T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

inline std::size_t numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
    std::string out = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        out += (i ? "," : "") + std::to_string(s[i]);
    }
    return out + ")";
}

/// Dense row-major array. Rank 0 is not used; scalars have shape {1}.
template <class T>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)), data_(numel(shape_), fill) {}
    Tensor(Shape shape, Buffer<T> data) : shape_(std::move(shape)), data_(std::move(data)) { check(); }
    Tensor(Shape shape, const std::vector<T>& data) : shape_(std::move(shape)), data_(data.begin(), data.end()) {
        check();
    }
    Tensor(Shape shape, std::initializer_list<T> data) : shape_(std::move(shape)), data_(data) { check(); }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const { return data_.size(); }

    /// Product of every extent but the last.
    std::size_t rows() const { return shape_.empty() ? 0 : data_.size() / shape_.back(); }
    std::size_t cols() const { return shape_.empty() ? 0 : shape_.back(); }

    T* ptr() { return data_.data(); }
    const T* ptr() const { return data_.data(); }
    std::span<T> data() { return data_; }
    std::span<const T> data() const { return data_; }
    Buffer<T>& vec() { return data_; }
    const Buffer<T>& vec() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    const T& at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

    Tensor reshaped(Shape s) const {
        if (numel(s) != data_.size()) {
            throw Error(Errc::ShapeMismatch, "cannot reshape " + shape_str(shape_) + " to " + shape_str(s));
        }
        return Tensor(std::move(s), data_);
    }

    template <class U>
    Tensor<U> cast() const {
        Buffer<U> d(data_.begin(), data_.end());
        return Tensor<U>(shape_, std::move(d));
    }

    bool all_finite() const {
        for (const T& v : data_) {
            if (!std::isfinite(v)) {
                return false;
            }
        }
        return true;
    }

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    void check() const {
        if (data_.size() != numel(shape_)) {
            throw Error(Errc::ShapeMismatch, "tensor data length " + std::to_string(data_.size()) +
                                                 " does not match shape " + shape_str(shape_));
        }
    }

    Shape shape_;
    Buffer<T> data_;
};

}  // namespace gopstream::ad
