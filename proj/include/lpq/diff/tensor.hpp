#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "lpq/error.hpp"

namespace lpq::diff {

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel(const Shape& dims) {
    std::int64_t n = 1;
    for (auto d : dims) n *= d;
    return n;
}

inline std::string shape_str(const Shape& dims) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < dims.size(); ++i) os << (i ? "," : "") << dims[i];
    os << ']';
    return os.str();
}

// Dense row-major array. Rank 0 (empty dims) is a scalar with one element.
template <typename T>
class BasicTensor {
public:
    using value_type = T;

    BasicTensor() : data_(1, T(0)) {}

    explicit BasicTensor(Shape dims, T fill = T(0)) : dims_(std::move(dims)) {
        for (auto d : dims_) require(d > 0, "tensor extents must be positive, got " + shape_str(dims_));
        data_.assign(static_cast<std::size_t>(numel(dims_)), fill);
    }

    BasicTensor(Shape dims, std::vector<T> data) : dims_(std::move(dims)), data_(std::move(data)) {
        for (auto d : dims_) require(d > 0, "tensor extents must be positive, got " + shape_str(dims_));
        require(static_cast<std::int64_t>(data_.size()) == numel(dims_),
                "data length does not match extents " + shape_str(dims_));
    }

    static BasicTensor scalar(T v) {
        BasicTensor t;
        t.data_[0] = v;
        return t;
    }

    const Shape& dims() const { return dims_; }
    std::int64_t dim(std::size_t i) const { return dims_.at(i); }
    std::size_t rank() const { return dims_.size(); }
    std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }

    std::span<T> values() { return data_; }
    std::span<const T> values() const { return data_; }
    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

    T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    const T& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    T item() const {
        require(data_.size() == 1, "item() on non-scalar tensor " + shape_str(dims_));
        return data_[0];
    }

    // Same data, new extents.
    BasicTensor reshaped(Shape dims) const {
        require(numel(dims) == size(), "reshape " + shape_str(dims_) + " -> " + shape_str(dims));
        return BasicTensor(std::move(dims), data_);
    }

    template <typename U>
    BasicTensor<U> cast() const {
        std::vector<U> out(data_.begin(), data_.end());
        return BasicTensor<U>(dims_, std::move(out));
    }

    bool all_finite() const {
        for (T v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    bool same_shape(const BasicTensor& o) const { return dims_ == o.dims_; }

    friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
        return a.dims_ == b.dims_ && a.data_ == b.data_;
    }

private:
    Shape dims_;
    std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

}  // namespace lpq::diff
