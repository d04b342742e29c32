#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "grf/common.hpp"

namespace grf {

inline int64_t shape_numel(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw DimError("non-positive dimension in shape " + format_shape(shape));
        n *= d;
    }
    return n;
}

// Dense row-major tensor. Plain value type: copies copy the buffer, there
// are no views or strides. Rank is capped at 4 (batch x heads x seq x dim).
template <typename S>
class Tensor {
public:
    using Buffer = std::vector<S, memtrack::TrackingAllocator<S>>;

    Tensor() = default;

    explicit Tensor(std::vector<int> shape)
        : shape_(std::move(shape)), data_(check_rank(shape_), S(0)) {}

    Tensor(std::vector<int> shape, std::initializer_list<S> values)
        : shape_(std::move(shape)), data_(values.begin(), values.end()) {
        if (static_cast<int64_t>(data_.size()) != check_rank(shape_))
            throw DimError("initializer size does not match shape " + format_shape(shape_));
    }

    Tensor(std::vector<int> shape, const std::vector<S>& values)
        : shape_(std::move(shape)), data_(values.begin(), values.end()) {
        if (static_cast<int64_t>(data_.size()) != check_rank(shape_))
            throw DimError("value count does not match shape " + format_shape(shape_));
    }

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<int> shape, S value) {
        Tensor t(std::move(shape));
        for (S& x : t.data_) x = value;
        return t;
    }

    static Tensor scalar(S value) { return Tensor({1}, {value}); }

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    S* data() { return data_.data(); }
    const S* data() const { return data_.data(); }

    S& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    const S& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    // Multi-index access, mostly for tests and oracles.
    S& at(std::initializer_list<int> idx) { return data_[static_cast<size_t>(offset(idx))]; }
    const S& at(std::initializer_list<int> idx) const {
        return data_[static_cast<size_t>(offset(idx))];
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (S x : data_)
            if (!std::isfinite(static_cast<double>(x))) return false;
        return true;
    }

    void fill(S value) {
        for (S& x : data_) x = value;
    }

    S max_abs_diff(const Tensor& o) const {
        if (!same_shape(o)) throw DimError("max_abs_diff: shape mismatch " +
                                           format_shape(shape_) + " vs " + format_shape(o.shape_));
        S worst = S(0);
        for (int64_t i = 0; i < numel(); ++i) {
            S d = std::abs(data_[static_cast<size_t>(i)] - o.data_[static_cast<size_t>(i)]);
            if (d > worst) worst = d;
        }
        return worst;
    }

private:
    int64_t offset(std::initializer_list<int> idx) const {
        if (static_cast<int>(idx.size()) != rank())
            throw DimError("index rank mismatch for shape " + format_shape(shape_));
        int64_t off = 0;
        auto it = idx.begin();
        for (int a = 0; a < rank(); ++a, ++it) {
            if (*it < 0 || *it >= shape_[static_cast<size_t>(a)])
                throw DimError("index out of range for shape " + format_shape(shape_));
            off = off * shape_[static_cast<size_t>(a)] + *it;
        }
        return off;
    }

    static int64_t check_rank(const std::vector<int>& shape) {
        if (shape.size() > 4)
            throw DimError("rank > 4 not supported: shape " + format_shape(shape));
        return shape_numel(shape);
    }

    std::vector<int> shape_;
    Buffer data_;
};

}  // namespace grf
