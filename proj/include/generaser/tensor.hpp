#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include "generaser/common.hpp"

namespace generaser {

// Dense row-major tensor. Rank is dynamic (videos are [T,H,W,C], masks
// [T,H,W], matrices [R,C]); hot loops work on raw pointers via data().
template <typename S>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
        data_.assign(num_elements(shape_), S(0));
    }

    Tensor(std::initializer_list<int> shape) : Tensor(std::vector<int>(shape)) {}

    static std::size_t num_elements(const std::vector<int>& shape) {
        std::size_t n = 1;
        for (int d : shape) {
            if (d < 0) throw ShapeError("negative tensor dimension");
            n *= static_cast<std::size_t>(d);
        }
        return n;
    }

    const std::vector<int>& shape() const { return shape_; }
    int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
    int rank() const { return static_cast<int>(shape_.size()); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    S* data() { return data_.data(); }
    const S* data() const { return data_.data(); }

    S& operator[](std::size_t i) { return data_[i]; }
    const S& operator[](std::size_t i) const { return data_[i]; }

    S& at(int t, int h, int w, int c) {
        return data_[((static_cast<std::size_t>(t) * shape_[1] + h) * shape_[2] + w) * shape_[3] + c];
    }
    const S& at(int t, int h, int w, int c) const {
        return data_[((static_cast<std::size_t>(t) * shape_[1] + h) * shape_[2] + w) * shape_[3] + c];
    }
    S& at(int t, int h, int w) {
        return data_[(static_cast<std::size_t>(t) * shape_[1] + h) * static_cast<std::size_t>(shape_[2]) + w];
    }
    const S& at(int t, int h, int w) const {
        return data_[(static_cast<std::size_t>(t) * shape_[1] + h) * static_cast<std::size_t>(shape_[2]) + w];
    }
    S& at(int r, int c) { return data_[static_cast<std::size_t>(r) * shape_[1] + c]; }
    const S& at(int r, int c) const { return data_[static_cast<std::size_t>(r) * shape_[1] + c]; }

    void fill(S v) { std::fill(data_.begin(), data_.end(), v); }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    template <typename S2>
    Tensor<S2> cast() const {
        Tensor<S2> out(shape_);
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<S2>(data_[i]);
        return out;
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << "[";
        for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
        os << "]";
        return os.str();
    }

private:
    std::vector<int> shape_;
    std::vector<S> data_;
};

using VideoClip = Tensor<float>;  // [T,H,W,C], values in [0,1]
using MaskClip = Tensor<float>;   // [T,H,W], binary {0,1}

template <typename S>
void require_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* what) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(what) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    }
}

template <typename S>
bool all_finite(const Tensor<S>& t) {
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (!std::isfinite(static_cast<double>(t[i]))) return false;
    }
    return true;
}

// Global L2 norm, accumulated in double.
template <typename S>
double l2_norm(const Tensor<S>& t) {
    double acc = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) {
        const double v = static_cast<double>(t[i]);
        acc += v * v;
    }
    return std::sqrt(acc);
}

template <typename S>
double max_abs_diff(const Tensor<S>& a, const Tensor<S>& b) {
    require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    }
    return m;
}

template <typename S>
double mean_abs_diff(const Tensor<S>& a, const Tensor<S>& b) {
    require_same_shape(a, b, "mean_abs_diff");
    if (a.size() == 0) return 0.0;
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        acc += std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
    }
    return acc / static_cast<double>(a.size());
}

template <typename S>
double mean_squared_diff(const Tensor<S>& a, const Tensor<S>& b) {
    require_same_shape(a, b, "mean_squared_diff");
    if (a.size() == 0) return 0.0;
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        acc += d * d;
    }
    return acc / static_cast<double>(a.size());
}

template <typename S>
bool bit_identical(const Tensor<S>& a, const Tensor<S>& b) {
    if (!a.same_shape(b)) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (std::memcmp(&a[i], &b[i], sizeof(S)) != 0) return false;
    }
    return true;
}

}  // namespace generaser
