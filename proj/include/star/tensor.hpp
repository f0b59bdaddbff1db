#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace star {

/// Thrown when operands have incompatible extents.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Thrown when a computation produces NaN or Inf.
class NonFiniteError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

/// Dense row-major array. Value semantics; every extent must be positive.
template <class S>
class Tensor {
public:
    using value_type = S;

    Tensor() = default;

    explicit Tensor(Shape shape, S fill = S{0}) : shape_(std::move(shape)) {
        validate_shape();
        data_.assign(shape_numel(shape_), fill);
    }

    Tensor(Shape shape, std::vector<S> data) : shape_(std::move(shape)), data_(std::move(data)) {
        validate_shape();
        if (shape_numel(shape_) != data_.size())
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_str(shape_));
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::span<S> data() { return data_; }
    std::span<const S> data() const { return data_; }
    std::vector<S>& vec() { return data_; }
    const std::vector<S>& vec() const { return data_; }

    S& operator[](std::size_t i) { return data_[i]; }
    const S& operator[](std::size_t i) const { return data_[i]; }

    template <class... I>
    S& at(I... idx) { return data_[offset(idx...)]; }
    template <class... I>
    const S& at(I... idx) const { return data_[offset(idx...)]; }

    /// Same data under a new shape with equal element count.
    Tensor reshaped(Shape s) const {
        if (shape_numel(s) != size())
            throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(s));
        return Tensor(std::move(s), data_);
    }

    template <class T>
    Tensor<T> cast() const {
        std::vector<T> out(data_.begin(), data_.end());
        return Tensor<T>(shape_, std::move(out));
    }

    bool all_finite() const {
        for (const auto& v : data_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    void validate_shape() const {
        for (auto e : shape_)
            if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape_));
    }

    template <class... I>
    std::size_t offset(I... idx) const {
        const std::size_t ids[] = {static_cast<std::size_t>(idx)...};
        std::size_t off = 0;
        for (std::size_t k = 0; k < sizeof...(I); ++k) off = off * shape_[k] + ids[k];
        return off;
    }

    Shape shape_;
    std::vector<S> data_;
};

/// Frames x channels x height x width.
using VideoTensor = Tensor<float>;

inline void require_same_shape(const Shape& a, const Shape& b, const char* what) {
    if (a != b)
        throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

inline void require_rank(const Shape& s, std::size_t r, const char* what) {
    if (s.size() != r)
        throw ShapeError(std::string(what) + ": expected rank " + std::to_string(r) + ", got " +
                         shape_str(s));
}

// Elementwise helpers on plain tensors. These do not participate in autograd.

template <class S>
Tensor<S> axpby(S a, const Tensor<S>& x, S b, const Tensor<S>& y) {
    require_same_shape(x.shape(), y.shape(), "axpby");
    Tensor<S> out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = a * x[i] + b * y[i];
    return out;
}

template <class S>
Tensor<S> scaled(const Tensor<S>& x, S a) {
    Tensor<S> out = x;
    for (auto& v : out.vec()) v *= a;
    return out;
}

template <class S>
double max_abs_diff(const Tensor<S>& a, const Tensor<S>& b) {
    require_same_shape(a.shape(), b.shape(), "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    return m;
}

template <class S>
double mean_squared_error(const Tensor<S>& a, const Tensor<S>& b) {
    require_same_shape(a.shape(), b.shape(), "mean_squared_error");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        acc += d * d;
    }
    return acc / static_cast<double>(a.size());
}

/// Extract frame `t` of a [T,C,H,W] video as a [1,C,H,W] tensor.
template <class S>
Tensor<S> frame_of(const Tensor<S>& video, std::size_t t) {
    require_rank(video.shape(), 4, "frame_of");
    const auto& s = video.shape();
    const std::size_t n = s[1] * s[2] * s[3];
    std::vector<S> out(video.vec().begin() + static_cast<std::ptrdiff_t>(t * n),
                       video.vec().begin() + static_cast<std::ptrdiff_t>((t + 1) * n));
    return Tensor<S>({1, s[1], s[2], s[3]}, std::move(out));
}

}  // namespace star
