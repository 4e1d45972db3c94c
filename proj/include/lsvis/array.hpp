#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace lsvis::nd {

using Shape = std::vector<int64_t>;

inline int64_t numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "(";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + ")";
}

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Dense row-major n-dimensional array. The universal numeric carrier for
// images, latent vectors, weights and gradients.
template <typename T>
struct ArrayT {
    Shape shape;
    std::vector<T> data;

    ArrayT() = default;
    explicit ArrayT(Shape s) : shape(std::move(s)), data(static_cast<size_t>(numel(shape)), T(0)) {}
    ArrayT(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        if (numel(shape) != static_cast<int64_t>(data.size()))
            throw ShapeError("array data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
    }

    static ArrayT zeros(Shape s) { return ArrayT(std::move(s)); }
    static ArrayT full(Shape s, T v) {
        ArrayT a(std::move(s));
        std::fill(a.data.begin(), a.data.end(), v);
        return a;
    }
    static ArrayT scalar(T v) { return ArrayT({1}, {v}); }

    int64_t size() const { return static_cast<int64_t>(data.size()); }
    T* ptr() { return data.data(); }
    const T* ptr() const { return data.data(); }
    T& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <typename U>
    ArrayT<U> cast() const {
        ArrayT<U> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

using Array = ArrayT<float>;

template <typename T>
inline void require_same_shape(const ArrayT<T>& a, const ArrayT<T>& b, const char* op) {
    if (a.shape != b.shape)
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " +
                         shape_str(b.shape));
}

}  // namespace lsvis::nd
