#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace xmrr {

inline std::size_t numel_of(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

inline std::string shape_str(const std::vector<std::size_t>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

// Dense row-major tensor. Rank 0 = scalar, rank 1 = vector, rank 2 = matrix;
// nothing in this project needs more.
template <typename T>
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> s)
        : shape(std::move(s)), data(numel_of(shape), T(0)) {}
    Tensor(std::vector<std::size_t> s, std::vector<T> d)
        : shape(std::move(s)), data(std::move(d)) {
        if (data.size() != numel_of(shape))
            throw std::runtime_error("tensor: data size " + std::to_string(data.size()) +
                                     " does not match shape " + shape_str(shape));
    }

    static Tensor scalar(T v) { return Tensor({}, {v}); }
    static Tensor vec(std::vector<T> v) {
        std::size_t n = v.size();
        return Tensor({n}, std::move(v));
    }

    std::size_t numel() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    bool is_scalar() const { return shape.empty(); }

    std::size_t rows() const {
        if (rank() != 2) throw std::runtime_error("tensor: rows() on rank " + std::to_string(rank()));
        return shape[0];
    }
    std::size_t cols() const {
        if (rank() != 2) throw std::runtime_error("tensor: cols() on rank " + std::to_string(rank()));
        return shape[1];
    }

    T& operator[](std::size_t i) { return data[i]; }
    const T& operator[](std::size_t i) const { return data[i]; }

    T& at(std::size_t r, std::size_t c) { return data[r * shape[1] + c]; }
    const T& at(std::size_t r, std::size_t c) const { return data[r * shape[1] + c]; }

    T item() const {
        if (numel() != 1) throw std::runtime_error("tensor: item() on non-scalar " + shape_str(shape));
        return data[0];
    }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

// y += a * x over raw buffers
template <typename T>
inline void axpy(std::size_t n, T a, const T* x, T* y) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

// C (r x c) [+]= A (r x k) * B (k x c)
template <typename T>
inline void gemm_nn(std::size_t r, std::size_t k, std::size_t c,
                    const T* a, const T* b, T* out, bool accumulate) {
    if (!accumulate)
        for (std::size_t i = 0; i < r * c; ++i) out[i] = T(0);
    for (std::size_t i = 0; i < r; ++i) {
        const T* arow = a + i * k;
        T* orow = out + i * c;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = arow[p];
            if (av == T(0)) continue;
            const T* brow = b + p * c;
            for (std::size_t j = 0; j < c; ++j) orow[j] += av * brow[j];
        }
    }
}

// C (r x c) [+]= A (r x k) * B^T, B stored (c x k)
template <typename T>
inline void gemm_nt(std::size_t r, std::size_t k, std::size_t c,
                    const T* a, const T* b, T* out, bool accumulate) {
    for (std::size_t i = 0; i < r; ++i) {
        const T* arow = a + i * k;
        for (std::size_t j = 0; j < c; ++j) {
            const T* brow = b + j * k;
            T acc = T(0);
            for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            T& o = out[i * c + j];
            o = accumulate ? o + acc : acc;
        }
    }
}

// C (k x c) [+]= A^T * B, A stored (r x k), B stored (r x c)
template <typename T>
inline void gemm_tn(std::size_t r, std::size_t k, std::size_t c,
                    const T* a, const T* b, T* out, bool accumulate) {
    if (!accumulate)
        for (std::size_t i = 0; i < k * c; ++i) out[i] = T(0);
    for (std::size_t i = 0; i < r; ++i) {
        const T* arow = a + i * k;
        const T* brow = b + i * c;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = arow[p];
            if (av == T(0)) continue;
            T* orow = out + p * c;
            for (std::size_t j = 0; j < c; ++j) orow[j] += av * brow[j];
        }
    }
}

} // namespace xmrr
