#pragma once

#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

#include "fdwm/rng.hpp"

namespace fdwm {

// Dense row-major tensor. The scalar type is a template parameter: training
// runs in float, gradient checks run the same code in double.
template <typename T>
struct Tensor {
    std::vector<int> shape;
    std::vector<T> data;
    bool requires_grad = false;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(numel_of(shape), T(0)) {}
    Tensor(std::vector<int> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        if (static_cast<int64_t>(data.size()) != numel_of(shape))
            throw std::invalid_argument("tensor: data length does not match shape");
    }

    static int64_t numel_of(const std::vector<int>& s) {
        int64_t n = 1;
        for (int e : s) {
            if (e <= 0) throw std::invalid_argument("tensor: non-positive extent");
            n *= e;
        }
        return n;
    }

    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }

    static Tensor full(std::vector<int> s, T v) {
        Tensor t(std::move(s));
        for (auto& x : t.data) x = v;
        return t;
    }

    static Tensor from_scalar(T v) { return Tensor({1}, {v}); }

    static Tensor randn(std::vector<int> s, Rng& rng) {
        Tensor t(std::move(s));
        for (auto& x : t.data) x = static_cast<T>(rng.normal());
        return t;
    }

    static Tensor rand_uniform(std::vector<int> s, Rng& rng, T lo, T hi) {
        Tensor t(std::move(s));
        for (auto& x : t.data) x = static_cast<T>(rng.uniform(lo, hi));
        return t;
    }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    T* ptr() { return data.data(); }
    const T* ptr() const { return data.data(); }

    // flat accessors for up to 4-d indexing
    T& at(int i) { return data[static_cast<size_t>(i)]; }
    T at(int i) const { return data[static_cast<size_t>(i)]; }
    T& at4(int b, int c, int y, int x) {
        return data[((static_cast<size_t>(b) * shape[1] + c) * shape[2] + y) * shape[3] + x];
    }
    T at4(int b, int c, int y, int x) const {
        return data[((static_cast<size_t>(b) * shape[1] + c) * shape[2] + y) * shape[3] + x];
    }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        out.requires_grad = requires_grad;
        return out;
    }
};

std::string shape_str(const std::vector<int>& s);

// GEMM on row-major buffers: C = A[m,k] * B[k,n] (+ beta*C), with optional
// transposes. Dispatches to cblas_sgemm / cblas_dgemm.
void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a, int lda,
          const float* b, int ldb, float beta, float* c, int ldc);
void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha, const double* a, int lda,
          const double* b, int ldb, double beta, double* c, int ldc);

// Caps BLAS threading (also read from FD_NUM_WORKERS at first use).
void set_num_workers(int n);
int num_workers();

}  // namespace fdwm
