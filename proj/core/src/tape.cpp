#include "fdwm/tape.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace fdwm {

namespace {

template <typename T>
void check(bool ok, const char* msg) {
    if (!ok) throw std::invalid_argument(msg);
}

template <typename T>
T sigmoid(T x) {
    return T(1) / (T(1) + std::exp(-x));
}

struct ConvDims {
    int b, c, h, w, o, kh, kw, ho, wo, stride, pad;
};

template <typename T>
ConvDims conv_dims(const Tensor<T>& x, const Tensor<T>& w, int stride, int pad) {
    if (x.rank() != 4 || w.rank() != 4) throw std::invalid_argument("conv2d: rank-4 tensors required");
    ConvDims d;
    d.b = x.dim(0);
    d.c = x.dim(1);
    d.h = x.dim(2);
    d.w = x.dim(3);
    d.o = w.dim(0);
    d.kh = w.dim(2);
    d.kw = w.dim(3);
    d.stride = stride;
    d.pad = pad;
    if (w.dim(1) != d.c) throw std::invalid_argument("conv2d: input/kernel channel mismatch");
    if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
    if (pad < 0) throw std::invalid_argument("conv2d: negative padding");
    if (d.kh > d.h + 2 * pad || d.kw > d.w + 2 * pad)
        throw std::invalid_argument("conv2d: kernel exceeds padded input");
    d.ho = (d.h + 2 * pad - d.kh) / stride + 1;
    d.wo = (d.w + 2 * pad - d.kw) / stride + 1;
    return d;
}

// col[(c*kh+ky)*kw+kx, (b*ho+oy)*wo+ox]
template <typename T>
void im2col(const Tensor<T>& x, const ConvDims& d, std::vector<T>& col) {
    const int64_t cols = static_cast<int64_t>(d.b) * d.ho * d.wo;
    col.assign(static_cast<size_t>(d.c) * d.kh * d.kw * cols, T(0));
    for (int b = 0; b < d.b; ++b) {
        for (int c = 0; c < d.c; ++c) {
            const T* xp = x.ptr() + (static_cast<size_t>(b) * d.c + c) * d.h * d.w;
            for (int ky = 0; ky < d.kh; ++ky) {
                for (int kx = 0; kx < d.kw; ++kx) {
                    T* cp = col.data() +
                            (static_cast<size_t>((c * d.kh + ky) * d.kw + kx)) * cols +
                            static_cast<size_t>(b) * d.ho * d.wo;
                    for (int oy = 0; oy < d.ho; ++oy) {
                        int iy = oy * d.stride + ky - d.pad;
                        if (iy < 0 || iy >= d.h) continue;
                        for (int ox = 0; ox < d.wo; ++ox) {
                            int ix = ox * d.stride + kx - d.pad;
                            if (ix < 0 || ix >= d.w) continue;
                            cp[oy * d.wo + ox] = xp[iy * d.w + ix];
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const std::vector<T>& col, const ConvDims& d, Tensor<T>& dx) {
    const int64_t cols = static_cast<int64_t>(d.b) * d.ho * d.wo;
    for (int b = 0; b < d.b; ++b) {
        for (int c = 0; c < d.c; ++c) {
            T* xp = dx.ptr() + (static_cast<size_t>(b) * d.c + c) * d.h * d.w;
            for (int ky = 0; ky < d.kh; ++ky) {
                for (int kx = 0; kx < d.kw; ++kx) {
                    const T* cp = col.data() +
                                  (static_cast<size_t>((c * d.kh + ky) * d.kw + kx)) * cols +
                                  static_cast<size_t>(b) * d.ho * d.wo;
                    for (int oy = 0; oy < d.ho; ++oy) {
                        int iy = oy * d.stride + ky - d.pad;
                        if (iy < 0 || iy >= d.h) continue;
                        for (int ox = 0; ox < d.wo; ++ox) {
                            int ix = ox * d.stride + kx - d.pad;
                            if (ix < 0 || ix >= d.w) continue;
                            xp[iy * d.w + ix] += cp[oy * d.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

}  // namespace

template <typename T>
typename Tape<T>::Node& Tape<T>::node(Id id) {
    if (id < 0 || static_cast<size_t>(id) >= nodes_.size())
        throw std::invalid_argument("tape: invalid node id");
    return nodes_[static_cast<size_t>(id)];
}

template <typename T>
const typename Tape<T>::Node& Tape<T>::node(Id id) const {
    if (id < 0 || static_cast<size_t>(id) >= nodes_.size())
        throw std::invalid_argument("tape: invalid node id");
    return nodes_[static_cast<size_t>(id)];
}

template <typename T>
typename Tape<T>::Id Tape<T>::push(Node n) {
    if (n.op != Op::Leaf) {
        bool rg = false;
        for (Id p : {n.p0, n.p1, n.p2})
            if (p >= 0) rg = rg || node(p).requires_grad;
        n.requires_grad = rg;
    }
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size() - 1);
}

template <typename T>
void Tape<T>::reset() {
    nodes_.clear();
    grads_.clear();
}

template <typename T>
typename Tape<T>::Id Tape<T>::leaf(Tensor<T> v) {
    bool rg = v.requires_grad;
    return leaf(std::move(v), rg);
}

template <typename T>
typename Tape<T>::Id Tape<T>::leaf(Tensor<T> v, bool requires_grad) {
    Node n;
    n.op = Op::Leaf;
    n.value = std::move(v);
    n.requires_grad = requires_grad;
    return push(std::move(n));
}

template <typename T>
typename Tape<T>::Id Tape<T>::add(Id a, Id b) {
    const auto& va = value(a);
    const auto& vb = value(b);
    check<T>(va.same_shape(vb), "add: shape mismatch");
    Node n;
    n.op = Op::Add;
    n.p0 = a;
    n.p1 = b;
    n.value = va;
    for (int64_t i = 0; i < n.value.numel(); ++i) n.value.data[i] += vb.data[i];
    return push(std::move(n));
}

template <typename T>
typename Tape<T>::Id Tape<T>::sub(Id a, Id b) {
    const auto& va = value(a);
    const auto& vb = value(b);
    check<T>(va.same_shape(vb), "sub: shape mismatch");
    Node n;
    n.op = Op::Sub;
    n.p0 = a;
    n.p1 = b;
    n.value = va;
    for (int64_t i = 0; i < n.value.numel(); ++i) n.value.data[i] -= vb.data[i];
    return push(std::move(n));
}

template <typename T>
typename Tape<T>::Id Tape<T>::mul(Id a, Id b) {
    const auto& va = value(a);
    const auto& vb = value(b);
    check<T>(va.same_shape(vb), "mul: shape mismatch");
    Node n;
    n.op = Op::Mul;
    n.p0 = a;
    n.p1 = b;
    n.value = va;
    for (int64_t i = 0; i < n.value.numel(); ++i) n.value.data[i] *= vb.data[i];
    return push(std::move(n));
}

template <typename T>
typename Tape<T>::Id Tape<T>::scale(Id a, T s) {
    Node n;
    n.op = Op::Scale;
    n.p0 = a;
    n.s0 = s;
    n.value = value(a);
    for (auto& v : n.value.data) v *= s;
    return push(std::move(n));
}

template <typename T>
typename Tape<T>::Id Tape<T>::add_channel_bias(Id x, Id e) {
    const auto& vx = value(x);
    const auto& ve = value(e);
    check<T>(vx.rank() == 4, "add_channel_bias: feature rank must be 4");
    int b = vx.dim(0), c = vx.dim(1), hw = vx.dim(2) * vx.dim(3);
    bool per_batch = ve.rank() == 2;
    if (per_batch)
        check<T>(ve.dim(0) == b && ve.dim(1) == c, "add_channel_bias: bias shape mismatch");
    else
        check<T>(ve.rank() == 1 && ve.dim(0) == c, "add_channel_bias: bias shape mismatch");
    Node n;
    n.op = Op::AddChannelBias;
    n.p0 = x;
    n.p1 = e;
    n.value = vx;
    for (int bi = 0; bi < b; ++bi)
        for (int ci = 0; ci < c; ++ci) {
            T bias = per_batch ? ve.data[static_cast<size_t>(bi) * c + ci] : ve.data[ci];
            T* p = n.value.ptr() + (static_cast<size_t>(bi) * c + ci) * hw;
            for (int i = 0; i < hw; ++i) p[i] += bias;
        }
    return push(std::move(n));
}

template <typename T>
typename Tape<T>::Id Tape<T>::add_row_bias(Id x, Id b) {
    const auto& vx = value(x);
    const auto& vb = value(b);
    check<T>(vb.rank() == 1, "add_row_bias: bias rank must be 1");
    int d = vx.dim(vx.rank() - 1);
    check<T>(vb.dim(0) == d, "add_row_bias: bias length mismatch");
    Node n;
    n.op = Op::AddRowBias;
    n.p0 = x;
    n.p1 = b;
    n.value = vx;
    int64_t rows = vx.numel() / d;
    for (int64_t r = 0; r < rows; ++r) {
        T* p = n.value.ptr() + r * d;
        for (int i = 0; i < d; ++i) p[i] += vb.data[i];
    }
    return push(std::move(n));
}

template <typename T>
typename Tape<T>::Id Tape<T>::matmul(Id a, Id b) {
    const auto& va = value(a);
    const auto& vb = value(b);
    check<T>(va.rank() >= 2 && vb.rank() == 2, "matmul: need [...,K] x [K,M]");
    int k = va.dim(va.rank() - 1);
    check<T>(vb.dim(0) == k, "matmul: inner dimension mismatch");
    int m = vb.dim(1);
    int64_t rows = va.numel() / k;
    std::vector<int> out_shape(va.shape.begin(), va.shape.end() - 1);
    out_shape.push_back(m);
    Node n;
    n.op = Op::Matmul;
    n.p0 = a;
    n.p1 = b;
    n.value = Tensor<T>(out_shape);
    gemm(false, false, static_cast<int>(rows), m, k, T(1), va.ptr(), k, vb.ptr(), m, T(0),
         n.value.ptr(), m);
    return push(std::move(n));
}

template <typename T>
typename Tape<T>::Id Tape<T>::bmm(Id a, Id b) {
    const auto& va = value(a);
    const auto& vb = value(b);
    check<T>(va.rank() == 3 && vb.rank() == 3, "bmm: rank-3 tensors required");
    check<T>(va.dim(0) == vb.dim(0), "bmm: batch mismatch");
    check<T>(va.dim(2) == vb.dim(1), "bmm: inner dimension mismatch");
    int bs = va.dim(0), nn = va.dim(1), k = va.dim(2), m = vb.dim(2);
    Node n;
    n.op = Op::Bmm;
    n.p0 = a;
    n.p1 = b;
    n.value = Tensor<T>({bs, nn, m});
    for (int i = 0; i < bs; ++i)
        gemm(false, false, nn, m, k, T(1), va.ptr() + static_cast<size_t>(i) * nn * k, k,
             vb.ptr() + static_cast<size_t>(i) * k * m, m, T(0),
             n.value.ptr() + static_cast<size_t>(i) * nn * m, m);
    return push(std::move(n));
}

template <typename T>
typename Tape<T>::Id Tape<T>::transpose_last2(Id a) {
    const auto& va = value(a);
    check<T>(va.rank() == 2 || va.rank() == 3, "transpose_last2: rank 2 or 3 required");
    int bs = va.rank() == 3 ? va.dim(0) : 1;
    int r = va.dim(va.rank() - 2), c = va.dim(va.rank() - 1);
    std::vector<int> shape = va.shape;
    std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
    Node n;
    n.op = Op::TransposeLast2;
    n.p0 = a;
    n.value = Tensor<T>(shape);
    for (int b = 0; b < bs; ++b) {
        const T* src = va.ptr() + static_cast<size_t>(b) * r * c;
        T* dst = n.value.ptr() + static_cast<size_t>(b) * r * c;
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) dst[j * r + i] = src[i * c + j];
    }
    return push(std::move(n));
}

template <typename T>
typename Tape<T>::Id Tape<T>::conv2d(Id x, Id w, Id b, int stride, int pad) {
    const auto& vx = value(x);
    const auto& vw = value(w);
    const auto& vb = value(b);
    ConvDims d = conv_dims(vx, vw, stride, pad);
    check<T>(vb.rank() == 1 && vb.dim(0) == d.o, "conv2d: bias shape mismatch");

    static thread_local std::vector<T> col;
    im2col(vx, d, col);
    const int64_t cols = static_cast<int64_t>(d.b) * d.ho * d.wo;
    const int ckk = d.c * d.kh * d.kw;

    std::vector<T> y(static_cast<size_t>(d.o) * cols);
    gemm(false, false, d.o, static_cast<int>(cols), ckk, T(1), vw.ptr(), ckk, col.data(),
         static_cast<int>(cols), T(0), y.data(), static_cast<int>(cols));

    Node n;
    n.op = Op::Conv2d;
    n.p0 = x;
    n.p1 = w;
    n.p2 = b;
    n.a0 = stride;
    n.a1 = pad;
    n.value = Tensor<T>({d.b, d.o, d.ho, d.wo});
    for (int bi = 0; bi < d.b; ++bi)
        for (int o = 0; o < d.o; ++o) {
            const T* src = y.data() + static_cast<size_t>(o) * cols +
                           static_cast<size_t>(bi) * d.ho * d.wo;
            T* dst = n.value.ptr() + (static_cast<size_t>(bi) * d.o + o) * d.ho * d.wo;
            T bias = vb.data[o];
            for (int i = 0; i < d.ho * d.wo; ++i) dst[i] = src[i] + bias;
        }
    return push(std::move(n));
}

template <typename T>
typename Tape<T>::Id Tape<T>::group_norm(Id x, Id gamma, Id beta, int groups) {
    const auto& vx = value(x);
    const auto& vg = value(gamma);
    const auto& vb = value(beta);
    check<T>(vx.rank() == 4, "group_norm: rank-4 input required");
    int b = vx.dim(0), c = vx.dim(1), hw = vx.dim(2) * vx.dim(3);
    check<T>(groups >= 1 && c % groups == 0, "group_norm: channels not divisible by groups");
    check<T>(vg.rank() == 1 && vg.dim(0) == c && vb.rank() == 1 && vb.dim(0) == c,
             "group_norm: affine parameter shape mismatch");
    int cg = c / groups;
    int64_t m = static_cast<int64_t>(cg) * hw;
    const T eps = T(1e-5);

    Node n;
    n.op = Op::GroupNorm;
    n.p0 = x;
    n.p1 = gamma;
    n.p2 = beta;
    n.a0 = groups;
    n.value = Tensor<T>(vx.shape);
    n.aux = Tensor<T>({b, groups, 2});
    for (int bi = 0; bi < b; ++bi)
        for (int g = 0; g < groups; ++g) {
            const T* xp = vx.ptr() + (static_cast<size_t>(bi) * c + static_cast<size_t>(g) * cg) * hw;
            T mean = T(0);
            for (int64_t i = 0; i < m; ++i) mean += xp[i];
            mean /= static_cast<T>(m);
            T var = T(0);
            for (int64_t i = 0; i < m; ++i) {
                T dvi = xp[i] - mean;
                var += dvi * dvi;
            }
            var /= static_cast<T>(m);
            T inv = T(1) / std::sqrt(var + eps);
            n.aux.data[(static_cast<size_t>(bi) * groups + g) * 2] = mean;
            n.aux.data[(static_cast<size_t>(bi) * groups + g) * 2 + 1] = inv;
            for (int ci = 0; ci < cg; ++ci) {
                int cc = g * cg + ci;
                const T* xr = vx.ptr() + (static_cast<size_t>(bi) * c + cc) * hw;
                T* yr = n.value.ptr() + (static_cast<size_t>(bi) * c + cc) * hw;
                T ga = vg.data[cc], be = vb.data[cc];
                for (int i = 0; i < hw; ++i) yr[i] = ga * (xr[i] - mean) * inv + be;
            }
        }
    return push(std::move(n));
}

template <typename T>
typename Tape<T>::Id Tape<T>::silu(Id x) {
    Node n;
    n.op = Op::Silu;
    n.p0 = x;
    n.value = value(x);
    for (auto& v : n.value.data) v = v * sigmoid(v);
    return push(std::move(n));
}

template <typename T>
typename Tape<T>::Id Tape<T>::softmax_last(Id x) {
    const auto& vx = value(x);
    int m = vx.dim(vx.rank() - 1);
    check<T>(m >= 1, "softmax_last: empty rows");
    Node n;
    n.op = Op::SoftmaxLast;
    n.p0 = x;
    n.value = vx;
    int64_t rows = vx.numel() / m;
    for (int64_t r = 0; r < rows; ++r) {
        T* p = n.value.ptr() + r * m;
        T mx = p[0];
        for (int i = 1; i < m; ++i) mx = std::max(mx, p[i]);
        T sum = T(0);
        for (int i = 0; i < m; ++i) {
            p[i] = std::exp(p[i] - mx);
            sum += p[i];
        }
        for (int i = 0; i < m; ++i) p[i] /= sum;
    }
    return push(std::move(n));
}

template <typename T>
typename Tape<T>::Id Tape<T>::film(Id x, Id gamma, Id beta) {
    const auto& vx = value(x);
    const auto& vg = value(gamma);
    const auto& vb = value(beta);
    check<T>(vx.rank() == 4, "film: rank-4 input required");
    int b = vx.dim(0), c = vx.dim(1), hw = vx.dim(2) * vx.dim(3);
    check<T>(vg.same_shape(vb), "film: gamma/beta shape mismatch");
    bool per_batch = vg.rank() == 2;
    if (per_batch)
        check<T>(vg.dim(0) == b && vg.dim(1) == c, "film: parameter shape mismatch");
    else
        check<T>(vg.rank() == 1 && vg.dim(0) == c, "film: parameter shape mismatch");
    Node n;
    n.op = Op::Film;
    n.p0 = x;
    n.p1 = gamma;
    n.p2 = beta;
    n.value = vx;
    for (int bi = 0; bi < b; ++bi)
        for (int ci = 0; ci < c; ++ci) {
            size_t pi = per_batch ? static_cast<size_t>(bi) * c + ci : static_cast<size_t>(ci);
            T ga = vg.data[pi], be = vb.data[pi];
            T* p = n.value.ptr() + (static_cast<size_t>(bi) * c + ci) * hw;
            for (int i = 0; i < hw; ++i) p[i] = ga * p[i] + be;
        }
    return push(std::move(n));
}

template <typename T>
typename Tape<T>::Id Tape<T>::concat_ch(Id a, Id b) {
    const auto& va = value(a);
    const auto& vb = value(b);
    check<T>(va.rank() == 4 && vb.rank() == 4, "concat_ch: rank-4 tensors required");
    check<T>(va.dim(0) == vb.dim(0) && va.dim(2) == vb.dim(2) && va.dim(3) == vb.dim(3),
             "concat_ch: non-channel extents differ");
    int bs = va.dim(0), c1 = va.dim(1), c2 = vb.dim(1), hw = va.dim(2) * va.dim(3);
    Node n;
    n.op = Op::ConcatCh;
    n.p0 = a;
    n.p1 = b;
    n.value = Tensor<T>({bs, c1 + c2, va.dim(2), va.dim(3)});
    for (int bi = 0; bi < bs; ++bi) {
        std::memcpy(n.value.ptr() + static_cast<size_t>(bi) * (c1 + c2) * hw,
                    va.ptr() + static_cast<size_t>(bi) * c1 * hw, sizeof(T) * c1 * hw);
        std::memcpy(n.value.ptr() + (static_cast<size_t>(bi) * (c1 + c2) + c1) * hw,
                    vb.ptr() + static_cast<size_t>(bi) * c2 * hw, sizeof(T) * c2 * hw);
    }
    return push(std::move(n));
}

template <typename T>
typename Tape<T>::Id Tape<T>::upsample2x(Id x) {
    const auto& vx = value(x);
    check<T>(vx.rank() == 4, "upsample2x: rank-4 input required");
    int b = vx.dim(0), c = vx.dim(1), h = vx.dim(2), w = vx.dim(3);
    Node n;
    n.op = Op::Upsample2x;
    n.p0 = x;
    n.value = Tensor<T>({b, c, 2 * h, 2 * w});
    for (int bc = 0; bc < b * c; ++bc) {
        const T* src = vx.ptr() + static_cast<size_t>(bc) * h * w;
        T* dst = n.value.ptr() + static_cast<size_t>(bc) * 4 * h * w;
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) {
                T v = src[i * w + j];
                dst[(2 * i) * 2 * w + 2 * j] = v;
                dst[(2 * i) * 2 * w + 2 * j + 1] = v;
                dst[(2 * i + 1) * 2 * w + 2 * j] = v;
                dst[(2 * i + 1) * 2 * w + 2 * j + 1] = v;
            }
    }
    return push(std::move(n));
}

template <typename T>
typename Tape<T>::Id Tape<T>::to_tokens(Id x) {
    const auto& vx = value(x);
    check<T>(vx.rank() == 4, "to_tokens: rank-4 input required");
    int b = vx.dim(0), c = vx.dim(1), hw = vx.dim(2) * vx.dim(3);
    Node n;
    n.op = Op::ToTokens;
    n.p0 = x;
    n.value = Tensor<T>({b, hw, c});
    for (int bi = 0; bi < b; ++bi)
        for (int ci = 0; ci < c; ++ci) {
            const T* src = vx.ptr() + (static_cast<size_t>(bi) * c + ci) * hw;
            T* dst = n.value.ptr() + static_cast<size_t>(bi) * hw * c + ci;
            for (int i = 0; i < hw; ++i) dst[static_cast<size_t>(i) * c] = src[i];
        }
    return push(std::move(n));
}

template <typename T>
typename Tape<T>::Id Tape<T>::from_tokens(Id x, int h, int w) {
    const auto& vx = value(x);
    check<T>(vx.rank() == 3, "from_tokens: rank-3 input required");
    check<T>(vx.dim(1) == h * w, "from_tokens: token count mismatch");
    int b = vx.dim(0), c = vx.dim(2), hw = h * w;
    Node n;
    n.op = Op::FromTokens;
    n.p0 = x;
    n.a0 = h;
    n.a1 = w;
    n.value = Tensor<T>({b, c, h, w});
    for (int bi = 0; bi < b; ++bi)
        for (int ci = 0; ci < c; ++ci) {
            const T* src = vx.ptr() + static_cast<size_t>(bi) * hw * c + ci;
            T* dst = n.value.ptr() + (static_cast<size_t>(bi) * c + ci) * hw;
            for (int i = 0; i < hw; ++i) dst[i] = src[static_cast<size_t>(i) * c];
        }
    return push(std::move(n));
}

template <typename T>
typename Tape<T>::Id Tape<T>::reshape(Id x, std::vector<int> shape) {
    const auto& vx = value(x);
    check<T>(Tensor<T>::numel_of(shape) == vx.numel(), "reshape: element count mismatch");
    Node n;
    n.op = Op::Reshape;
    n.p0 = x;
    n.value = vx;
    n.value.shape = std::move(shape);
    return push(std::move(n));
}

template <typename T>
typename Tape<T>::Id Tape<T>::sum_all(Id x) {
    Node n;
    n.op = Op::SumAll;
    n.p0 = x;
    T s = T(0);
    for (T v : value(x).data) s += v;
    n.value = Tensor<T>::from_scalar(s);
    return push(std::move(n));
}

template <typename T>
typename Tape<T>::Id Tape<T>::mean_all(Id x) {
    Node n;
    n.op = Op::MeanAll;
    n.p0 = x;
    T s = T(0);
    for (T v : value(x).data) s += v;
    n.value = Tensor<T>::from_scalar(s / static_cast<T>(value(x).numel()));
    return push(std::move(n));
}

template <typename T>
typename Tape<T>::Id Tape<T>::mse(Id a, Id b) {
    const auto& va = value(a);
    const auto& vb = value(b);
    check<T>(va.same_shape(vb), "mse: shape mismatch");
    Node n;
    n.op = Op::Mse;
    n.p0 = a;
    n.p1 = b;
    T s = T(0);
    for (int64_t i = 0; i < va.numel(); ++i) {
        T d = va.data[i] - vb.data[i];
        s += d * d;
    }
    n.value = Tensor<T>::from_scalar(s / static_cast<T>(va.numel()));
    return push(std::move(n));
}

template <typename T>
Tensor<T>& Tape<T>::ensure_grad(Id id) {
    auto& g = grads_[static_cast<size_t>(id)];
    if (g.numel() == 0 || g.shape != node(id).value.shape) g = Tensor<T>::zeros(node(id).value.shape);
    return g;
}

template <typename T>
const Tensor<T>& Tape<T>::grad(Id id) {
    if (grads_.size() != nodes_.size()) grads_.resize(nodes_.size());
    return ensure_grad(id);
}

template <typename T>
void Tape<T>::accumulate(Id parent, const Tensor<T>& contribution) {
    if (parent < 0 || !node(parent).requires_grad) return;
    auto& g = ensure_grad(parent);
    for (int64_t i = 0; i < g.numel(); ++i) g.data[i] += contribution.data[i];
}

template <typename T>
void Tape<T>::backward(Id loss) {
    if (value(loss).numel() != 1) throw std::invalid_argument("backward: loss must be scalar");
    grads_.assign(nodes_.size(), Tensor<T>());
    if (!node(loss).requires_grad) return;
    ensure_grad(loss).data[0] = T(1);
    for (Id id = loss; id >= 0; --id) {
        const Node& n = nodes_[static_cast<size_t>(id)];
        if (!n.requires_grad) continue;
        auto& g = grads_[static_cast<size_t>(id)];
        if (g.numel() == 0) continue;  // not on a path to the loss
        backward_node(id);
    }
}

template <typename T>
void Tape<T>::backward_node(Id id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    const Tensor<T>& go = grads_[static_cast<size_t>(id)];
    auto parent_rg = [&](Id p) { return p >= 0 && node(p).requires_grad; };

    switch (n.op) {
        case Op::Leaf:
            break;
        case Op::Add: {
            accumulate(n.p0, go);
            accumulate(n.p1, go);
            break;
        }
        case Op::Sub: {
            accumulate(n.p0, go);
            if (parent_rg(n.p1)) {
                auto& g1 = ensure_grad(n.p1);
                for (int64_t i = 0; i < go.numel(); ++i) g1.data[i] -= go.data[i];
            }
            break;
        }
        case Op::Mul: {
            const auto& va = value(n.p0);
            const auto& vb = value(n.p1);
            if (parent_rg(n.p0)) {
                auto& g0 = ensure_grad(n.p0);
                for (int64_t i = 0; i < go.numel(); ++i) g0.data[i] += go.data[i] * vb.data[i];
            }
            if (parent_rg(n.p1)) {
                auto& g1 = ensure_grad(n.p1);
                for (int64_t i = 0; i < go.numel(); ++i) g1.data[i] += go.data[i] * va.data[i];
            }
            break;
        }
        case Op::Scale: {
            if (parent_rg(n.p0)) {
                auto& g0 = ensure_grad(n.p0);
                for (int64_t i = 0; i < go.numel(); ++i) g0.data[i] += go.data[i] * n.s0;
            }
            break;
        }
        case Op::AddChannelBias: {
            accumulate(n.p0, go);
            if (parent_rg(n.p1)) {
                const auto& ve = value(n.p1);
                auto& g1 = ensure_grad(n.p1);
                int b = go.dim(0), c = go.dim(1), hw = go.dim(2) * go.dim(3);
                bool per_batch = ve.rank() == 2;
                for (int bi = 0; bi < b; ++bi)
                    for (int ci = 0; ci < c; ++ci) {
                        const T* p = go.ptr() + (static_cast<size_t>(bi) * c + ci) * hw;
                        T s = T(0);
                        for (int i = 0; i < hw; ++i) s += p[i];
                        g1.data[per_batch ? static_cast<size_t>(bi) * c + ci
                                          : static_cast<size_t>(ci)] += s;
                    }
            }
            break;
        }
        case Op::AddRowBias: {
            accumulate(n.p0, go);
            if (parent_rg(n.p1)) {
                auto& g1 = ensure_grad(n.p1);
                int d = go.dim(go.rank() - 1);
                int64_t rows = go.numel() / d;
                for (int64_t r = 0; r < rows; ++r)
                    for (int i = 0; i < d; ++i) g1.data[i] += go.data[r * d + i];
            }
            break;
        }
        case Op::Matmul: {
            const auto& va = value(n.p0);
            const auto& vb = value(n.p1);
            int k = va.dim(va.rank() - 1);
            int m = vb.dim(1);
            int rows = static_cast<int>(va.numel() / k);
            if (parent_rg(n.p0)) {
                auto& g0 = ensure_grad(n.p0);
                gemm(false, true, rows, k, m, T(1), go.ptr(), m, vb.ptr(), m, T(1), g0.ptr(), k);
            }
            if (parent_rg(n.p1)) {
                auto& g1 = ensure_grad(n.p1);
                gemm(true, false, k, m, rows, T(1), va.ptr(), k, go.ptr(), m, T(1), g1.ptr(), m);
            }
            break;
        }
        case Op::Bmm: {
            const auto& va = value(n.p0);
            const auto& vb = value(n.p1);
            int bs = va.dim(0), nn = va.dim(1), k = va.dim(2), m = vb.dim(2);
            for (int i = 0; i < bs; ++i) {
                const T* ga = go.ptr() + static_cast<size_t>(i) * nn * m;
                if (parent_rg(n.p0))
                    gemm(false, true, nn, k, m, T(1), ga, m,
                         vb.ptr() + static_cast<size_t>(i) * k * m, m, T(1),
                         ensure_grad(n.p0).ptr() + static_cast<size_t>(i) * nn * k, k);
                if (parent_rg(n.p1))
                    gemm(true, false, k, m, nn, T(1), va.ptr() + static_cast<size_t>(i) * nn * k, k,
                         ga, m, T(1), ensure_grad(n.p1).ptr() + static_cast<size_t>(i) * k * m, m);
            }
            break;
        }
        case Op::TransposeLast2: {
            if (parent_rg(n.p0)) {
                auto& g0 = ensure_grad(n.p0);
                int bs = go.rank() == 3 ? go.dim(0) : 1;
                int r = go.dim(go.rank() - 2), c = go.dim(go.rank() - 1);
                for (int b = 0; b < bs; ++b) {
                    const T* src = go.ptr() + static_cast<size_t>(b) * r * c;
                    T* dst = g0.ptr() + static_cast<size_t>(b) * r * c;
                    for (int i = 0; i < r; ++i)
                        for (int j = 0; j < c; ++j) dst[j * r + i] += src[i * c + j];
                }
            }
            break;
        }
        case Op::Conv2d: {
            const auto& vx = value(n.p0);
            const auto& vw = value(n.p1);
            ConvDims d = conv_dims(vx, vw, n.a0, n.a1);
            const int64_t cols = static_cast<int64_t>(d.b) * d.ho * d.wo;
            const int ckk = d.c * d.kh * d.kw;

            // gather dY into [O, B*Ho*Wo]
            std::vector<T> dy(static_cast<size_t>(d.o) * cols);
            for (int bi = 0; bi < d.b; ++bi)
                for (int o = 0; o < d.o; ++o)
                    std::memcpy(dy.data() + static_cast<size_t>(o) * cols +
                                    static_cast<size_t>(bi) * d.ho * d.wo,
                                go.ptr() + (static_cast<size_t>(bi) * d.o + o) * d.ho * d.wo,
                                sizeof(T) * d.ho * d.wo);

            if (parent_rg(n.p2)) {
                auto& gb = ensure_grad(n.p2);
                for (int o = 0; o < d.o; ++o) {
                    T s = T(0);
                    const T* p = dy.data() + static_cast<size_t>(o) * cols;
                    for (int64_t i = 0; i < cols; ++i) s += p[i];
                    gb.data[o] += s;
                }
            }
            if (parent_rg(n.p1) || parent_rg(n.p0)) {
                static thread_local std::vector<T> col;
                if (parent_rg(n.p1)) {
                    im2col(vx, d, col);
                    auto& gw = ensure_grad(n.p1);
                    gemm(false, true, d.o, ckk, static_cast<int>(cols), T(1), dy.data(),
                         static_cast<int>(cols), col.data(), static_cast<int>(cols), T(1),
                         gw.ptr(), ckk);
                }
                if (parent_rg(n.p0)) {
                    static thread_local std::vector<T> dcol;
                    dcol.assign(static_cast<size_t>(ckk) * cols, T(0));
                    gemm(true, false, ckk, static_cast<int>(cols), d.o, T(1), vw.ptr(), ckk,
                         dy.data(), static_cast<int>(cols), T(0), dcol.data(),
                         static_cast<int>(cols));
                    col2im_add(dcol, d, ensure_grad(n.p0));
                }
            }
            break;
        }
        case Op::GroupNorm: {
            const auto& vx = value(n.p0);
            const auto& vg = value(n.p1);
            int b = vx.dim(0), c = vx.dim(1), hw = vx.dim(2) * vx.dim(3);
            int groups = n.a0, cg = c / groups;
            int64_t m = static_cast<int64_t>(cg) * hw;
            bool need_dx = parent_rg(n.p0);
            bool need_dg = parent_rg(n.p1);
            bool need_db = parent_rg(n.p2);
            for (int bi = 0; bi < b; ++bi)
                for (int g = 0; g < groups; ++g) {
                    T mean = n.aux.data[(static_cast<size_t>(bi) * groups + g) * 2];
                    T inv = n.aux.data[(static_cast<size_t>(bi) * groups + g) * 2 + 1];
                    T s1 = T(0), s2 = T(0);
                    for (int ci = 0; ci < cg; ++ci) {
                        int cc = g * cg + ci;
                        const T* xr = vx.ptr() + (static_cast<size_t>(bi) * c + cc) * hw;
                        const T* gr = go.ptr() + (static_cast<size_t>(bi) * c + cc) * hw;
                        T ga = vg.data[cc];
                        T dgsum = T(0), dbsum = T(0);
                        for (int i = 0; i < hw; ++i) {
                            T xhat = (xr[i] - mean) * inv;
                            T dxhat = gr[i] * ga;
                            s1 += dxhat;
                            s2 += dxhat * xhat;
                            dgsum += gr[i] * xhat;
                            dbsum += gr[i];
                        }
                        if (need_dg) ensure_grad(n.p1).data[cc] += dgsum;
                        if (need_db) ensure_grad(n.p2).data[cc] += dbsum;
                    }
                    if (need_dx) {
                        auto& gx = ensure_grad(n.p0);
                        T inv_m = T(1) / static_cast<T>(m);
                        for (int ci = 0; ci < cg; ++ci) {
                            int cc = g * cg + ci;
                            const T* xr = vx.ptr() + (static_cast<size_t>(bi) * c + cc) * hw;
                            const T* gr = go.ptr() + (static_cast<size_t>(bi) * c + cc) * hw;
                            T* dx = gx.ptr() + (static_cast<size_t>(bi) * c + cc) * hw;
                            T ga = vg.data[cc];
                            for (int i = 0; i < hw; ++i) {
                                T xhat = (xr[i] - mean) * inv;
                                T dxhat = gr[i] * ga;
                                dx[i] += inv * (dxhat - s1 * inv_m - xhat * s2 * inv_m);
                            }
                        }
                    }
                }
            break;
        }
        case Op::Silu: {
            if (parent_rg(n.p0)) {
                const auto& vx = value(n.p0);
                auto& g0 = ensure_grad(n.p0);
                for (int64_t i = 0; i < go.numel(); ++i) {
                    T s = sigmoid(vx.data[i]);
                    g0.data[i] += go.data[i] * (s * (T(1) + vx.data[i] * (T(1) - s)));
                }
            }
            break;
        }
        case Op::SoftmaxLast: {
            if (parent_rg(n.p0)) {
                auto& g0 = ensure_grad(n.p0);
                const auto& y = n.value;
                int m = y.dim(y.rank() - 1);
                int64_t rows = y.numel() / m;
                for (int64_t r = 0; r < rows; ++r) {
                    const T* yd = y.ptr() + r * m;
                    const T* gd = go.ptr() + r * m;
                    T dot = T(0);
                    for (int i = 0; i < m; ++i) dot += yd[i] * gd[i];
                    T* xd = g0.ptr() + r * m;
                    for (int i = 0; i < m; ++i) xd[i] += yd[i] * (gd[i] - dot);
                }
            }
            break;
        }
        case Op::Film: {
            const auto& vx = value(n.p0);
            const auto& vg = value(n.p1);
            int b = vx.dim(0), c = vx.dim(1), hw = vx.dim(2) * vx.dim(3);
            bool per_batch = vg.rank() == 2;
            for (int bi = 0; bi < b; ++bi)
                for (int ci = 0; ci < c; ++ci) {
                    size_t pi =
                        per_batch ? static_cast<size_t>(bi) * c + ci : static_cast<size_t>(ci);
                    const T* xr = vx.ptr() + (static_cast<size_t>(bi) * c + ci) * hw;
                    const T* gr = go.ptr() + (static_cast<size_t>(bi) * c + ci) * hw;
                    if (parent_rg(n.p0)) {
                        T* dx = ensure_grad(n.p0).ptr() + (static_cast<size_t>(bi) * c + ci) * hw;
                        T ga = vg.data[pi];
                        for (int i = 0; i < hw; ++i) dx[i] += gr[i] * ga;
                    }
                    if (parent_rg(n.p1)) {
                        T s = T(0);
                        for (int i = 0; i < hw; ++i) s += gr[i] * xr[i];
                        ensure_grad(n.p1).data[pi] += s;
                    }
                    if (parent_rg(n.p2)) {
                        T s = T(0);
                        for (int i = 0; i < hw; ++i) s += gr[i];
                        ensure_grad(n.p2).data[pi] += s;
                    }
                }
            break;
        }
        case Op::ConcatCh: {
            int bs = go.dim(0), hw = go.dim(2) * go.dim(3);
            int c1 = value(n.p0).dim(1), c2 = value(n.p1).dim(1);
            if (parent_rg(n.p0)) {
                auto& g0 = ensure_grad(n.p0);
                for (int bi = 0; bi < bs; ++bi) {
                    const T* src = go.ptr() + static_cast<size_t>(bi) * (c1 + c2) * hw;
                    T* dst = g0.ptr() + static_cast<size_t>(bi) * c1 * hw;
                    for (int i = 0; i < c1 * hw; ++i) dst[i] += src[i];
                }
            }
            if (parent_rg(n.p1)) {
                auto& g1 = ensure_grad(n.p1);
                for (int bi = 0; bi < bs; ++bi) {
                    const T* src = go.ptr() + (static_cast<size_t>(bi) * (c1 + c2) + c1) * hw;
                    T* dst = g1.ptr() + static_cast<size_t>(bi) * c2 * hw;
                    for (int i = 0; i < c2 * hw; ++i) dst[i] += src[i];
                }
            }
            break;
        }
        case Op::Upsample2x: {
            if (parent_rg(n.p0)) {
                auto& g0 = ensure_grad(n.p0);
                int bc = value(n.p0).dim(0) * value(n.p0).dim(1);
                int h = value(n.p0).dim(2), w = value(n.p0).dim(3);
                for (int i = 0; i < bc; ++i) {
                    const T* src = go.ptr() + static_cast<size_t>(i) * 4 * h * w;
                    T* dst = g0.ptr() + static_cast<size_t>(i) * h * w;
                    for (int y = 0; y < h; ++y)
                        for (int x = 0; x < w; ++x)
                            dst[y * w + x] += src[(2 * y) * 2 * w + 2 * x] +
                                              src[(2 * y) * 2 * w + 2 * x + 1] +
                                              src[(2 * y + 1) * 2 * w + 2 * x] +
                                              src[(2 * y + 1) * 2 * w + 2 * x + 1];
                }
            }
            break;
        }
        case Op::ToTokens: {
            if (parent_rg(n.p0)) {
                auto& g0 = ensure_grad(n.p0);
                int b = g0.dim(0), c = g0.dim(1), hw = g0.dim(2) * g0.dim(3);
                for (int bi = 0; bi < b; ++bi)
                    for (int ci = 0; ci < c; ++ci) {
                        const T* src = go.ptr() + static_cast<size_t>(bi) * hw * c + ci;
                        T* dst = g0.ptr() + (static_cast<size_t>(bi) * c + ci) * hw;
                        for (int i = 0; i < hw; ++i) dst[i] += src[static_cast<size_t>(i) * c];
                    }
            }
            break;
        }
        case Op::FromTokens: {
            if (parent_rg(n.p0)) {
                auto& g0 = ensure_grad(n.p0);
                int b = go.dim(0), c = go.dim(1), hw = go.dim(2) * go.dim(3);
                for (int bi = 0; bi < b; ++bi)
                    for (int ci = 0; ci < c; ++ci) {
                        const T* src = go.ptr() + (static_cast<size_t>(bi) * c + ci) * hw;
                        T* dst = g0.ptr() + static_cast<size_t>(bi) * hw * c + ci;
                        for (int i = 0; i < hw; ++i) dst[static_cast<size_t>(i) * c] += src[i];
                    }
            }
            break;
        }
        case Op::Reshape: {
            if (parent_rg(n.p0)) {
                auto& g0 = ensure_grad(n.p0);
                for (int64_t i = 0; i < go.numel(); ++i) g0.data[i] += go.data[i];
            }
            break;
        }
        case Op::SumAll: {
            if (parent_rg(n.p0)) {
                auto& g0 = ensure_grad(n.p0);
                T g = go.data[0];
                for (auto& v : g0.data) v += g;
            }
            break;
        }
        case Op::MeanAll: {
            if (parent_rg(n.p0)) {
                auto& g0 = ensure_grad(n.p0);
                T g = go.data[0] / static_cast<T>(g0.numel());
                for (auto& v : g0.data) v += g;
            }
            break;
        }
        case Op::Mse: {
            const auto& va = value(n.p0);
            const auto& vb = value(n.p1);
            T g2 = go.data[0] * T(2) / static_cast<T>(va.numel());
            if (parent_rg(n.p0)) {
                auto& g0 = ensure_grad(n.p0);
                for (int64_t i = 0; i < va.numel(); ++i)
                    g0.data[i] += g2 * (va.data[i] - vb.data[i]);
            }
            if (parent_rg(n.p1)) {
                auto& g1 = ensure_grad(n.p1);
                for (int64_t i = 0; i < va.numel(); ++i)
                    g1.data[i] -= g2 * (va.data[i] - vb.data[i]);
            }
            break;
        }
    }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace fdwm
