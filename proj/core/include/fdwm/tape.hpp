#pragma once

#include <cstdint>
#include <vector>

#include "fdwm/tensor.hpp"

namespace fdwm {

// Reverse-mode autodiff over a flat append-only tape. Node indices are
// topological by construction: parents always precede children.
template <typename T>
class Tape {
public:
    using Id = int32_t;

    enum class Op : uint8_t {
        Leaf,
        Add,
        Sub,
        Mul,
        Scale,
        AddChannelBias,  // x[B,C,H,W] + e[C] or e[B,C]
        AddRowBias,      // x[...,d] + b[d]
        Matmul,          // a[...,K] x b[K,M]
        Bmm,             // a[B,N,K] x b[B,K,M]
        TransposeLast2,
        Conv2d,
        GroupNorm,
        Silu,
        SoftmaxLast,
        Film,
        ConcatCh,
        Upsample2x,
        ToTokens,
        FromTokens,
        Reshape,
        SumAll,
        MeanAll,
        Mse,
    };

    Id leaf(Tensor<T> v);
    Id leaf(Tensor<T> v, bool requires_grad);

    Id add(Id a, Id b);
    Id sub(Id a, Id b);
    Id mul(Id a, Id b);
    Id scale(Id a, T s);
    Id add_channel_bias(Id x, Id e);
    Id add_row_bias(Id x, Id b);
    Id matmul(Id a, Id b);
    Id bmm(Id a, Id b);
    Id transpose_last2(Id a);
    Id conv2d(Id x, Id w, Id b, int stride, int pad);
    Id group_norm(Id x, Id gamma, Id beta, int groups);
    Id silu(Id x);
    Id softmax_last(Id x);
    Id film(Id x, Id gamma, Id beta);
    Id concat_ch(Id a, Id b);
    Id upsample2x(Id x);
    Id to_tokens(Id x);
    Id from_tokens(Id x, int h, int w);
    Id reshape(Id x, std::vector<int> shape);
    Id sum_all(Id x);
    Id mean_all(Id x);
    Id mse(Id a, Id b);

    const Tensor<T>& value(Id id) const { return node(id).value; }
    bool requires_grad(Id id) const { return node(id).requires_grad; }

    // Backpropagates from a scalar loss. Nodes off every path to the loss
    // keep an exactly-zero gradient.
    void backward(Id loss);

    const Tensor<T>& grad(Id id);

    size_t size() const { return nodes_.size(); }
    void reset();

private:
    struct Node {
        Op op = Op::Leaf;
        Id p0 = -1, p1 = -1, p2 = -1;
        int a0 = 0, a1 = 0;
        T s0 = T(0);
        Tensor<T> value;
        Tensor<T> aux;
        bool requires_grad = false;
    };

    std::vector<Node> nodes_;
    std::vector<Tensor<T>> grads_;

    Node& node(Id id);
    const Node& node(Id id) const;
    Id push(Node n);
    Tensor<T>& ensure_grad(Id id);
    void accumulate(Id parent, const Tensor<T>& contribution);
    void backward_node(Id id);
};

using TapeF = Tape<float>;
using TapeD = Tape<double>;

}  // namespace fdwm
