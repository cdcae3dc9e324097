#pragma once

#include <string>
#include <vector>

#include "fdwm/tape.hpp"

namespace fdwm {

// Named parameter registry. Creation order is deterministic and defines the
// checkpoint block order.
template <typename T>
struct ParamStore {
    struct Entry {
        std::string name;
        Tensor<T> value;
    };
    std::vector<Entry> entries;

    int add(std::string name, Tensor<T> v);
    int find(const std::string& name) const;
    size_t size() const { return entries.size(); }
    int64_t total_params() const;
};

// Binds store entries to tape leaves, one leaf per entry per tape.
template <typename T>
class ParamCtx {
public:
    ParamCtx(Tape<T>& tape, ParamStore<T>& store, bool trainable)
        : tape_(&tape), store_(&store), trainable_(trainable), ids_(store.size(), -1) {}

    typename Tape<T>::Id use(int idx);
    bool bound(int idx) const { return ids_[static_cast<size_t>(idx)] >= 0; }
    typename Tape<T>::Id id(int idx) const { return ids_[static_cast<size_t>(idx)]; }
    Tape<T>& tape() { return *tape_; }
    ParamStore<T>& store() { return *store_; }

    // Post-backward gradient for an entry; zero tensor when the entry was
    // never used or sits off the loss path.
    Tensor<T> grad_of(int idx);

private:
    Tape<T>* tape_;
    ParamStore<T>* store_;
    bool trainable_;
    std::vector<typename Tape<T>::Id> ids_;
};

// fan-in scaled uniform init, final layers zero-initialized where requested
template <typename T>
Tensor<T> init_conv_weight(int out_ch, int in_ch, int k, Rng& rng);
template <typename T>
Tensor<T> init_linear_weight(int in_dim, int out_dim, Rng& rng);

template <typename T>
struct Conv2dLayer {
    int w = -1, b = -1;
    int stride = 1, pad = 0;
    Conv2dLayer() = default;
    Conv2dLayer(ParamStore<T>& ps, const std::string& name, int in_ch, int out_ch, int k,
                int stride, int pad, Rng& rng, bool zero_init = false);
    typename Tape<T>::Id forward(ParamCtx<T>& ctx, typename Tape<T>::Id x) const;
};

template <typename T>
struct LinearLayer {
    int w = -1, b = -1;
    LinearLayer() = default;
    LinearLayer(ParamStore<T>& ps, const std::string& name, int in_dim, int out_dim, Rng& rng,
                bool zero_init = false);
    typename Tape<T>::Id forward(ParamCtx<T>& ctx, typename Tape<T>::Id x) const;
};

template <typename T>
struct GroupNormLayer {
    int gamma = -1, beta = -1;
    int groups = 8;
    GroupNormLayer() = default;
    GroupNormLayer(ParamStore<T>& ps, const std::string& name, int channels, int groups);
    typename Tape<T>::Id forward(ParamCtx<T>& ctx, typename Tape<T>::Id x) const;
};

// out = tokens + Wo * softmax(Q K^T / sqrt(dk)) V, queries from the features,
// keys/values from the context sequence.
template <typename T>
typename Tape<T>::Id cross_attention(Tape<T>& g, typename Tape<T>::Id tokens,
                                     typename Tape<T>::Id context, typename Tape<T>::Id wq,
                                     typename Tape<T>::Id wk, typename Tape<T>::Id wv,
                                     typename Tape<T>::Id wo);

template <typename T>
struct CrossAttentionLayer {
    int wq = -1, wk = -1, wv = -1, wo = -1;
    CrossAttentionLayer() = default;
    CrossAttentionLayer(ParamStore<T>& ps, const std::string& name, int channels, int ctx_dim,
                        Rng& rng);
    // x is [B,C,H,W]; context tokens are [B,M,ctx_dim]
    typename Tape<T>::Id forward(ParamCtx<T>& ctx, typename Tape<T>::Id x,
                                 typename Tape<T>::Id context) const;
};

// Per-sample affine modulation driven by an embedding vector; the projections
// are zero-initialized so the layer starts as identity.
template <typename T>
struct FilmCondLayer {
    LinearLayer<T> gamma_l, beta_l;
    FilmCondLayer() = default;
    FilmCondLayer(ParamStore<T>& ps, const std::string& name, int channels, int emb_dim, Rng& rng);
    typename Tape<T>::Id forward(ParamCtx<T>& ctx, typename Tape<T>::Id x,
                                 typename Tape<T>::Id emb) const;
};

template <typename T>
struct ResBlock {
    GroupNormLayer<T> gn1, gn2;
    Conv2dLayer<T> conv1, conv2;
    LinearLayer<T> emb_proj;
    Conv2dLayer<T> skip;
    bool has_emb = false, has_skip = false;
    ResBlock() = default;
    ResBlock(ParamStore<T>& ps, const std::string& name, int in_ch, int out_ch, int groups,
             int emb_dim, Rng& rng);
    typename Tape<T>::Id forward(ParamCtx<T>& ctx, typename Tape<T>::Id x,
                                 typename Tape<T>::Id emb) const;
};

struct UNetSpec {
    int in_ch = 4;
    int out_ch = 3;
    int h = 32, w = 32;
    int base = 16;
    std::vector<int> mults = {1, 2, 2};
    int num_res = 1;
    std::vector<int> attn_res = {8};
    int ctx_dim = 0;     // 0: no action conditioning
    int act_in_dim = 2;  // raw action vector width
    int temb_dim = 0;    // 0: no step embedding
    int sin_dim = 32;   // raw sinusoidal embedding width
    int groups = 8;
    bool film_action = false;
};

template <typename T>
struct UNet {
    UNetSpec spec;

    Conv2dLayer<T> stem;
    struct DownLevel {
        std::vector<ResBlock<T>> res;
        std::vector<CrossAttentionLayer<T>> attn;
        std::vector<FilmCondLayer<T>> film;
        Conv2dLayer<T> down;
        bool has_down = false;
        bool has_attn = false;
    };
    std::vector<DownLevel> down;
    ResBlock<T> mid1, mid2;
    CrossAttentionLayer<T> mid_attn;
    FilmCondLayer<T> mid_film;
    bool mid_has_attn = false;
    struct UpLevel {
        ResBlock<T> merge;
        CrossAttentionLayer<T> attn;
        FilmCondLayer<T> film;
        Conv2dLayer<T> up;
        bool has_attn = false;
        bool has_up = false;
    };
    std::vector<UpLevel> up;
    GroupNormLayer<T> out_gn;
    Conv2dLayer<T> out_conv;
    LinearLayer<T> act_l1, act_l2;    // action embedding MLP
    LinearLayer<T> temb_l1, temb_l2;  // step embedding MLP

    UNet() = default;
    UNet(ParamStore<T>& ps, const std::string& prefix, UNetSpec s, Rng& rng);

    // action: [B,action_dim] or -1; ksin: [B,sin_dim] or -1 -> [B,out_ch,H,W]
    typename Tape<T>::Id forward(ParamCtx<T>& ctx, typename Tape<T>::Id x,
                                 typename Tape<T>::Id action, typename Tape<T>::Id ksin) const;
};

// sinusoidal embedding of an integer step, [sin_dim]
template <typename T>
Tensor<T> sinusoidal_embedding(int k, int dim);

}  // namespace fdwm
