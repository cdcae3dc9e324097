#include "fdwm/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace fdwm {

template <typename T>
int ParamStore<T>::add(std::string name, Tensor<T> v) {
    if (find(name) >= 0) throw std::invalid_argument("param store: duplicate name " + name);
    entries.push_back({std::move(name), std::move(v)});
    return static_cast<int>(entries.size() - 1);
}

template <typename T>
int ParamStore<T>::find(const std::string& name) const {
    for (size_t i = 0; i < entries.size(); ++i)
        if (entries[i].name == name) return static_cast<int>(i);
    return -1;
}

template <typename T>
int64_t ParamStore<T>::total_params() const {
    int64_t n = 0;
    for (const auto& e : entries) n += e.value.numel();
    return n;
}

template <typename T>
typename Tape<T>::Id ParamCtx<T>::use(int idx) {
    auto& id = ids_[static_cast<size_t>(idx)];
    if (id < 0) {
        Tensor<T> v = store_->entries[static_cast<size_t>(idx)].value;
        v.requires_grad = trainable_;
        id = tape_->leaf(std::move(v));
    }
    return id;
}

template <typename T>
Tensor<T> ParamCtx<T>::grad_of(int idx) {
    if (!bound(idx)) return Tensor<T>::zeros(store_->entries[static_cast<size_t>(idx)].value.shape);
    return tape_->grad(ids_[static_cast<size_t>(idx)]);
}

template <typename T>
Tensor<T> init_conv_weight(int out_ch, int in_ch, int k, Rng& rng) {
    T bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(in_ch) * k * k));
    return Tensor<T>::rand_uniform({out_ch, in_ch, k, k}, rng, -bound, bound);
}

template <typename T>
Tensor<T> init_linear_weight(int in_dim, int out_dim, Rng& rng) {
    T bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(in_dim)));
    return Tensor<T>::rand_uniform({in_dim, out_dim}, rng, -bound, bound);
}

template <typename T>
Conv2dLayer<T>::Conv2dLayer(ParamStore<T>& ps, const std::string& name, int in_ch, int out_ch,
                            int k, int stride_, int pad_, Rng& rng, bool zero_init)
    : stride(stride_), pad(pad_) {
    Tensor<T> wt = zero_init ? Tensor<T>::zeros({out_ch, in_ch, k, k})
                             : init_conv_weight<T>(out_ch, in_ch, k, rng);
    w = ps.add(name + ".w", std::move(wt));
    b = ps.add(name + ".b", Tensor<T>::zeros({out_ch}));
}

template <typename T>
typename Tape<T>::Id Conv2dLayer<T>::forward(ParamCtx<T>& ctx, typename Tape<T>::Id x) const {
    return ctx.tape().conv2d(x, ctx.use(w), ctx.use(b), stride, pad);
}

template <typename T>
LinearLayer<T>::LinearLayer(ParamStore<T>& ps, const std::string& name, int in_dim, int out_dim,
                            Rng& rng, bool zero_init) {
    Tensor<T> wt = zero_init ? Tensor<T>::zeros({in_dim, out_dim})
                             : init_linear_weight<T>(in_dim, out_dim, rng);
    w = ps.add(name + ".w", std::move(wt));
    b = ps.add(name + ".b", Tensor<T>::zeros({out_dim}));
}

template <typename T>
typename Tape<T>::Id LinearLayer<T>::forward(ParamCtx<T>& ctx, typename Tape<T>::Id x) const {
    auto& g = ctx.tape();
    return g.add_row_bias(g.matmul(x, ctx.use(w)), ctx.use(b));
}

template <typename T>
GroupNormLayer<T>::GroupNormLayer(ParamStore<T>& ps, const std::string& name, int channels,
                                  int groups_)
    : groups(groups_) {
    gamma = ps.add(name + ".g", Tensor<T>::full({channels}, T(1)));
    beta = ps.add(name + ".b", Tensor<T>::zeros({channels}));
}

template <typename T>
typename Tape<T>::Id GroupNormLayer<T>::forward(ParamCtx<T>& ctx, typename Tape<T>::Id x) const {
    return ctx.tape().group_norm(x, ctx.use(gamma), ctx.use(beta), groups);
}

template <typename T>
typename Tape<T>::Id cross_attention(Tape<T>& g, typename Tape<T>::Id tokens,
                                     typename Tape<T>::Id context, typename Tape<T>::Id wq,
                                     typename Tape<T>::Id wk, typename Tape<T>::Id wv,
                                     typename Tape<T>::Id wo) {
    int dk = g.value(wq).dim(1);
    auto q = g.matmul(tokens, wq);                         // [B,N,dk]
    auto k = g.matmul(context, wk);                        // [B,M,dk]
    auto v = g.matmul(context, wv);                        // [B,M,dv]
    auto scores = g.scale(g.bmm(q, g.transpose_last2(k)),  // [B,N,M]
                          static_cast<T>(1.0 / std::sqrt(static_cast<double>(dk))));
    auto attn = g.softmax_last(scores);
    auto mixed = g.matmul(g.bmm(attn, v), wo);  // [B,N,C]
    return g.add(tokens, mixed);
}

template <typename T>
CrossAttentionLayer<T>::CrossAttentionLayer(ParamStore<T>& ps, const std::string& name,
                                            int channels, int ctx_dim, Rng& rng) {
    wq = ps.add(name + ".wq", init_linear_weight<T>(channels, channels, rng));
    wk = ps.add(name + ".wk", init_linear_weight<T>(ctx_dim, channels, rng));
    wv = ps.add(name + ".wv", init_linear_weight<T>(ctx_dim, channels, rng));
    wo = ps.add(name + ".wo", init_linear_weight<T>(channels, channels, rng));
}

template <typename T>
typename Tape<T>::Id CrossAttentionLayer<T>::forward(ParamCtx<T>& ctx, typename Tape<T>::Id x,
                                                     typename Tape<T>::Id context) const {
    auto& g = ctx.tape();
    int h = g.value(x).dim(2), w = g.value(x).dim(3);
    auto tokens = g.to_tokens(x);
    auto out = cross_attention(g, tokens, context, ctx.use(wq), ctx.use(wk), ctx.use(wv),
                               ctx.use(wo));
    return g.from_tokens(out, h, w);
}

template <typename T>
FilmCondLayer<T>::FilmCondLayer(ParamStore<T>& ps, const std::string& name, int channels,
                                int emb_dim, Rng& rng) {
    gamma_l = LinearLayer<T>(ps, name + ".gamma", emb_dim, channels, rng, /*zero_init=*/true);
    beta_l = LinearLayer<T>(ps, name + ".beta", emb_dim, channels, rng, /*zero_init=*/true);
}

template <typename T>
typename Tape<T>::Id FilmCondLayer<T>::forward(ParamCtx<T>& ctx, typename Tape<T>::Id x,
                                               typename Tape<T>::Id emb) const {
    auto& g = ctx.tape();
    auto dgamma = gamma_l.forward(ctx, emb);  // [B,C]
    auto beta = beta_l.forward(ctx, emb);
    auto ones = g.leaf(Tensor<T>::full(g.value(dgamma).shape, T(1)), false);
    return g.film(x, g.add(ones, dgamma), beta);
}

template <typename T>
ResBlock<T>::ResBlock(ParamStore<T>& ps, const std::string& name, int in_ch, int out_ch,
                      int groups, int emb_dim, Rng& rng) {
    gn1 = GroupNormLayer<T>(ps, name + ".gn1", in_ch, groups);
    conv1 = Conv2dLayer<T>(ps, name + ".conv1", in_ch, out_ch, 3, 1, 1, rng);
    gn2 = GroupNormLayer<T>(ps, name + ".gn2", out_ch, groups);
    conv2 = Conv2dLayer<T>(ps, name + ".conv2", out_ch, out_ch, 3, 1, 1, rng);
    if (emb_dim > 0) {
        emb_proj = LinearLayer<T>(ps, name + ".emb", emb_dim, out_ch, rng);
        has_emb = true;
    }
    if (in_ch != out_ch) {
        skip = Conv2dLayer<T>(ps, name + ".skip", in_ch, out_ch, 1, 1, 0, rng);
        has_skip = true;
    }
}

template <typename T>
typename Tape<T>::Id ResBlock<T>::forward(ParamCtx<T>& ctx, typename Tape<T>::Id x,
                                          typename Tape<T>::Id emb) const {
    auto& g = ctx.tape();
    auto h = conv1.forward(ctx, g.silu(gn1.forward(ctx, x)));
    if (has_emb && emb >= 0) h = g.add_channel_bias(h, emb_proj.forward(ctx, g.silu(emb)));
    h = conv2.forward(ctx, g.silu(gn2.forward(ctx, h)));
    auto sk = has_skip ? skip.forward(ctx, x) : x;
    return g.add(sk, h);
}

namespace {
bool contains(const std::vector<int>& v, int x) {
    for (int e : v)
        if (e == x) return true;
    return false;
}
}  // namespace

template <typename T>
UNet<T>::UNet(ParamStore<T>& ps, const std::string& prefix, UNetSpec s, Rng& rng) : spec(s) {
    const int levels = static_cast<int>(s.mults.size());
    if (levels < 1) throw std::invalid_argument("unet: need at least one level");
    int div = 1 << (levels - 1);
    if (s.h % div != 0 || s.w % div != 0)
        throw std::invalid_argument("unet: extents not divisible by 2^(levels-1)");

    stem = Conv2dLayer<T>(ps, prefix + ".stem", s.in_ch, s.base * s.mults[0], 3, 1, 1, rng);

    if (s.ctx_dim > 0) {
        act_l1 = LinearLayer<T>(ps, prefix + ".act1", s.act_in_dim, s.ctx_dim, rng);
        act_l2 = LinearLayer<T>(ps, prefix + ".act2", s.ctx_dim, s.ctx_dim, rng);
    }
    if (s.temb_dim > 0) {
        temb_l1 = LinearLayer<T>(ps, prefix + ".temb1", s.sin_dim, s.temb_dim, rng);
        temb_l2 = LinearLayer<T>(ps, prefix + ".temb2", s.temb_dim, s.temb_dim, rng);
    }

    int cur = s.base * s.mults[0];
    for (int i = 0; i < levels; ++i) {
        DownLevel lvl;
        int ch = s.base * s.mults[static_cast<size_t>(i)];
        int extent = s.h >> i;
        lvl.has_attn = s.ctx_dim > 0 && contains(s.attn_res, extent);
        for (int r = 0; r < s.num_res; ++r) {
            std::string rn = prefix + ".down" + std::to_string(i) + ".res" + std::to_string(r);
            lvl.res.emplace_back(ps, rn, cur, ch, s.groups, s.temb_dim, rng);
            cur = ch;
            if (lvl.has_attn) {
                if (s.film_action)
                    lvl.film.emplace_back(ps, rn + ".film", ch, s.ctx_dim, rng);
                else
                    lvl.attn.emplace_back(ps, rn + ".attn", ch, s.ctx_dim, rng);
            }
        }
        if (i + 1 < levels) {
            int next_ch = s.base * s.mults[static_cast<size_t>(i) + 1];
            lvl.down = Conv2dLayer<T>(ps, prefix + ".down" + std::to_string(i) + ".ds", cur,
                                      next_ch, 3, 2, 1, rng);
            lvl.has_down = true;
            cur = next_ch;
        }
        down.push_back(std::move(lvl));
    }

    int mid_extent = s.h >> (levels - 1);
    mid_has_attn = s.ctx_dim > 0 && contains(s.attn_res, mid_extent);
    mid1 = ResBlock<T>(ps, prefix + ".mid1", cur, cur, s.groups, s.temb_dim, rng);
    if (mid_has_attn) {
        if (s.film_action)
            mid_film = FilmCondLayer<T>(ps, prefix + ".mid.film", cur, s.ctx_dim, rng);
        else
            mid_attn = CrossAttentionLayer<T>(ps, prefix + ".mid.attn", cur, s.ctx_dim, rng);
    }
    mid2 = ResBlock<T>(ps, prefix + ".mid2", cur, cur, s.groups, s.temb_dim, rng);

    for (int i = levels - 1; i >= 0; --i) {
        UpLevel lvl;
        int ch = s.base * s.mults[static_cast<size_t>(i)];
        int extent = s.h >> i;
        std::string un = prefix + ".up" + std::to_string(i);
        lvl.merge = ResBlock<T>(ps, un + ".merge", cur + ch, ch, s.groups, s.temb_dim, rng);
        cur = ch;
        lvl.has_attn = s.ctx_dim > 0 && contains(s.attn_res, extent);
        if (lvl.has_attn) {
            if (s.film_action)
                lvl.film = FilmCondLayer<T>(ps, un + ".film", ch, s.ctx_dim, rng);
            else
                lvl.attn = CrossAttentionLayer<T>(ps, un + ".attn", ch, s.ctx_dim, rng);
        }
        if (i > 0) {
            int next_ch = s.base * s.mults[static_cast<size_t>(i) - 1];
            lvl.up = Conv2dLayer<T>(ps, un + ".us", cur, next_ch, 3, 1, 1, rng);
            lvl.has_up = true;
            cur = next_ch;
        }
        up.push_back(std::move(lvl));
    }

    out_gn = GroupNormLayer<T>(ps, prefix + ".out.gn", cur, s.groups);
    out_conv = Conv2dLayer<T>(ps, prefix + ".out.conv", cur, s.out_ch, 3, 1, 1, rng,
                              /*zero_init=*/true);
}

template <typename T>
typename Tape<T>::Id UNet<T>::forward(ParamCtx<T>& ctx, typename Tape<T>::Id x,
                                      typename Tape<T>::Id action,
                                      typename Tape<T>::Id ksin) const {
    auto& g = ctx.tape();
    const auto& vx = g.value(x);
    if (vx.dim(1) != spec.in_ch) throw std::invalid_argument("unet: input channel mismatch");
    if (vx.dim(2) != spec.h || vx.dim(3) != spec.w)
        throw std::invalid_argument("unet: input extent mismatch");

    typename Tape<T>::Id ctx_tokens = -1;
    typename Tape<T>::Id act_emb = -1;
    if (spec.ctx_dim > 0) {
        if (action < 0) throw std::invalid_argument("unet: action conditioning required");
        auto e = act_l2.forward(ctx, g.silu(act_l1.forward(ctx, action)));  // [B,E]
        act_emb = e;
        int bsz = g.value(e).dim(0);
        ctx_tokens = g.reshape(e, {bsz, 1, spec.ctx_dim});
    }
    typename Tape<T>::Id temb = -1;
    if (spec.temb_dim > 0) {
        if (ksin < 0) throw std::invalid_argument("unet: step embedding required");
        temb = temb_l2.forward(ctx, g.silu(temb_l1.forward(ctx, ksin)));  // [B,T]
    }

    auto cond = [&](typename Tape<T>::Id h, const CrossAttentionLayer<T>& at,
                    const FilmCondLayer<T>& fl) {
        if (spec.film_action) return fl.forward(ctx, h, act_emb);
        return at.forward(ctx, h, ctx_tokens);
    };

    auto h = stem.forward(ctx, x);
    std::vector<typename Tape<T>::Id> skips;
    for (size_t i = 0; i < down.size(); ++i) {
        const auto& lvl = down[i];
        for (size_t r = 0; r < lvl.res.size(); ++r) {
            h = lvl.res[r].forward(ctx, h, temb);
            if (lvl.has_attn)
                h = spec.film_action ? lvl.film[r].forward(ctx, h, act_emb)
                                     : lvl.attn[r].forward(ctx, h, ctx_tokens);
        }
        skips.push_back(h);
        if (lvl.has_down) h = lvl.down.forward(ctx, h);
    }

    h = mid1.forward(ctx, h, temb);
    if (mid_has_attn) h = cond(h, mid_attn, mid_film);
    h = mid2.forward(ctx, h, temb);

    for (size_t u = 0; u < up.size(); ++u) {
        const auto& lvl = up[u];
        h = g.concat_ch(h, skips[skips.size() - 1 - u]);
        h = lvl.merge.forward(ctx, h, temb);
        if (lvl.has_attn) h = cond(h, lvl.attn, lvl.film);
        if (lvl.has_up) h = lvl.up.forward(ctx, g.upsample2x(h));
    }

    return out_conv.forward(ctx, g.silu(out_gn.forward(ctx, h)));
}

template <typename T>
Tensor<T> sinusoidal_embedding(int k, int dim) {
    Tensor<T> out({dim});
    int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        double freq = std::exp(-std::log(10000.0) * i / half);
        out.data[static_cast<size_t>(i)] = static_cast<T>(std::sin(k * freq));
        out.data[static_cast<size_t>(half + i)] = static_cast<T>(std::cos(k * freq));
    }
    return out;
}

template struct ParamStore<float>;
template struct ParamStore<double>;
template class ParamCtx<float>;
template class ParamCtx<double>;
template Tensor<float> init_conv_weight<float>(int, int, int, Rng&);
template Tensor<double> init_conv_weight<double>(int, int, int, Rng&);
template Tensor<float> init_linear_weight<float>(int, int, Rng&);
template Tensor<double> init_linear_weight<double>(int, int, Rng&);
template struct Conv2dLayer<float>;
template struct Conv2dLayer<double>;
template struct LinearLayer<float>;
template struct LinearLayer<double>;
template struct GroupNormLayer<float>;
template struct GroupNormLayer<double>;
template typename Tape<float>::Id cross_attention<float>(Tape<float>&, Tape<float>::Id,
                                                         Tape<float>::Id, Tape<float>::Id,
                                                         Tape<float>::Id, Tape<float>::Id,
                                                         Tape<float>::Id);
template typename Tape<double>::Id cross_attention<double>(Tape<double>&, Tape<double>::Id,
                                                           Tape<double>::Id, Tape<double>::Id,
                                                           Tape<double>::Id, Tape<double>::Id,
                                                           Tape<double>::Id);
template struct CrossAttentionLayer<float>;
template struct CrossAttentionLayer<double>;
template struct FilmCondLayer<float>;
template struct FilmCondLayer<double>;
template struct ResBlock<float>;
template struct ResBlock<double>;
template struct UNet<float>;
template struct UNet<double>;
template Tensor<float> sinusoidal_embedding<float>(int, int);
template Tensor<double> sinusoidal_embedding<double>(int, int);

}  // namespace fdwm
