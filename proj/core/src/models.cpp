#include "fdwm/models.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "fdwm/rng.hpp"

namespace fdwm {

using nlohmann::json;

std::string mode_to_string(Mode m) {
    switch (m) {
        case Mode::Flowdreamer: return "flowdreamer";
        case Mode::Vanilla: return "vanilla";
        case Mode::Septrain: return "septrain";
    }
    return "flowdreamer";
}

Mode mode_from_string(const std::string& s) {
    if (s == "flowdreamer") return Mode::Flowdreamer;
    if (s == "vanilla") return Mode::Vanilla;
    if (s == "septrain") return Mode::Septrain;
    throw std::invalid_argument("unknown mode: " + s +
                                " (expected flowdreamer|vanilla|septrain)");
}

void ModelConfig::validate() const {
    if (channel_multipliers.empty()) throw std::invalid_argument("model: no channel multipliers");
    int div = 1 << (channel_multipliers.size() - 1);
    if (h % div != 0 || w % div != 0)
        throw std::invalid_argument("model: extents must divide by 2^(levels-1)");
    if (action_dim < 1 || action_embed_dim < 1 || base_channels < 8 || flow_base_channels < 8)
        throw std::invalid_argument("model: implausible architecture field");
}

std::string ModelConfig::to_json() const {
    json j{{"h", h},
           {"w", w},
           {"base_channels", base_channels},
           {"flow_base_channels", flow_base_channels},
           {"channel_multipliers", channel_multipliers},
           {"attention_resolutions", attention_resolutions},
           {"num_res_blocks", num_res_blocks},
           {"action_dim", action_dim},
           {"action_embed_dim", action_embed_dim},
           {"cond_downsample_channels", cond_downsample_channels},
           {"sin_dim", sin_dim},
           {"temb_dim", temb_dim},
           {"mode", mode_to_string(mode)},
           {"film_action", film_action}};
    return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& s) {
    json j = json::parse(s);
    ModelConfig c;
    c.h = j.at("h");
    c.w = j.at("w");
    c.base_channels = j.at("base_channels");
    c.flow_base_channels = j.at("flow_base_channels");
    c.channel_multipliers = j.at("channel_multipliers").get<std::vector<int>>();
    c.attention_resolutions = j.at("attention_resolutions").get<std::vector<int>>();
    c.num_res_blocks = j.at("num_res_blocks");
    c.action_dim = j.at("action_dim");
    c.action_embed_dim = j.at("action_embed_dim");
    c.cond_downsample_channels = j.at("cond_downsample_channels");
    c.sin_dim = j.at("sin_dim");
    c.temb_dim = j.at("temb_dim");
    c.mode = mode_from_string(j.at("mode"));
    c.film_action = j.at("film_action");
    return c;
}

template <typename T>
Tensor<T> frames_to_tensor(const std::vector<const RgbdFrame*>& frames, const NormStats& ns) {
    if (frames.empty()) throw std::invalid_argument("frames_to_tensor: empty batch");
    int h = frames[0]->h, w = frames[0]->w;
    int b = static_cast<int>(frames.size());
    Tensor<T> t({b, 4, h, w});
    double span = std::max(1e-9, ns.d_max - ns.d_min);
    for (int bi = 0; bi < b; ++bi) {
        const RgbdFrame& f = *frames[static_cast<size_t>(bi)];
        if (f.h != h || f.w != w) throw std::invalid_argument("frames_to_tensor: extent mismatch");
        for (int v = 0; v < h; ++v)
            for (int u = 0; u < w; ++u) {
                for (int c = 0; c < 3; ++c)
                    t.at4(bi, c, v, u) = static_cast<T>(2.0 * f.rgb_at(v, u, c) - 1.0);
                t.at4(bi, 3, v, u) =
                    static_cast<T>(2.0 * (f.depth_at(v, u) - ns.d_min) / span - 1.0);
            }
    }
    return t;
}

template <typename T>
RgbdFrame tensor_to_frame(const Tensor<T>& t, int batch_index, const NormStats& ns) {
    int h = t.dim(2), w = t.dim(3);
    RgbdFrame f = RgbdFrame::blank(h, w);
    double span = std::max(1e-9, ns.d_max - ns.d_min);
    for (int v = 0; v < h; ++v)
        for (int u = 0; u < w; ++u) {
            for (int c = 0; c < 3; ++c) {
                double x = (static_cast<double>(t.at4(batch_index, c, v, u)) + 1.0) / 2.0;
                f.rgb_at(v, u, c) = static_cast<float>(std::clamp(x, 0.0, 1.0));
            }
            double d =
                ns.d_min + (static_cast<double>(t.at4(batch_index, 3, v, u)) + 1.0) / 2.0 * span;
            f.depth_at(v, u) = static_cast<float>(std::clamp(d, 1e-4, ns.d_max));
            f.validity[static_cast<size_t>(v) * w + u] = 1;
        }
    return f;
}

template <typename T>
Tensor<T> flows_to_tensor(const std::vector<const SceneFlowField*>& flows, int h, int w) {
    if (flows.empty()) throw std::invalid_argument("flows_to_tensor: empty batch");
    int b = static_cast<int>(flows.size());
    Tensor<T> t({b, 3, h, w});
    for (int bi = 0; bi < b; ++bi) {
        const SceneFlowField& f = *flows[static_cast<size_t>(bi)];
        if (f.h != h || f.w != w) throw std::invalid_argument("flows_to_tensor: extent mismatch");
        for (int v = 0; v < h; ++v)
            for (int u = 0; u < w; ++u)
                for (int c = 0; c < 3; ++c)
                    t.at4(bi, c, v, u) = static_cast<T>(f.at(v, u, c));
    }
    return t;
}

template <typename T>
SceneFlowField tensor_to_flow(const Tensor<T>& t, int batch_index) {
    int h = t.dim(2), w = t.dim(3);
    SceneFlowField f = SceneFlowField::zero(h, w);
    for (int v = 0; v < h; ++v)
        for (int u = 0; u < w; ++u)
            for (int c = 0; c < 3; ++c)
                f.at(v, u, c) = static_cast<float>(t.at4(batch_index, c, v, u));
    return f;
}

template <typename T>
Tensor<T> actions_to_tensor(const std::vector<Action>& acts, double a_max) {
    if (acts.empty()) throw std::invalid_argument("actions_to_tensor: empty batch");
    Tensor<T> t({static_cast<int>(acts.size()), 2});
    for (size_t i = 0; i < acts.size(); ++i) {
        t.data[i * 2] = static_cast<T>(acts[i].dx / a_max);
        t.data[i * 2 + 1] = static_cast<T>(acts[i].dy / a_max);
    }
    return t;
}

template <typename T>
Tensor<T> ksin_batch(const std::vector<int>& ks, int sin_dim) {
    Tensor<T> t({static_cast<int>(ks.size()), sin_dim});
    for (size_t i = 0; i < ks.size(); ++i) {
        Tensor<T> e = sinusoidal_embedding<T>(ks[i], sin_dim);
        std::copy(e.data.begin(), e.data.end(), t.data.begin() + static_cast<int64_t>(i) * sin_dim);
    }
    return t;
}

template <typename T>
int WorldModel<T>::cond_channels() const {
    return cfg.mode == Mode::Vanilla ? cfg.cond_downsample_channels
                                     : cfg.cond_downsample_channels + 3;
}

template <typename T>
int WorldModel<T>::denoiser_in_channels() const {
    return 4 + 4 + cond_channels();
}

template <typename T>
WorldModel<T>::WorldModel(ModelConfig cfg_, NormStats norm_, uint64_t seed)
    : cfg(cfg_), norm(norm_) {
    cfg.validate();
    Rng rng(mix_seed(seed, 0x6d6f64656cULL));

    if (cfg.mode != Mode::Vanilla) {
        UNetSpec fs;
        fs.in_ch = 4;
        fs.out_ch = 3;
        fs.h = cfg.h;
        fs.w = cfg.w;
        fs.base = cfg.flow_base_channels;
        fs.mults = cfg.channel_multipliers;
        fs.num_res = cfg.num_res_blocks;
        fs.attn_res = cfg.attention_resolutions;
        fs.ctx_dim = cfg.action_embed_dim;
        fs.act_in_dim = cfg.action_dim;
        fs.temb_dim = 0;
        fs.film_action = cfg.film_action;
        flow_net.emplace(params, "flow", fs, rng);
    }

    int cond_in = cfg.mode == Mode::Vanilla ? 1 : 4;
    cond_conv1 = Conv2dLayer<T>(params, "cond.conv1", cond_in, cfg.cond_downsample_channels, 3, 1,
                                1, rng);
    cond_conv2 = Conv2dLayer<T>(params, "cond.conv2", cfg.cond_downsample_channels,
                                cfg.cond_downsample_channels, 3, 1, 1, rng);

    UNetSpec ds;
    ds.in_ch = denoiser_in_channels();
    ds.out_ch = 4;
    ds.h = cfg.h;
    ds.w = cfg.w;
    ds.base = cfg.base_channels;
    ds.mults = cfg.channel_multipliers;
    ds.num_res = cfg.num_res_blocks;
    ds.attn_res = cfg.attention_resolutions;
    ds.ctx_dim = cfg.action_embed_dim;
    ds.act_in_dim = cfg.action_dim;
    ds.temb_dim = cfg.temb_dim;
    ds.sin_dim = cfg.sin_dim;
    ds.film_action = cfg.film_action;
    denoiser = UNet<T>(params, "den", ds, rng);
}

template <typename T>
typename WorldModel<T>::Id WorldModel<T>::flow_predict_t(ParamCtx<T>& ctx, Id frame4,
                                                         Id action_n) const {
    if (!flow_net) throw std::invalid_argument("flow_predict: vanilla mode has no flow net");
    auto raw = flow_net->forward(ctx, frame4, action_n, -1);
    return ctx.tape().scale(raw, static_cast<T>(norm.flow_scale));  // meters
}

template <typename T>
typename WorldModel<T>::Id WorldModel<T>::build_condition_t(ParamCtx<T>& ctx, Id depth1,
                                                            Id flow_m) const {
    auto& g = ctx.tape();
    if (cfg.mode == Mode::Vanilla) {
        if (flow_m >= 0)
            throw std::invalid_argument("build_condition: vanilla mode takes no flow");
        return cond_conv2.forward(ctx, g.silu(cond_conv1.forward(ctx, depth1)));
    }
    if (flow_m < 0) throw std::invalid_argument("build_condition: flow required in this mode");
    auto flow_n = g.scale(flow_m, static_cast<T>(1.0 / norm.flow_scale));
    auto feats =
        cond_conv2.forward(ctx, g.silu(cond_conv1.forward(ctx, g.concat_ch(depth1, flow_n))));
    return g.concat_ch(feats, flow_n);
}

template <typename T>
typename WorldModel<T>::Id WorldModel<T>::denoise_eps_t(ParamCtx<T>& ctx, Id zk, Id zt, Id ct,
                                                        Id action_n,
                                                        const std::vector<int>& ks) const {
    auto& g = ctx.tape();
    auto x = g.concat_ch(g.concat_ch(zk, zt), ct);
    auto ksin = g.leaf(ksin_batch<T>(ks, cfg.sin_dim), false);
    return denoiser.forward(ctx, x, action_n, ksin);
}

template <typename T>
typename WorldModel<T>::Id WorldModel<T>::depth_channel(ParamCtx<T>& ctx, Id frame4) const {
    auto& g = ctx.tape();
    const auto& v = g.value(frame4);
    int b = v.dim(0), h = v.dim(2), w = v.dim(3);
    Tensor<T> sel({b, 1, h, w});
    for (int bi = 0; bi < b; ++bi)
        for (int i = 0; i < h * w; ++i)
            sel.data[static_cast<size_t>(bi) * h * w + i] =
                v.data[(static_cast<size_t>(bi) * 4 + 3) * h * w + i];
    return g.leaf(std::move(sel), false);
}

template <typename T>
SceneFlowField WorldModel<T>::flow_predict(const RgbdFrame& frame, const Action& action) {
    Tape<T> g;
    ParamCtx<T> ctx(g, params, false);
    auto frame4 = g.leaf(frames_to_tensor<T>({&frame}, norm), false);
    auto act = g.leaf(actions_to_tensor<T>({action}, norm.a_max), false);
    auto f = flow_predict_t(ctx, frame4, act);
    return tensor_to_flow(g.value(f), 0);
}

template <typename T>
typename WorldModel<T>::Prediction WorldModel<T>::predict_next(
    const RgbdFrame& frame, const Action& action, const NoiseSchedule& ns,
    const SamplerConfig& sc, uint64_t seed, const SceneFlowField* flow_override) {
    std::vector<std::vector<Action>> acts{{action}};
    std::vector<const SceneFlowField*> ov;
    if (flow_override) ov.push_back(flow_override);
    RolloutResult r = rollout_batch_impl({frame}, acts, ns, sc, seed,
                                         flow_override ? &ov : nullptr);
    Prediction p;
    p.frame = std::move(r.frames[1][0]);
    p.flow = std::move(r.flows[0][0]);
    return p;
}

template <typename T>
typename WorldModel<T>::RolloutResult WorldModel<T>::rollout_batch(
    const std::vector<RgbdFrame>& frames0, const std::vector<std::vector<Action>>& actions,
    const NoiseSchedule& ns, const SamplerConfig& sc, uint64_t seed) {
    return rollout_batch_impl(frames0, actions, ns, sc, seed, nullptr);
}

template <typename T>
typename WorldModel<T>::RolloutResult WorldModel<T>::rollout(
    const RgbdFrame& frame0, const std::vector<Action>& actions, const NoiseSchedule& ns,
    const SamplerConfig& sc, uint64_t seed) {
    return rollout_batch({frame0}, {actions}, ns, sc, seed);
}

template <typename T>
typename WorldModel<T>::RolloutResult WorldModel<T>::predict_next_batch(
    const std::vector<RgbdFrame>& frames, const std::vector<Action>& actions,
    const NoiseSchedule& ns, const SamplerConfig& sc, uint64_t seed,
    const std::vector<const SceneFlowField*>* flow_override) {
    if (frames.size() != actions.size())
        throw std::invalid_argument("predict_next_batch: batch size mismatch");
    std::vector<std::vector<Action>> seqs;
    seqs.reserve(actions.size());
    for (const Action& a : actions) seqs.push_back({a});
    return rollout_batch_impl(frames, seqs, ns, sc, seed, flow_override);
}

template <typename T>
typename WorldModel<T>::RolloutResult WorldModel<T>::rollout_batch_impl(
    const std::vector<RgbdFrame>& frames0, const std::vector<std::vector<Action>>& actions,
    const NoiseSchedule& ns, const SamplerConfig& sc, uint64_t seed,
    const std::vector<const SceneFlowField*>* flow_override) {
    const int b = static_cast<int>(frames0.size());
    if (b == 0) throw std::invalid_argument("rollout: empty batch");
    if (actions.size() != frames0.size())
        throw std::invalid_argument("rollout: batch size mismatch");
    const size_t t_len = actions[0].size();
    for (const auto& a : actions)
        if (a.size() != t_len) throw std::invalid_argument("rollout: ragged action sequences");
    if (flow_override && (t_len != 1 || flow_override->size() != frames0.size()))
        throw std::invalid_argument("rollout: flow override is single-step only");

    RolloutResult out;
    out.frames.push_back(frames0);
    if (t_len == 0) return out;

    std::vector<int> substeps = ddim_substeps(ns.k_steps, sc.ddim_steps);
    DdimOptions opt;
    opt.clamp = sc.clamp;

    std::vector<RgbdFrame> cur = frames0;
    for (size_t t = 0; t < t_len; ++t) {
        std::vector<const RgbdFrame*> fp;
        std::vector<Action> acts;
        for (int i = 0; i < b; ++i) {
            fp.push_back(&cur[static_cast<size_t>(i)]);
            acts.push_back(actions[static_cast<size_t>(i)][t]);
        }
        Tensor<T> zt = frames_to_tensor<T>(fp, norm);
        Tensor<T> act = actions_to_tensor<T>(acts, norm.a_max);

        Tensor<T> flow_m;
        Tensor<T> ct;
        {
            Tape<T> g;
            ParamCtx<T> ctx(g, params, false);
            auto ztl = g.leaf(zt, false);
            auto actl = g.leaf(act, false);
            Id flow_id = -1;
            if (cfg.mode != Mode::Vanilla) {
                if (flow_override) {
                    std::vector<const SceneFlowField*> ovr(flow_override->begin(),
                                                           flow_override->end());
                    flow_m = flows_to_tensor<T>(ovr, cfg.h, cfg.w);
                    flow_id = g.leaf(flow_m, false);
                } else {
                    flow_id = flow_predict_t(ctx, ztl, actl);
                    flow_m = g.value(flow_id);
                }
            }
            ct = g.value(build_condition_t(ctx, depth_channel(ctx, ztl), flow_id));
        }

        // per-element seeded z^K so results do not depend on batch grouping
        Tensor<T> init({b, 4, cfg.h, cfg.w});
        const int64_t chw = static_cast<int64_t>(4) * cfg.h * cfg.w;
        for (int i = 0; i < b; ++i) {
            Rng r(mix_seed(seed, static_cast<uint64_t>(t), static_cast<uint64_t>(i)));
            for (int64_t j = 0; j < chw; ++j)
                init.data[static_cast<size_t>(i * chw + j)] = static_cast<T>(r.normal());
        }

        DenoiseFn<T> denoise = [&](const Tensor<T>& z, int k) {
            Tape<T> g;
            ParamCtx<T> ctx(g, params, false);
            auto zk = g.leaf(z, false);
            auto ztl = g.leaf(zt, false);
            auto ctl = g.leaf(ct, false);
            auto actl = g.leaf(act, false);
            std::vector<int> ks(static_cast<size_t>(b), k);
            return g.value(denoise_eps_t(ctx, zk, ztl, ctl, actl, ks));
        };
        Tensor<T> z0 =
            ddim_sample<T>(denoise, substeps, ns, {b, 4, cfg.h, cfg.w}, seed, opt, &init);

        std::vector<RgbdFrame> next;
        std::vector<SceneFlowField> flows_t;
        for (int i = 0; i < b; ++i) {
            next.push_back(tensor_to_frame(z0, i, norm));
            flows_t.push_back(cfg.mode == Mode::Vanilla ? SceneFlowField::zero(cfg.h, cfg.w)
                                                        : tensor_to_flow(flow_m, i));
        }
        out.flows.push_back(std::move(flows_t));
        out.frames.push_back(std::move(next));
        cur = out.frames.back();
    }
    return out;
}

template <typename T>
double flow_loss(const Tensor<T>& f_hat, const Tensor<T>& f) {
    return diffusion_loss(f_hat, f);  // same element-mean squared error
}

template double flow_loss<float>(const Tensor<float>&, const Tensor<float>&);
template double flow_loss<double>(const Tensor<double>&, const Tensor<double>&);

template struct WorldModel<float>;
template struct WorldModel<double>;

template Tensor<float> frames_to_tensor<float>(const std::vector<const RgbdFrame*>&,
                                               const NormStats&);
template Tensor<double> frames_to_tensor<double>(const std::vector<const RgbdFrame*>&,
                                                 const NormStats&);
template RgbdFrame tensor_to_frame<float>(const Tensor<float>&, int, const NormStats&);
template RgbdFrame tensor_to_frame<double>(const Tensor<double>&, int, const NormStats&);
template Tensor<float> flows_to_tensor<float>(const std::vector<const SceneFlowField*>&, int, int);
template Tensor<double> flows_to_tensor<double>(const std::vector<const SceneFlowField*>&, int,
                                                int);
template SceneFlowField tensor_to_flow<float>(const Tensor<float>&, int);
template SceneFlowField tensor_to_flow<double>(const Tensor<double>&, int);
template Tensor<float> actions_to_tensor<float>(const std::vector<Action>&, double);
template Tensor<double> actions_to_tensor<double>(const std::vector<Action>&, double);
template Tensor<float> ksin_batch<float>(const std::vector<int>&, int);
template Tensor<double> ksin_batch<double>(const std::vector<int>&, int);

}  // namespace fdwm
