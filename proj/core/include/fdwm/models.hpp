#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fdwm/diffusion.hpp"
#include "fdwm/geometry.hpp"
#include "fdwm/nn.hpp"
#include "fdwm/sim.hpp"

namespace fdwm {

enum class Mode { Flowdreamer, Vanilla, Septrain };

std::string mode_to_string(Mode m);
Mode mode_from_string(const std::string& s);

struct ModelConfig {
    int h = 32, w = 32;
    int base_channels = 16;       // denoiser width
    int flow_base_channels = 8;   // stage-1 width
    std::vector<int> channel_multipliers = {1, 2, 2};
    std::vector<int> attention_resolutions = {8};
    int num_res_blocks = 1;
    int action_dim = 2;
    int action_embed_dim = 32;
    int cond_downsample_channels = 8;
    int sin_dim = 32;
    int temb_dim = 64;
    Mode mode = Mode::Flowdreamer;
    bool film_action = false;  // cross-attention by default

    void validate() const;
    std::string to_json() const;
    static ModelConfig from_json(const std::string& s);
};

// Dataset-wide normalization constants, carried by the manifest.
struct NormStats {
    double d_min = 0.0, d_max = 1.0;
    double flow_scale = 1.0;
    double a_max = 0.05;
};

struct SamplerConfig {
    int ddim_steps = 20;
    double clamp = 3.0;
};

// RGB mapped to [-1,1]; depth affinely mapped to [-1,1] via d_min/d_max.
template <typename T>
Tensor<T> frames_to_tensor(const std::vector<const RgbdFrame*>& frames, const NormStats& ns);
template <typename T>
RgbdFrame tensor_to_frame(const Tensor<T>& t, int batch_index, const NormStats& ns);
template <typename T>
Tensor<T> flows_to_tensor(const std::vector<const SceneFlowField*>& flows, int h, int w);
template <typename T>
SceneFlowField tensor_to_flow(const Tensor<T>& t, int batch_index);
template <typename T>
Tensor<T> actions_to_tensor(const std::vector<Action>& acts, double a_max);
template <typename T>
Tensor<T> ksin_batch(const std::vector<int>& ks, int sin_dim);

// Two-stage action-conditioned RGB-D world model. Stage 1 predicts scene
// flow; stage 2 denoises the next 4-channel RGB-D frame conditioned on the
// current frame, the flow-and-depth features and the action.
template <typename T>
struct WorldModel {
    ModelConfig cfg;
    NormStats norm;
    ParamStore<T> params;
    std::optional<UNet<T>> flow_net;  // absent in vanilla mode
    UNet<T> denoiser;
    Conv2dLayer<T> cond_conv1, cond_conv2;

    WorldModel(ModelConfig cfg, NormStats norm, uint64_t seed);

    int cond_channels() const;      // channels of c_t
    int denoiser_in_channels() const;

    using Id = typename Tape<T>::Id;

    // frame4: [B,4,H,W] normalized; action_n: [B,action_dim] normalized.
    // Returns flow in meters, [B,3,H,W].
    Id flow_predict_t(ParamCtx<T>& ctx, Id frame4, Id action_n) const;

    // depth1: [B,1,H,W] normalized depth; flow_m: [B,3,H,W] meters or -1 in
    // vanilla mode. Returns c_t.
    Id build_condition_t(ParamCtx<T>& ctx, Id depth1, Id flow_m) const;

    // zk/zt: [B,4,H,W]; ct: condition; ks: per-element diffusion steps.
    Id denoise_eps_t(ParamCtx<T>& ctx, Id zk, Id zt, Id ct, Id action_n,
                     const std::vector<int>& ks) const;

    // convenience: channel 3 of a normalized frame tensor as [B,1,H,W]
    Id depth_channel(ParamCtx<T>& ctx, Id frame4) const;

    // ---- eager inference ----
    SceneFlowField flow_predict(const RgbdFrame& frame, const Action& action);

    struct Prediction {
        RgbdFrame frame;
        SceneFlowField flow;  // zero field in vanilla mode
    };
    Prediction predict_next(const RgbdFrame& frame, const Action& action,
                            const NoiseSchedule& ns, const SamplerConfig& sc, uint64_t seed,
                            const SceneFlowField* flow_override = nullptr);

    struct RolloutResult {
        std::vector<std::vector<RgbdFrame>> frames;      // [T+1][B]
        std::vector<std::vector<SceneFlowField>> flows;  // [T][B]
    };
    // Autoregressive batched rollout; element b follows actions[b].
    RolloutResult rollout_batch(const std::vector<RgbdFrame>& frames0,
                                const std::vector<std::vector<Action>>& actions,
                                const NoiseSchedule& ns, const SamplerConfig& sc, uint64_t seed);

    // single-trajectory rollout per the video-prediction protocol
    RolloutResult rollout(const RgbdFrame& frame0, const std::vector<Action>& actions,
                          const NoiseSchedule& ns, const SamplerConfig& sc, uint64_t seed);

    // Batched one-step prediction; an optional per-element flow override
    // replaces the stage-1 output (the reversal ablation feeds -f here).
    // The sampler draw for element i depends only on (seed, i), so normal
    // and overridden passes with the same seed are noise-paired.
    RolloutResult predict_next_batch(
        const std::vector<RgbdFrame>& frames, const std::vector<Action>& actions,
        const NoiseSchedule& ns, const SamplerConfig& sc, uint64_t seed,
        const std::vector<const SceneFlowField*>* flow_override = nullptr);

private:
    RolloutResult rollout_batch_impl(const std::vector<RgbdFrame>& frames0,
                                     const std::vector<std::vector<Action>>& actions,
                                     const NoiseSchedule& ns, const SamplerConfig& sc,
                                     uint64_t seed,
                                     const std::vector<const SceneFlowField*>* flow_override);
};

template <typename T>
double flow_loss(const Tensor<T>& f_hat, const Tensor<T>& f);

}  // namespace fdwm
