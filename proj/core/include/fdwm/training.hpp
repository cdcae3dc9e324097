#pragma once

#include <string>
#include <vector>

#include "fdwm/dataset.hpp"
#include "fdwm/diffusion.hpp"
#include "fdwm/models.hpp"
#include "fdwm/optim.hpp"

namespace fdwm {

constexpr uint32_t kCheckpointFormatVersion = 1;

struct TrainConfig {
    Mode mode = Mode::Flowdreamer;
    double alpha = 1.0;
    int steps = 5000;
    int batch_size = 16;
    double learning_rate = 1e-4;
    double weight_decay = 1e-4;
    uint64_t seed = 0;
    std::string dataset_dir;
    std::string out_dir;
    std::string resume_from;  // checkpoint path; empty = fresh run
    int checkpoint_every = 1000;
    int log_every = 100;
    int k_steps = 1000;
    double beta_start = 1e-4, beta_end = 0.02;
    ModelConfig model;

    void validate() const;
};

// One training batch with its per-sample draw seeds (derived from
// (run seed, step, dataset sample index) so loss curves are independent of
// scheduling).
template <typename T>
struct TrainBatch {
    Tensor<T> frame_t;   // [B,4,H,W] normalized
    Tensor<T> frame_t1;  // [B,4,H,W] normalized
    Tensor<T> action_n;  // [B,action_dim] normalized
    Tensor<T> flow_gt;   // [B,3,H,W] meters
    std::vector<uint64_t> draw_seeds;
    std::vector<int64_t> sample_indices;
};

// Deterministic epoch-shuffled sample indices for one optimizer step.
// Batches never straddle an epoch boundary; a short final batch is allowed.
std::vector<int64_t> batch_indices(uint64_t seed, int64_t step, int64_t num_samples,
                                   int batch_size);

template <typename T>
TrainBatch<T> assemble_batch(const DatasetView& data, const std::vector<int64_t>& indices,
                             const NormStats& norm, uint64_t run_seed, int64_t step);

struct LossParts {
    double total = 0.0;
    double diff = 0.0;
    double flow = 0.0;
};

// Builds L_total = L_diff + alpha * L_flow on the tape and returns the loss
// node plus components. flowdreamer couples stage 2 to the predicted flow;
// septrain conditions stage 2 on ground-truth flow (decoupled gradients);
// vanilla has no flow term.
template <typename T>
LossParts total_loss(Tape<T>& g, ParamCtx<T>& ctx, const WorldModel<T>& model,
                     const TrainBatch<T>& batch, const NoiseSchedule& ns, double alpha, Mode mode,
                     typename Tape<T>::Id* loss_out);

struct TrainResult {
    LossParts first;
    LossParts last;
    std::string checkpoint_path;
    std::string metrics_path;
    double max_grad_norm = 0.0;
};

TrainResult train(const TrainConfig& config);

// Checkpoints: magic "FDCK", format version, config hash and JSON, then
// named float32 blocks for parameters and optimizer moments.
template <typename T>
void save_checkpoint(const std::string& path, const WorldModel<T>& model,
                     const AdamW<T>& opt, int64_t step, const TrainConfig& config);

struct Checkpoint {
    ModelConfig model_config;
    NormStats norm;
    TrainConfig train_config;
    int64_t step = 0;
    // named blocks in file order
    std::vector<std::pair<std::string, Tensor<float>>> blocks;
};

Checkpoint load_checkpoint_raw(const std::string& path);

template <typename T>
void restore_model(const Checkpoint& ck, WorldModel<T>& model, AdamW<T>* opt);

// Convenience: construct the model a checkpoint describes and load it.
template <typename T>
WorldModel<T> load_model(const std::string& path, NoiseSchedule* ns_out = nullptr);

}  // namespace fdwm
