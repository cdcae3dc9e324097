#pragma once

#include <string>
#include <vector>

#include "fdwm/dataset.hpp"
#include "fdwm/metrics.hpp"
#include "fdwm/models.hpp"
#include "fdwm/training.hpp"

namespace fdwm {

struct EvalOptions {
    int ddim_steps = 20;
    uint64_t seed = 0;
    int max_trajectories = -1;  // cap on evaluated test episodes, -1 = all
    int rollout_len = -1;       // cap on rollout steps, -1 = full episode
    std::string out_dir;        // empty: no CSV/PPM output
    int panel_trajectories = 2;  // how many trajectories get image panels
};

struct MetricsRow {
    int trajectory = 0;
    int t = 0;  // one-based prediction step
    double psnr = 0.0, ssim = 0.0;
    double epe = 0.0, flow_mse = 0.0;
    double moved_psnr = 99.0;
};

struct EvalSummary {
    std::vector<MetricsRow> rows;
    double mean_psnr = 0.0, std_psnr = 0.0;
    double mean_ssim = 0.0, std_ssim = 0.0;
    double mean_epe = 0.0;
    double mean_moved_psnr = 0.0;
    // persistence baseline (repeat the first frame)
    double persistence_psnr = 0.0, persistence_ssim = 0.0, persistence_moved_psnr = 0.0;
};

// Full-trajectory rollouts from the first frame and the recorded actions,
// scored per frame against ground truth; flow error per step in flow modes.
EvalSummary eval_video_prediction(WorldModel<float>& model, const DatasetView& test,
                                  const NoiseSchedule& ns, const EvalOptions& opt);

struct SampleMetric {
    int64_t sample = 0;
    double epe = 0.0;
    double psnr = 0.0, ssim = 0.0;
};

// Single-step predictions over test samples, the per-sample table behind the
// flow-error/metric correlation analysis.
std::vector<SampleMetric> eval_single_step(WorldModel<float>& model, const DatasetView& test,
                                           const NoiseSchedule& ns, const EvalOptions& opt);

struct ReversalSummary {
    double mean_delta_psnr = 0.0;  // normal - reversed
    double mean_psnr_normal = 0.0;
    double mean_psnr_reversed = 0.0;
    int64_t samples = 0;
};

// Predicts each test sample twice, once with the predicted flow and once
// with its negation, action unchanged.
ReversalSummary reverse_flow_ablation(WorldModel<float>& model, const DatasetView& test,
                                      const NoiseSchedule& ns, const EvalOptions& opt);

struct CorrelationSummary {
    double r_epe_psnr = 0.0;
    double r_epe_ssim = 0.0;
    int64_t samples = 0;
};

// Pearson correlations of flow error against the image metrics; refuses
// fewer than 10 samples. Writes scatter CSV when out_dir is set.
CorrelationSummary correlation_analysis(const std::vector<SampleMetric>& table,
                                        const std::string& out_dir);

}  // namespace fdwm
