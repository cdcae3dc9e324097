#pragma once

#include <functional>
#include <vector>

#include "fdwm/tensor.hpp"

namespace fdwm {

// Forward-process schedule; k is 1-based in every API, arrays store index k-1.
struct NoiseSchedule {
    int k_steps = 0;
    std::vector<double> beta;
    std::vector<double> alpha;
    std::vector<double> alpha_bar;
    std::vector<double> sigma;  // posterior noise scale, sigma[0] == 0

    double beta_at(int k) const { return beta[static_cast<size_t>(k - 1)]; }
    double alpha_at(int k) const { return alpha[static_cast<size_t>(k - 1)]; }
    double alpha_bar_at(int k) const { return alpha_bar[static_cast<size_t>(k - 1)]; }
    double sigma_at(int k) const { return sigma[static_cast<size_t>(k - 1)]; }
    void check_k(int k) const;
};

NoiseSchedule linear_schedule(int k_steps, double beta_start, double beta_end);

// z^k = sqrt(alpha_bar_k) z0 + sqrt(1 - alpha_bar_k) eps
template <typename T>
Tensor<T> q_sample(const Tensor<T>& z0, int k, const Tensor<T>& eps, const NoiseSchedule& ns);

// exact inversion of q_sample given the drawn eps
template <typename T>
Tensor<T> q_sample_invert(const Tensor<T>& zk, int k, const Tensor<T>& eps,
                          const NoiseSchedule& ns);

// mean squared error over all elements
template <typename T>
double diffusion_loss(const Tensor<T>& eps_hat, const Tensor<T>& eps);

// One ancestral reverse step; noise must be zero when k == 1.
template <typename T>
Tensor<T> ddpm_step(const Tensor<T>& zk, const Tensor<T>& eps_hat, int k, const NoiseSchedule& ns,
                    const Tensor<T>& noise);

template <typename T>
using DenoiseFn = std::function<Tensor<T>(const Tensor<T>& z, int k)>;

// Evenly spaced 1..K substep ladder of the requested length.
std::vector<int> ddim_substeps(int k_steps, int count);

struct DdimOptions {
    double clamp = 3.0;  // predicted-z0 clamp, data is unit-scale normalized
};

// Deterministic sampler (sigma = 0): starts from a seeded unit Gaussian z^K
// and jumps along the substep ladder. `substeps` must be strictly increasing
// and end at k_steps. A caller-supplied z^K overrides the seeded draw (used
// for batches with per-element seeds).
template <typename T>
Tensor<T> ddim_sample(const DenoiseFn<T>& denoise, const std::vector<int>& substeps,
                      const NoiseSchedule& ns, const std::vector<int>& shape, uint64_t seed,
                      const DdimOptions& opt = {}, const Tensor<T>* init = nullptr);

}  // namespace fdwm
