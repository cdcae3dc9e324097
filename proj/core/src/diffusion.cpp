#include "fdwm/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "fdwm/rng.hpp"

namespace fdwm {

void NoiseSchedule::check_k(int k) const {
    if (k < 1 || k > k_steps) throw std::invalid_argument("diffusion: step k out of [1, K]");
}

NoiseSchedule linear_schedule(int k_steps, double beta_start, double beta_end) {
    if (k_steps < 1) throw std::invalid_argument("linear_schedule: K must be >= 1");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
        throw std::invalid_argument("linear_schedule: need 0 < beta_start <= beta_end < 1");
    NoiseSchedule ns;
    ns.k_steps = k_steps;
    ns.beta.resize(static_cast<size_t>(k_steps));
    ns.alpha.resize(static_cast<size_t>(k_steps));
    ns.alpha_bar.resize(static_cast<size_t>(k_steps));
    ns.sigma.resize(static_cast<size_t>(k_steps));
    double prod = 1.0;
    for (int i = 0; i < k_steps; ++i) {
        double b = k_steps == 1
                       ? beta_start
                       : beta_start + (beta_end - beta_start) * i / (k_steps - 1);
        ns.beta[static_cast<size_t>(i)] = b;
        ns.alpha[static_cast<size_t>(i)] = 1.0 - b;
        prod *= 1.0 - b;
        ns.alpha_bar[static_cast<size_t>(i)] = prod;
        double ab_prev = i == 0 ? 1.0 : ns.alpha_bar[static_cast<size_t>(i - 1)];
        ns.sigma[static_cast<size_t>(i)] =
            std::sqrt(b * (1.0 - ab_prev) / (1.0 - prod));
    }
    return ns;
}

template <typename T>
Tensor<T> q_sample(const Tensor<T>& z0, int k, const Tensor<T>& eps, const NoiseSchedule& ns) {
    ns.check_k(k);
    if (!z0.same_shape(eps)) throw std::invalid_argument("q_sample: eps shape mismatch");
    T a = static_cast<T>(std::sqrt(ns.alpha_bar_at(k)));
    T b = static_cast<T>(std::sqrt(1.0 - ns.alpha_bar_at(k)));
    Tensor<T> out = z0;
    for (int64_t i = 0; i < out.numel(); ++i) out.data[i] = a * z0.data[i] + b * eps.data[i];
    return out;
}

template <typename T>
Tensor<T> q_sample_invert(const Tensor<T>& zk, int k, const Tensor<T>& eps,
                          const NoiseSchedule& ns) {
    ns.check_k(k);
    if (!zk.same_shape(eps)) throw std::invalid_argument("q_sample_invert: eps shape mismatch");
    T a = static_cast<T>(std::sqrt(ns.alpha_bar_at(k)));
    T b = static_cast<T>(std::sqrt(1.0 - ns.alpha_bar_at(k)));
    Tensor<T> out = zk;
    for (int64_t i = 0; i < out.numel(); ++i) out.data[i] = (zk.data[i] - b * eps.data[i]) / a;
    return out;
}

template <typename T>
double diffusion_loss(const Tensor<T>& eps_hat, const Tensor<T>& eps) {
    if (!eps_hat.same_shape(eps)) throw std::invalid_argument("diffusion_loss: shape mismatch");
    double s = 0.0;
    for (int64_t i = 0; i < eps.numel(); ++i) {
        double d = static_cast<double>(eps_hat.data[i]) - static_cast<double>(eps.data[i]);
        s += d * d;
    }
    return s / static_cast<double>(eps.numel());
}

template <typename T>
Tensor<T> ddpm_step(const Tensor<T>& zk, const Tensor<T>& eps_hat, int k, const NoiseSchedule& ns,
                    const Tensor<T>& noise) {
    ns.check_k(k);
    if (!zk.same_shape(eps_hat) || !zk.same_shape(noise))
        throw std::invalid_argument("ddpm_step: shape mismatch");
    if (k == 1) {
        for (T v : noise.data)
            if (v != T(0)) throw std::invalid_argument("ddpm_step: noise must be zero at k = 1");
    }
    double ak = ns.alpha_at(k);
    double abk = ns.alpha_bar_at(k);
    T inv_sqrt_a = static_cast<T>(1.0 / std::sqrt(ak));
    T coef = static_cast<T>((1.0 - ak) / std::sqrt(1.0 - abk));
    T sig = static_cast<T>(ns.sigma_at(k));
    Tensor<T> out = zk;
    for (int64_t i = 0; i < out.numel(); ++i)
        out.data[i] = inv_sqrt_a * (zk.data[i] - coef * eps_hat.data[i]) + sig * noise.data[i];
    return out;
}

std::vector<int> ddim_substeps(int k_steps, int count) {
    if (count < 1 || count > k_steps)
        throw std::invalid_argument("ddim_substeps: count out of range");
    std::vector<int> steps;
    steps.reserve(static_cast<size_t>(count));
    for (int i = 1; i <= count; ++i) {
        int k = static_cast<int>(std::llround(static_cast<double>(i) * k_steps / count));
        k = std::max(1, std::min(k_steps, k));
        if (!steps.empty() && k <= steps.back()) k = steps.back() + 1;
        steps.push_back(k);
    }
    steps.back() = k_steps;
    return steps;
}

template <typename T>
Tensor<T> ddim_sample(const DenoiseFn<T>& denoise, const std::vector<int>& substeps,
                      const NoiseSchedule& ns, const std::vector<int>& shape, uint64_t seed,
                      const DdimOptions& opt, const Tensor<T>* init) {
    if (substeps.empty()) throw std::invalid_argument("ddim_sample: empty substeps");
    for (size_t i = 1; i < substeps.size(); ++i)
        if (substeps[i] <= substeps[i - 1])
            throw std::invalid_argument("ddim_sample: substeps must be strictly increasing");
    if (substeps.back() != ns.k_steps)
        throw std::invalid_argument("ddim_sample: last substep must be K");
    ns.check_k(substeps.front());

    Rng rng(mix_seed(seed, 0x6464696dULL));
    Tensor<T> z;
    if (init) {
        if (init->shape != shape) throw std::invalid_argument("ddim_sample: init shape mismatch");
        z = *init;
    } else {
        z = Tensor<T>::randn(shape, rng);
    }

    const T lo = static_cast<T>(-opt.clamp), hi = static_cast<T>(opt.clamp);
    for (size_t j = substeps.size(); j-- > 0;) {
        int k = substeps[j];
        Tensor<T> eps_hat = denoise(z, k);
        if (!eps_hat.same_shape(z)) throw std::invalid_argument("ddim_sample: denoiser shape");
        double ab = ns.alpha_bar_at(k);
        T sa = static_cast<T>(std::sqrt(ab));
        T sb = static_cast<T>(std::sqrt(1.0 - ab));
        Tensor<T> z0 = z;
        for (int64_t i = 0; i < z.numel(); ++i) {
            T v = (z.data[i] - sb * eps_hat.data[i]) / sa;
            z0.data[i] = std::min(hi, std::max(lo, v));
        }
        if (j == 0) {
            z = std::move(z0);
        } else {
            double ab_lo = ns.alpha_bar_at(substeps[j - 1]);
            T sa2 = static_cast<T>(std::sqrt(ab_lo));
            T sb2 = static_cast<T>(std::sqrt(1.0 - ab_lo));
            for (int64_t i = 0; i < z.numel(); ++i)
                z.data[i] = sa2 * z0.data[i] + sb2 * eps_hat.data[i];
        }
    }
    return z;
}

template Tensor<float> q_sample<float>(const Tensor<float>&, int, const Tensor<float>&,
                                       const NoiseSchedule&);
template Tensor<double> q_sample<double>(const Tensor<double>&, int, const Tensor<double>&,
                                         const NoiseSchedule&);
template Tensor<float> q_sample_invert<float>(const Tensor<float>&, int, const Tensor<float>&,
                                              const NoiseSchedule&);
template Tensor<double> q_sample_invert<double>(const Tensor<double>&, int, const Tensor<double>&,
                                                const NoiseSchedule&);
template double diffusion_loss<float>(const Tensor<float>&, const Tensor<float>&);
template double diffusion_loss<double>(const Tensor<double>&, const Tensor<double>&);
template Tensor<float> ddpm_step<float>(const Tensor<float>&, const Tensor<float>&, int,
                                        const NoiseSchedule&, const Tensor<float>&);
template Tensor<double> ddpm_step<double>(const Tensor<double>&, const Tensor<double>&, int,
                                          const NoiseSchedule&, const Tensor<double>&);
template Tensor<float> ddim_sample<float>(const DenoiseFn<float>&, const std::vector<int>&,
                                          const NoiseSchedule&, const std::vector<int>&, uint64_t,
                                          const DdimOptions&, const Tensor<float>*);
template Tensor<double> ddim_sample<double>(const DenoiseFn<double>&, const std::vector<int>&,
                                            const NoiseSchedule&, const std::vector<int>&,
                                            uint64_t, const DdimOptions&, const Tensor<double>*);

}  // namespace fdwm
