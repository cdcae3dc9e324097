#pragma once

#include "fdwm/nn.hpp"
#include "fdwm/tensor.hpp"

namespace fdwm {

// AdamW state for one parameter tensor. Moments are zero at step_count 0 and
// step_count is incremented before bias correction.
template <typename T>
struct AdamState {
    int64_t step_count = 0;
    Tensor<T> first_moment;
    Tensor<T> second_moment;
    T learning_rate = T(1e-4);
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T epsilon = T(1e-8);
    T weight_decay = T(0);

    static AdamState like(const Tensor<T>& p, T lr, T wd) {
        AdamState s;
        s.first_moment = Tensor<T>::zeros(p.shape);
        s.second_moment = Tensor<T>::zeros(p.shape);
        s.learning_rate = lr;
        s.weight_decay = wd;
        return s;
    }
};

// Decoupled weight decay: parameters are scaled by (1 - lr*wd) before the
// moment update.
template <typename T>
void adam_step(Tensor<T>& params, const Tensor<T>& grads, AdamState<T>& state);

// Optimizer over a whole store.
template <typename T>
struct AdamW {
    std::vector<AdamState<T>> states;

    AdamW() = default;
    AdamW(const ParamStore<T>& ps, T lr, T wd) {
        for (const auto& e : ps.entries) states.push_back(AdamState<T>::like(e.value, lr, wd));
    }

    void step(ParamStore<T>& ps, ParamCtx<T>& ctx) {
        for (size_t i = 0; i < ps.entries.size(); ++i) {
            Tensor<T> g = ctx.grad_of(static_cast<int>(i));
            adam_step(ps.entries[i].value, g, states[i]);
        }
    }
};

}  // namespace fdwm
