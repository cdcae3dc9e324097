#include "fdwm/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace fdwm {

template <typename T>
void adam_step(Tensor<T>& params, const Tensor<T>& grads, AdamState<T>& state) {
    if (!params.same_shape(grads)) throw std::invalid_argument("adam_step: shape mismatch");
    if (!params.same_shape(state.first_moment) || !params.same_shape(state.second_moment))
        throw std::invalid_argument("adam_step: state shape mismatch");

    state.step_count += 1;
    const T b1 = state.beta1, b2 = state.beta2;
    const T bc1 = T(1) - static_cast<T>(std::pow(static_cast<double>(b1),
                                                 static_cast<double>(state.step_count)));
    const T bc2 = T(1) - static_cast<T>(std::pow(static_cast<double>(b2),
                                                 static_cast<double>(state.step_count)));
    const T lr = state.learning_rate;

    if (state.weight_decay != T(0)) {
        T scale = T(1) - lr * state.weight_decay;
        for (auto& p : params.data) p *= scale;
    }
    for (int64_t i = 0; i < params.numel(); ++i) {
        T g = grads.data[i];
        T& m = state.first_moment.data[i];
        T& v = state.second_moment.data[i];
        m = b1 * m + (T(1) - b1) * g;
        v = b2 * v + (T(1) - b2) * g * g;
        T mhat = m / bc1;
        T vhat = v / bc2;
        params.data[i] -= lr * mhat / (std::sqrt(vhat) + state.epsilon);
    }
}

template void adam_step<float>(Tensor<float>&, const Tensor<float>&, AdamState<float>&);
template void adam_step<double>(Tensor<double>&, const Tensor<double>&, AdamState<double>&);

}  // namespace fdwm
