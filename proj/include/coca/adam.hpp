#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "coca/model.hpp"

namespace coca::optim {

struct AdamOptions {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-6;  // coupled: added to the gradient as wd * param
};

// One bias-corrected Adam update for step number `step` (1-based).
template <typename T>
void adam_update(std::span<T> param, std::span<const T> grad, std::span<T> m, std::span<T> v, std::uint64_t step,
                 const AdamOptions& opt);

// Moment buffers for every trainable array of a network, in visit order.
template <typename T>
struct AdamState {
    std::uint64_t step = 0;
    std::vector<Tensor<T>> m, v;

    static AdamState for_params(const Parameters<T>& params);
};

// Rejects non-finite gradients before touching any parameter.
template <typename T>
void adam_step(Parameters<T>& params, const Parameters<T>& grads, AdamState<T>& state, const AdamOptions& opt);

}  // namespace coca::optim
