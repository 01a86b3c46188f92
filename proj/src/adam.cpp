#include "coca/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace coca::optim {

template <typename T>
void adam_update(std::span<T> param, std::span<const T> grad, std::span<T> m, std::span<T> v, std::uint64_t step,
                 const AdamOptions& opt) {
    if (grad.size() != param.size() || m.size() != param.size() || v.size() != param.size())
        throw std::invalid_argument("adam buffers disagree in size");
    if (step == 0) throw std::invalid_argument("adam step numbers start at 1");
    const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double g = static_cast<double>(grad[i]) + opt.weight_decay * param[i];
        const double mi = opt.beta1 * m[i] + (1.0 - opt.beta1) * g;
        const double vi = opt.beta2 * v[i] + (1.0 - opt.beta2) * g * g;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        const double update = opt.learning_rate * (mi / bc1) / (std::sqrt(vi / bc2) + opt.eps);
        param[i] = static_cast<T>(param[i] - update);
    }
}

template <typename T>
AdamState<T> AdamState<T>::for_params(const Parameters<T>& params) {
    AdamState s;
    params.visit([&](const std::string&, const Tensor<T>& t, bool trainable) {
        if (!trainable) return;
        s.m.emplace_back(t.shape);
        s.v.emplace_back(t.shape);
    });
    return s;
}

template <typename T>
void adam_step(Parameters<T>& params, const Parameters<T>& grads, AdamState<T>& state, const AdamOptions& opt) {
    std::vector<const Tensor<T>*> g;
    grads.visit([&](const std::string& name, const Tensor<T>& t, bool trainable) {
        if (!trainable) return;
        for (auto x : t.data)
            if (!std::isfinite(x)) throw std::runtime_error("non-finite gradient in " + name);
        g.push_back(&t);
    });
    if (state.m.size() != g.size()) throw std::invalid_argument("adam state does not match the parameter set");
    ++state.step;
    std::size_t i = 0;
    params.visit([&](const std::string&, Tensor<T>& p, bool trainable) {
        if (!trainable) return;
        adam_update<T>(p.view(), g[i]->view(), state.m[i].view(), state.v[i].view(), state.step, opt);
        ++i;
    });
}

template void adam_update<float>(std::span<float>, std::span<const float>, std::span<float>, std::span<float>,
                                 std::uint64_t, const AdamOptions&);
template void adam_update<double>(std::span<double>, std::span<const double>, std::span<double>, std::span<double>,
                                  std::uint64_t, const AdamOptions&);
template struct AdamState<float>;
template struct AdamState<double>;
template void adam_step<float>(Parameters<float>&, const Parameters<float>&, AdamState<float>&, const AdamOptions&);
template void adam_step<double>(Parameters<double>&, const Parameters<double>&, AdamState<double>&,
                                const AdamOptions&);

}  // namespace coca::optim
