#include "aasn/optim.hpp"

#include <cmath>

namespace aasn {

template <typename T>
void adam_step(NamedTensors<T>& params, AdamState& state, const AdamConfig& config) {
    for (auto& [name, p] : params) {
        if (!p.has_grad()) {
            throw ContractError("adam_step: parameter '" + name + "' has no gradient");
        }
    }
    state.step += 1;
    const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
    for (auto& [name, p] : params) {
        auto& m = state.m[name];
        auto& v = state.v[name];
        if (m.size() != p.numel()) {
            m.assign(p.numel(), 0.0);
            v.assign(p.numel(), 0.0);
        }
        auto data = p.data();
        auto grad = p.grad();
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double g = grad[i];
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g;
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            data[i] = static_cast<T>(data[i] - config.lr * mhat / (std::sqrt(vhat) + config.eps));
        }
    }
}

template <typename T>
void zero_grads(NamedTensors<T>& params) {
    for (auto& entry : params) {
        entry.second.zero_grad();
    }
}

template void adam_step(NamedTensors<float>&, AdamState&, const AdamConfig&);
template void adam_step(NamedTensors<double>&, AdamState&, const AdamConfig&);
template void zero_grads(NamedTensors<float>&);
template void zero_grads(NamedTensors<double>&);

} // namespace aasn
