#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "aasn/tensor.hpp"

namespace aasn {

template <typename T>
using NamedTensors = std::vector<std::pair<std::string, BasicTensor<T>>>;

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// First and second moments keyed by parameter name.
struct AdamState {
    std::map<std::string, std::vector<double>> m;
    std::map<std::string, std::vector<double>> v;
    std::int64_t step = 0;
};

// One bias-corrected Adam update using each parameter's gradient buffer.
// Throws ContractError if any parameter has no gradient.
template <typename T>
void adam_step(NamedTensors<T>& params, AdamState& state, const AdamConfig& config);

template <typename T>
void zero_grads(NamedTensors<T>& params);

} // namespace aasn
