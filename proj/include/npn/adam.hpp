#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "npn/param.hpp"
#include "npn/tensor.hpp"

namespace npn {

/// Adam optimizer state: per-parameter first/second moment buffers keyed by
/// parameter name, plus the shared step counter.
struct AdamState {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long long t = 0;
    std::unordered_map<std::string, Tensor> m;
    std::unordered_map<std::string, Tensor> v;

    explicit AdamState(double learning_rate = 0.001) : lr(learning_rate) {}
};

/// One Adam update over `params`, reading each Param::grad. Moments are
/// created lazily and must match parameter shapes thereafter.
inline void adam_step(const std::vector<Param*>& params, AdamState& state) {
    state.t += 1;
    double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (Param* p : params) {
        auto mit = state.m.find(p->name);
        if (mit == state.m.end()) {
            mit = state.m.emplace(p->name, Tensor::zeros(p->value.shape)).first;
            state.v.emplace(p->name, Tensor::zeros(p->value.shape));
        }
        Tensor& m = mit->second;
        Tensor& v = state.v.at(p->name);
        if (!m.same_shape(p->value))
            throw std::invalid_argument("adam_step: moment shape " + shape_str(m.shape) + " does not match param '" +
                                        p->name + "' shape " + shape_str(p->value.shape));
        for (int i = 0; i < p->value.numel(); ++i) {
            double g = p->grad[i];
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
            double mhat = m[i] / bc1;
            double vhat = v[i] / bc2;
            p->value[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

}  // namespace npn
