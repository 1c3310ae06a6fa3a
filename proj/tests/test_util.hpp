#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "npn/param.hpp"
#include "npn/tensor.hpp"

namespace npn::testutil {

// Central finite differences against an arbitrary re-evaluable scalar loss.
// Kept independent of the graph machinery it checks.

inline double central_diff(std::function<double()> eval, double* slot, double h = 1e-5) {
    double keep = *slot;
    *slot = keep + h;
    double up = eval();
    *slot = keep - h;
    double down = eval();
    *slot = keep;
    return (up - down) / (2.0 * h);
}

inline double rel_err(double a, double b) {
    double denom = std::max({std::abs(a), std::abs(b), 1e-6});
    return std::abs(a - b) / denom;
}

/// Max relative error between analytic gradient `grad` and finite differences
/// of `eval` w.r.t. every element of `storage`.
inline double max_grad_rel_err(std::function<double()> eval, std::vector<double>& storage,
                               const std::vector<double>& grad, double h = 1e-5) {
    double worst = 0.0;
    for (size_t i = 0; i < storage.size(); ++i) {
        double fd = central_diff(eval, &storage[i], h);
        worst = std::max(worst, rel_err(fd, grad[i]));
    }
    return worst;
}

inline npn::Tensor random_tensor(std::vector<int> shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    npn::Tensor t = npn::Tensor::zeros(std::move(shape));
    std::uniform_real_distribution<double> d(lo, hi);
    for (double& v : t.data) v = d(rng);
    return t;
}

}  // namespace npn::testutil
