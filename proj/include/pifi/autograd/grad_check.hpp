#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "pifi/autograd/graph.hpp"

namespace pifi {

// Scalar objective of a parameter store, evaluated in f64.
using ScalarObjective = std::function<Var<double>(Graph<double>&, const ParamStore<double>&)>;

struct GradCheckOptions {
    double eps = 1e-5;
    // Coordinates sampled per trainable tensor (all of them when the tensor is smaller).
    std::size_t coords_per_tensor = 8;
    std::uint64_t seed = 0;
    // 2: (f(θ+ε) − f(θ−ε)) / 2ε, truncation error O(ε²).
    // 4: (f(θ−2ε) − 8f(θ−ε) + 8f(θ+ε) − f(θ+2ε)) / 12ε, truncation error O(ε⁴).
    int stencil = 2;
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t coords_checked = 0;
    std::string worst_param;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

// Compares reverse-mode gradients with central differences over sampled
// coordinates of every trainable tensor.
// Relative error is |analytic − numeric| / (|numeric| + 1e−8).
// `params` is perturbed in place and restored before returning.
GradCheckResult grad_check(const ScalarObjective& f, ParamStore<double>& params, const GradCheckOptions& options = {});

}  // namespace pifi
