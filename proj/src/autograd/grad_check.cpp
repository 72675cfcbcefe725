#include "pifi/autograd/grad_check.hpp"

#include <cmath>
#include <numeric>

#include "pifi/autograd/rng.hpp"
#include "pifi/errors.hpp"

namespace pifi {

GradCheckResult grad_check(const ScalarObjective& f, ParamStore<double>& params, const GradCheckOptions& options) {
    if (options.stencil != 2 && options.stencil != 4) throw ConfigError("grad_check: stencil must be 2 or 4");
    std::unordered_map<std::string, Tensor<double>> analytic;
    {
        Graph<double> g(true);
        const Var<double> loss = f(g, params);
        analytic = g.named(g.backward(loss));
    }

    auto evaluate = [&] {
        Graph<double> g(false);
        return f(g, params).value()[0];
    };

    GradCheckResult result;
    Rng rng(options.seed);
    for (auto& [name, p] : params) {
        if (!p.trainable) continue;
        const std::size_t n = p.value.numel();
        std::vector<std::size_t> coords(n);
        std::iota(coords.begin(), coords.end(), std::size_t{0});
        if (n > options.coords_per_tensor) {
            rng.shuffle(coords.begin(), coords.end());
            coords.resize(options.coords_per_tensor);
        }
        const auto it = analytic.find(name);
        for (std::size_t idx : coords) {
            double& slot = p.value[idx];
            const double saved = slot;
            auto at = [&](double offset) {
                slot = saved + offset;
                const double v = evaluate();
                slot = saved;
                return v;
            };
            const double h = options.eps;
            // Symmetric pairs are differenced first so a flat objective gives exactly 0.
            const double d1 = at(h) - at(-h);
            const double numeric = options.stencil == 4 ? (8 * d1 - (at(2 * h) - at(-2 * h))) / (12 * h) : d1 / (2 * h);
            const double a = it == analytic.end() ? 0.0 : it->second[idx];
            const double rel = std::abs(a - numeric) / (std::abs(numeric) + 1e-8);
            ++result.coords_checked;
            if (rel > result.max_rel_error || std::isnan(rel)) {
                result.max_rel_error = std::isnan(rel) ? INFINITY : rel;
                result.worst_param = name;
                result.worst_index = idx;
                result.worst_analytic = a;
                result.worst_numeric = numeric;
            }
        }
    }
    return result;
}

}  // namespace pifi
