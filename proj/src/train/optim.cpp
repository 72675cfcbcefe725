#include "pifi/train/optim.hpp"

#include <cmath>
#include <map>

#include "pifi/errors.hpp"

namespace pifi::train {

void TrainConfig::validate() const {
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    if (epochs < 1) throw ConfigError("epochs must be at least 1");
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas must be in [0, 1)");
    if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
    if (grad_clip && !(*grad_clip > 0.0)) throw ConfigError("grad_clip must be positive");
    if (max_len < 3) throw ConfigError("max_len must be at least 3");
}

template <typename T>
void adam_step(const std::vector<NamedParam<T>>& params, const GradMap<T>& grads, AdamState<T>& state,
               const TrainConfig& cfg) {
    std::unordered_map<std::string, Parameter<T>*> by_name;
    for (const auto& np : params) by_name.emplace(np.name, np.param);
    // Validate everything before mutating anything.
    for (const auto& [name, g] : grads) {
        const auto it = by_name.find(name);
        if (it == by_name.end()) throw ContractError("adam_step: gradient for unknown parameter " + name);
        if (!it->second->trainable) throw ContractError("adam_step: gradient for frozen parameter " + name);
        if (g.shape() != it->second->value.shape())
            throw ContractError("adam_step: gradient shape mismatch for " + name + ": " + shape_str(g.shape()) + " vs " +
                                shape_str(it->second->value.shape()));
    }
    ++state.t;
    const double t = static_cast<double>(state.t);
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    // Fixed name order keeps the update independent of hash-map iteration.
    std::map<std::string, const Tensor<T>*> ordered;
    for (const auto& [name, g] : grads) ordered.emplace(name, &g);
    for (const auto& [name, gp] : ordered) {
        const Tensor<T>& g = *gp;
        Parameter<T>& p = *by_name.at(name);
        auto [it, fresh] = state.moments.try_emplace(name);
        if (fresh) {
            it->second.m = Tensor<T>(g.shape());
            it->second.v = Tensor<T>(g.shape());
        }
        auto& m = it->second.m;
        auto& v = it->second.v;
        for (std::size_t i = 0; i < g.numel(); ++i) {
            const double gi = static_cast<double>(g[i]);
            const double mi = cfg.beta1 * static_cast<double>(m[i]) + (1.0 - cfg.beta1) * gi;
            const double vi = cfg.beta2 * static_cast<double>(v[i]) + (1.0 - cfg.beta2) * gi * gi;
            m[i] = static_cast<T>(mi);
            v[i] = static_cast<T>(vi);
            const double step = cfg.lr * (mi / c1) / (std::sqrt(vi / c2) + cfg.adam_eps);
            p.value[i] = static_cast<T>(static_cast<double>(p.value[i]) - step);
        }
    }
}

template <typename T>
double grad_norm(const GradMap<T>& grads) {
    std::map<std::string, const Tensor<T>*> ordered;
    for (const auto& [name, g] : grads) ordered.emplace(name, &g);
    double s = 0.0;
    for (const auto& [name, g] : ordered)
        for (std::size_t i = 0; i < g->numel(); ++i) s += static_cast<double>((*g)[i]) * static_cast<double>((*g)[i]);
    return std::sqrt(s);
}

template <typename T>
double clip_grad_norm(GradMap<T>& grads, double max_norm) {
    const double norm = grad_norm(grads);
    if (norm > max_norm && std::isfinite(norm)) {
        const double f = max_norm / norm;
        for (auto& [name, g] : grads)
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] = static_cast<T>(static_cast<double>(g[i]) * f);
    }
    return norm;
}

#define PIFI_INSTANTIATE_OPTIM(T)                                                                                    \
    template void adam_step(const std::vector<NamedParam<T>>&, const GradMap<T>&, AdamState<T>&, const TrainConfig&); \
    template double grad_norm(const GradMap<T>&);                                                                     \
    template double clip_grad_norm(GradMap<T>&, double);

PIFI_INSTANTIATE_OPTIM(float)
PIFI_INSTANTIATE_OPTIM(double)

}  // namespace pifi::train
