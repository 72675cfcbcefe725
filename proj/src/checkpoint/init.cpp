#include "pifi/checkpoint/init.hpp"

#include <cmath>
#include <numbers>

#include "pifi/autograd/rng.hpp"
#include "pifi/errors.hpp"

namespace pifi::ckpt {

InitScheme init_scheme_from_string(const std::string& s) {
    if (s == "normal_trunc") return InitScheme::normal_trunc;
    if (s == "zeros") return InitScheme::zeros;
    if (s == "ones_for_gains") return InitScheme::ones_for_gains;
    throw ConfigError("unknown init scheme '" + s + "' (known: normal_trunc, zeros, ones_for_gains)");
}

namespace {

// Standard normal restricted to [-2, 2] by resampling. Element i uses
// counters in its own block, so values are independent of tensor size.
double truncated_normal(std::uint64_t key, std::uint64_t i) {
    for (std::uint64_t attempt = 0;; ++attempt) {
        const std::uint64_t c = (i << 12 | (attempt & 0x7ff)) << 1;
        const double u1 = 1.0 - counter_uniform(key, c);  // (0, 1]
        const double u2 = counter_uniform(key, c + 1);
        const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
        if (std::abs(z) <= 2.0) return z;
    }
}

}  // namespace

template <typename T>
Tensor<T> init_tensor(const ParamSpec& spec, std::uint64_t seed, InitScheme scheme, double sigma) {
    Tensor<T> t(spec.shape);
    auto data = t.data();
    if (spec.role == ParamRole::gain) {
        if (scheme != InitScheme::zeros)
            for (auto& v : data) v = T(1);
        return t;
    }
    if (spec.role == ParamRole::bias || scheme != InitScheme::normal_trunc) return t;
    const std::uint64_t key = splitmix64(seed) ^ fnv1a64(spec.name);
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<T>(sigma * truncated_normal(key, i));
    return t;
}

template <typename T>
ParamStore<T> init_params(const ParamLayout& layout, std::uint64_t seed, InitScheme scheme, double sigma) {
    ParamStore<T> store;
    for (const auto& spec : layout) store.add(spec.name, init_tensor<T>(spec, seed, scheme, sigma));
    return store;
}

template ParamStore<float> init_params(const ParamLayout&, std::uint64_t, InitScheme, double);
template ParamStore<double> init_params(const ParamLayout&, std::uint64_t, InitScheme, double);
template Tensor<float> init_tensor(const ParamSpec&, std::uint64_t, InitScheme, double);
template Tensor<double> init_tensor(const ParamSpec&, std::uint64_t, InitScheme, double);

}  // namespace pifi::ckpt
