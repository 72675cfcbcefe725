#pragma once

#include <cstdint>
#include <string>

#include "pifi/autograd/param_store.hpp"

namespace pifi::ckpt {

// normal_trunc: weights ~ N(0, sigma²) resampled outside ±2 sigma, biases 0,
//               gains 1.
// zeros:        every tensor 0, gains included.
// ones_for_gains: weights and biases 0, gains 1.
enum class InitScheme { normal_trunc, zeros, ones_for_gains };

InitScheme init_scheme_from_string(const std::string& s);

// Each tensor draws from a counter-based stream keyed by (seed, name), so a
// tensor's values do not depend on which other tensors exist.
template <typename T = float>
ParamStore<T> init_params(const ParamLayout& layout, std::uint64_t seed, InitScheme scheme = InitScheme::normal_trunc,
                          double sigma = 0.02);

// Same draw, for a single tensor.
template <typename T = float>
Tensor<T> init_tensor(const ParamSpec& spec, std::uint64_t seed, InitScheme scheme, double sigma = 0.02);

}  // namespace pifi::ckpt
