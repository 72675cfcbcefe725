#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "pifi/autograd/param_store.hpp"

namespace pifi::train {

struct TrainConfig {
    double lr = 5e-5;
    std::size_t epochs = 3;
    std::size_t batch_size = 32;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 0;
    std::optional<double> grad_clip;  // global L2 max-norm
    std::size_t eval_every = 0;       // steps between dev evaluations; 0 = end of each epoch only
    std::size_t max_steps = 0;        // stop after this many steps; 0 = no cap
    std::size_t max_len = 64;         // token budget per encoded row
    // Group rows of similar length into batches (within windows of 16 batches)
    // to cut padding; batch order is still shuffled.
    bool bucket_by_length = true;

    void validate() const;
};

template <typename T>
using GradMap = std::unordered_map<std::string, Tensor<T>>;

template <typename T>
struct AdamState {
    struct Moments {
        Tensor<T> m;
        Tensor<T> v;
    };
    std::unordered_map<std::string, Moments> moments;  // by parameter name
    std::uint64_t t = 0;
};

// One bias-corrected Adam update of every parameter named in `grads`:
//   m ← β₁m + (1−β₁)g,  v ← β₂v + (1−β₂)g²,
//   θ ← θ − lr · m̂ / (√v̂ + ε),  m̂ = m/(1−β₁ᵗ),  v̂ = v/(1−β₂ᵗ).
// Parameters absent from `grads` are not touched. A gradient for an unknown
// or frozen parameter, or of the wrong shape, is a ContractError.
template <typename T>
void adam_step(const std::vector<NamedParam<T>>& params, const GradMap<T>& grads, AdamState<T>& state,
               const TrainConfig& cfg);

template <typename T>
double grad_norm(const GradMap<T>& grads);

// Scales gradients so their global L2 norm is at most max_norm; returns the norm before scaling.
template <typename T>
double clip_grad_norm(GradMap<T>& grads, double max_norm);

}  // namespace pifi::train
