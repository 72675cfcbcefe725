#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "pifi/autograd/graph.hpp"

namespace pifi {

// Boolean keep-mask broadcastable (numpy rules, right-aligned) to
// [batch, s_q, s_kv]. keep[i] != 0 means the position may be attended.
struct BoolMask {
    Shape shape;
    std::vector<std::uint8_t> keep;

    // Key-padding mask from a [batch, s_kv] row-major validity vector.
    static BoolMask key_padding(std::size_t batch, std::size_t s_kv, std::vector<std::uint8_t> valid);
};

struct AttentionGeometry {
    std::size_t n_heads = 1;
    std::size_t n_kv_heads = 1;
    std::size_t head_dim = 1;
    bool causal = false;
};

// C = A·B for A[m×k], B[k×n]. Each output element reduces in ascending k.
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b);

// x[..., in]·W[in×out] (+ bias[out]).
template <typename T>
Var<T> linear(Var<T> x, Var<T> weight, std::optional<Var<T>> bias = std::nullopt);

template <typename T>
Var<T> linear(Var<T> x, Var<T> weight, Var<T> bias) {
    return linear(x, weight, std::optional<Var<T>>(bias));
}

// Elementwise sum. `b` may be a trailing-suffix shape of `a` (broadcast over leading axes).
template <typename T>
Var<T> add(Var<T> a, Var<T> b);

template <typename T>
Var<T> mul(Var<T> a, Var<T> b);

template <typename T>
Var<T> scale(Var<T> a, double factor);

template <typename T>
Var<T> softmax_rows(Var<T> x);

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, double eps);

template <typename T>
Var<T> rms_norm(Var<T> x, Var<T> gain, double eps);

// tanh approximation: 0.5x(1 + tanh(√(2/π)(x + 0.044715x³))).
template <typename T>
Var<T> gelu(Var<T> x);

template <typename T>
Var<T> silu(Var<T> x);

template <typename T>
Var<T> tanh(Var<T> x);

// Rows of table[V×d] selected by ids; result shape ids_shape + [d].
template <typename T>
Var<T> embedding(Var<T> table, std::span<const std::int32_t> ids, const Shape& ids_shape);

// x viewed as [N×d] (d = last axis); returns the selected rows [rows×d].
template <typename T>
Var<T> gather_rows(Var<T> x, std::span<const std::size_t> rows);

// x[b×s×d], weights[b·s] → [b×d], Σ_s w·x / Σ_s w per batch row.
template <typename T>
Var<T> masked_mean(Var<T> x, std::span<const T> weights);

// Grouped-query scaled dot-product attention core.
// q[b×s_q×(H·hd)], k,v[b×s_kv×(KV·hd)] → [b×s_q×(H·hd)].
// Query head h reads kv head h / (H/KV). Rows with no attendable key yield zeros.
template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, const AttentionGeometry& geom, const BoolMask* mask = nullptr);

// Rotary embedding on x[b×s×(H·hd)]: pair (2i, 2i+1) of each head at sequence
// position p rotates by p·θ^(−2i/hd).
template <typename T>
Var<T> rope(Var<T> x, std::size_t n_heads, std::size_t head_dim, std::span<const std::size_t> positions, double theta);

// Inverted dropout with a counter-based mask keyed by `key`.
template <typename T>
Var<T> dropout(Var<T> x, double p, std::uint64_t key);

template <typename T>
Var<T> reshape(Var<T> x, Shape shape);

template <typename T>
Var<T> sum(Var<T> x);

template <typename T>
Var<T> mean(Var<T> x);

// Mean of −log softmax(logits)[target] over rows whose target != ignore_index.
template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const std::int32_t> targets,
                     std::optional<std::int32_t> ignore_index = std::nullopt);

template <typename T>
Var<T> operator+(Var<T> a, Var<T> b) {
    return add(a, b);
}

template <typename T>
Var<T> operator*(Var<T> a, Var<T> b) {
    return mul(a, b);
}

namespace kernels {

// C[m×n] += A[m×k]·B[k×n], ascending-k accumulation per element.
template <typename T>
void gemm_acc(T* c, const T* a, const T* b, std::size_t m, std::size_t k, std::size_t n);

// C[k×n] += Aᵀ·B for A[m×k], B[m×n], ascending-m accumulation per element.
template <typename T>
void gemm_tn_acc(T* c, const T* a, const T* b, std::size_t m, std::size_t k, std::size_t n);

// C[m×k] += A[m×n]·Bᵀ for B[k×n].
template <typename T>
void gemm_nt_acc(T* c, const T* a, const T* b, std::size_t m, std::size_t n, std::size_t k);

}  // namespace kernels

}  // namespace pifi
