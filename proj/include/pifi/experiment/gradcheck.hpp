#pragma once

// Tiny configurations and gradient checks of every block type and every
// model family, shared by the CLI, the unit tests and the acceptance runner.

#include <cstdint>
#include <string>
#include <vector>

#include "pifi/autograd/grad_check.hpp"
#include "pifi/autograd/rng.hpp"
#include "pifi/model/pifi_model.hpp"

namespace pifi::experiment {

// Gated donor block of width d (4 heads, 2 kv heads, ffn d + 8).
nn::BlockConfig tiny_donor_block(std::size_t d = 16);
// One-layer SLM of width d over an 11-token vocabulary.
model::SlmConfig tiny_slm(model::SlmFamily family, std::size_t d = 12);
// n_donor random donor layers of width donor_d, 3 classes.
model::PiFiConfig tiny_pifi(model::SlmFamily family, std::size_t n_donor = 1, std::size_t donor_d = 16);

// Right-padded random batch; every row keeps at least `min_len` tokens.
model::TokenBatch random_token_batch(Rng& rng, std::size_t b, std::size_t s, std::size_t vocab, std::size_t min_len = 1,
                                     bool segments = false);

// Gradient check of a full model with respect to every parameter, donor
// layers included (they are made trainable for the check). Key biases are
// skipped: they shift each softmax row by a constant, so their true gradient
// is exactly zero and relative error on them is pure noise.
GradCheckResult model_grad_check(const model::PiFiModel<float>& built, std::uint64_t seed);

// Gradient check of one block (input included) at width cfg.d_model().
GradCheckResult block_grad_check(const nn::BlockConfig& cfg, std::uint64_t seed);
// Gradient check of an encoder-decoder decoder block, memory included.
GradCheckResult decoder_block_grad_check(const nn::BlockConfig& cfg, std::uint64_t seed);

// block-gated, block-gated-norms, block-parallel, block-qkv-bias, block-slm,
// block-decoder, pifi-encoder, pifi-encdec, pifi-decoder.
const std::vector<std::string>& gradcheck_targets();

// One trial of `target` at donor width `dim` (a multiple of 4, at least 8;
// the SLM runs at dim − 4). Throws ConfigError on an unknown target or width.
GradCheckResult run_gradcheck(const std::string& target, std::size_t dim, std::uint64_t trial);

}  // namespace pifi::experiment
