#pragma once

// Short names for the tiny configurations shared with the library.

#include "pifi/experiment/gradcheck.hpp"

namespace pifi::fixtures {

using experiment::model_grad_check;
using experiment::tiny_donor_block;
using experiment::tiny_pifi;
using experiment::tiny_slm;

inline model::TokenBatch random_batch(Rng& rng, std::size_t b, std::size_t s, std::size_t vocab, std::size_t min_len = 1,
                                      bool segments = false) {
    return experiment::random_token_batch(rng, b, s, vocab, min_len, segments);
}

}  // namespace pifi::fixtures
