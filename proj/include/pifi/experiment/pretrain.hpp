#pragma once

#include <cstdint>
#include <ostream>

#include "pifi/checkpoint/archive.hpp"
#include "pifi/model/donor_lm.hpp"
#include "pifi/train/trainer.hpp"

namespace pifi::experiment {

struct PretrainConfig {
    std::size_t n_tokens = 200'000;  // training stream length
    std::size_t eval_tokens = 20'000;  // held-out stream length
    std::size_t seq_len = 32;
    double init_sigma = 0.02;
    train::TrainConfig train;  // batch size, lr, epochs, max_steps, seed

    PretrainConfig();
    void validate() const;
};

// desk_donor block shape, n_layers layers, over the synthetic vocabulary.
model::DonorLmConfig desk_donor_lm(std::size_t n_layers = 4);

struct PretrainResult {
    ckpt::TensorArchive archive;  // embed.tok, layers.*, final_norm.gain, lm_head.weight
    double initial_ce = 0.0;      // held-out per-token cross-entropy, nats
    double final_ce = 0.0;
    double unigram_entropy = 0.0;  // of the held-out stream, nats
    train::TrainResult history;
};

// Held-out per-token cross-entropy of a donor LM over `stream`, cut into
// seq_len + 1 windows.
double donor_lm_cross_entropy(const ParamStore<float>& params, const model::DonorLmConfig& cfg,
                              const std::vector<std::int32_t>& stream, std::size_t seq_len);

// Plug-in entropy of the token frequencies of `stream`, nats.
double unigram_entropy(const std::vector<std::int32_t>& stream);

// Next-token training on gen_pretrain_corpus. The archive metadata holds the
// donor configuration plus the corpus parameters and the three losses.
PretrainResult pretrain_donor(const model::DonorLmConfig& donor, const PretrainConfig& cfg,
                              std::ostream* history_sink = nullptr);

}  // namespace pifi::experiment
