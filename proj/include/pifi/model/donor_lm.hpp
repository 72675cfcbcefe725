#pragma once

#include <map>
#include <string>

#include "pifi/model/pifi_model.hpp"

namespace pifi::model {

// A small causal language model in the donor block style, trained here so
// that its layers can be grafted. Archive names: "embed.tok", "layers.{i}.*",
// "final_norm.gain", "lm_head.weight".
struct DonorLmConfig {
    nn::BlockConfig block;
    std::size_t n_layers = 4;
    std::size_t vocab_size = 0;

    void validate() const;
    // Flat string map stored in the archive's "__metadata__" entry.
    std::map<std::string, std::string> to_metadata() const;
    static DonorLmConfig from_metadata(const std::map<std::string, std::string>& meta);
};

ParamLayout donor_lm_layout(const DonorLmConfig& cfg);

// Next-token logits [b × s × V].
template <typename T>
Var<T> donor_lm_forward(Graph<T>& g, const ParamStore<T>& params, const DonorLmConfig& cfg, const TokenBatch& batch);

}  // namespace pifi::model
