#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pifi/checkpoint/archive.hpp"
#include "pifi/nn/blocks.hpp"

namespace pifi::model {

enum class SlmFamily : std::uint8_t { encoder, encoder_decoder, decoder_only };
enum class Pooling : std::uint8_t { cls, mean_all, mean_nonpad, last_nonpad };
enum class FreezePolicy : std::uint8_t { donor_frozen, donor_trainable };
enum class DonorInit : std::uint8_t { from_archive, random };
enum class ModelKind : std::uint8_t { slm, donor_only };

std::string to_string(SlmFamily f);
std::string to_string(Pooling p);
SlmFamily slm_family_from_string(const std::string& s);
Pooling pooling_from_string(const std::string& s);

struct SlmConfig {
    SlmFamily family = SlmFamily::encoder;
    std::size_t vocab_size = 0;
    std::size_t d_model = 64;
    std::size_t n_layers = 2;
    std::size_t n_dec_layers = 0;  // encoder_decoder only
    std::size_t n_heads = 4;
    std::size_t d_ffn = 256;
    std::size_t max_positions = 64;
    std::size_t n_segments = 2;  // encoder family only
    double dropout = 0.1;
    double eps = 1e-12;
    // Std of the truncated-normal SLM and projection weights. Classification
    // heads always use 0.02 so a fresh model starts near the uniform prediction.
    double init_sigma = 0.02;
    bool pooler = false;  // BERT pooler weights: counted and stored, not used in forward

    void validate() const;
    // Encoder (or decoder-only) block; causal for decoder_only.
    nn::BlockConfig block() const;
    nn::BlockConfig decoder_block() const;
};

// bert-base-uncased shape: 30522 vocab, 512 positions, 2 segments, 12 layers, pooler.
SlmConfig bert_base_slm();
// desk_slm preset widths with the given family and vocabulary.
SlmConfig desk_slm(SlmFamily family, std::size_t vocab_size);

// Composition choices. An empty index list builds the vanilla model: the same
// SLM and head with no projections and no donor stack.
struct PiFiConfig {
    nn::BlockConfig donor_block;
    std::vector<std::size_t> donor_layer_indices;  // 1-based, strictly increasing
    Pooling pooling = Pooling::cls;
    FreezePolicy freeze_policy = FreezePolicy::donor_frozen;
    DonorInit donor_init = DonorInit::from_archive;
    std::uint64_t donor_seed = 0;  // random donor init only
    std::size_t n_classes = 2;      // classification families only

    bool vanilla() const { return donor_layer_indices.empty(); }
    void validate(const SlmConfig& slm) const;
};

// Right-padded token ids, row-major [batch × seq]. `segments` may be empty
// (all zero). `valid[i]` is 1 for real tokens, 0 for padding.
struct TokenBatch {
    std::size_t batch = 0;
    std::size_t seq = 0;
    std::vector<std::int32_t> ids;
    std::vector<std::int32_t> segments;
    std::vector<std::uint8_t> valid;

    void validate() const;
    Shape shape() const { return {batch, seq}; }
    // Index of the last valid position of row b; throws when the row is empty.
    std::size_t last_valid(std::size_t b) const;
};

// Parameter stores of a composed model. Global names: "slm.*", "l_in.weight",
// "donor.{i}.*" (i counts inserted layers from 0), "donor.embed.*"
// (donor_only kind), "l_out.weight", "head.*".
template <typename T>
struct PiFiModel {
    ModelKind kind = ModelKind::slm;
    SlmConfig slm_cfg;
    PiFiConfig cfg;
    ParamStore<T> slm;
    ParamStore<T> l_in;
    std::vector<ParamStore<T>> donor_layers;
    ParamStore<T> donor_embed;
    ParamStore<T> l_out;
    ParamStore<T> head;

    std::vector<NamedParam<T>> named_params();
    std::vector<NamedParam<T>> donor_params();

    // All parameters in one store under their global names, and back.
    ParamStore<T> flatten() const;
    void load_flat(const ParamStore<T>& flat);

    template <typename U>
    PiFiModel<U> cast() const {
        PiFiModel<U> out;
        out.kind = kind;
        out.slm_cfg = slm_cfg;
        out.cfg = cfg;
        out.slm = slm.template cast<U>();
        out.l_in = l_in.template cast<U>();
        for (const auto& d : donor_layers) out.donor_layers.push_back(d.template cast<U>());
        out.donor_embed = donor_embed.template cast<U>();
        out.l_out = l_out.template cast<U>();
        out.head = head.template cast<U>();
        return out;
    }
};

// Parameter layouts, named relative to their store.
ParamLayout slm_layout(const SlmConfig& cfg);
ParamLayout head_layout(std::size_t d, std::size_t n_classes);

struct ParamBreakdown {
    std::uint64_t slm = 0;
    std::uint64_t l_in = 0;
    std::uint64_t donor = 0;  // all inserted layers, plus donor embeddings for donor_only
    std::uint64_t l_out = 0;
    std::uint64_t head = 0;
    std::uint64_t trainable = 0;

    std::uint64_t total() const { return slm + l_in + donor + l_out + head; }
};

// Closed-form count from configs; no allocation. `trainable` follows the
// freeze policy.
ParamBreakdown count_params(const SlmConfig& slm, const PiFiConfig& pifi);
// Structural count over the instantiated buffers.
template <typename T>
ParamBreakdown count_params(const PiFiModel<T>& model);

// Assembles a model. SLM, projections and head are initialized from `seed`;
// the donor stack comes from `donor_archive` or, for DonorInit::random, from
// cfg.donor_seed. Donor tensors are frozen under FreezePolicy::donor_frozen.
PiFiModel<float> build_pifi(const SlmConfig& slm, const PiFiConfig& pifi, const ckpt::TensorArchive* donor_archive,
                            std::uint64_t seed);

enum class DonorLayerPick : std::uint8_t { first, last };

// Donor embeddings plus one donor layer, frozen, with a trainable head over
// the last non-pad position.
PiFiModel<float> build_donor_only_classifier(const ckpt::TensorArchive& donor_archive, const nn::BlockConfig& block,
                                             DonorLayerPick pick, std::size_t n_classes, std::uint64_t seed);

// Diagnostics recorded by the forward pass.
struct ForwardTrace {
    std::size_t donor_input_len = 0;
};

// Logits [b × C].
template <typename T>
Var<T> forward_classify(Graph<T>& g, const PiFiModel<T>& model, const TokenBatch& batch, nn::ForwardContext& ctx,
                        ForwardTrace* trace = nullptr);

// Teacher-forced logits [b × t × V].
template <typename T>
Var<T> forward_seq2seq(Graph<T>& g, const PiFiModel<T>& model, const TokenBatch& src, const TokenBatch& tgt_in,
                       nn::ForwardContext& ctx, ForwardTrace* trace = nullptr);

// Argmax decoding per source row until `eos` (not included) or max_len tokens.
template <typename T>
std::vector<std::vector<std::int32_t>> greedy_decode(const PiFiModel<T>& model, const TokenBatch& src,
                                                     std::size_t max_len, std::int32_t bos, std::int32_t eos);

// Multiply-accumulate counts for one forward pass over linear maps and
// attention products. Norms, activations and lookups count zero.
struct FlopsEstimate {
    std::uint64_t slm = 0;
    std::uint64_t l_in = 0;
    std::uint64_t donor = 0;
    std::uint64_t l_out = 0;
    std::uint64_t head = 0;
    std::size_t donor_input_len = 0;

    std::uint64_t total() const { return slm + l_in + donor + l_out + head; }
};

// `tgt_len` is the decoder length for encoder_decoder (defaults to seq_len).
FlopsEstimate estimate_flops(const SlmConfig& slm, const PiFiConfig& pifi, std::size_t seq_len, std::size_t batch,
                             std::size_t tgt_len = 0);

// MACs of one block over `seq` positions attending to `seq` keys.
std::uint64_t block_macs(const nn::BlockConfig& cfg, std::size_t seq);

}  // namespace pifi::model
