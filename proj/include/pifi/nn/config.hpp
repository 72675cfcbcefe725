#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "pifi/autograd/param_store.hpp"

namespace pifi::nn {

struct AttentionConfig {
    std::size_t d_model = 0;
    std::size_t n_heads = 1;
    std::size_t n_kv_heads = 1;
    // 0 means d_model / n_heads. Families such as Gemma-2 decouple the two.
    std::size_t head_dim = 0;
    bool causal = false;
    bool rope = false;
    double rope_theta = 10000.0;
    bool qkv_bias = false;
    bool o_bias = false;

    std::size_t resolved_head_dim() const { return head_dim ? head_dim : d_model / n_heads; }
    std::size_t q_width() const { return n_heads * resolved_head_dim(); }
    std::size_t kv_width() const { return n_kv_heads * resolved_head_dim(); }
    void validate() const;
};

enum class BlockStyle : std::uint8_t {
    // x → LN(x + Attn(x)) → LN(· + W₂·gelu(W₁·)) with biases everywhere (BERT-style).
    slm_post_ln_gelu,
    // x + Attn(RMSNorm(x)), then + W_down(act(W_gate·) ⊙ W_up·) on RMSNorm (Llama-style).
    donor_pre_rmsnorm_gated,
    // x + Attn(LN(x)) + W₂·gelu(W₁·LN(x)), one shared LayerNorm (Falcon-style).
    donor_parallel_ln_gelu,
};

enum class Activation : std::uint8_t { silu, gelu };

struct BlockConfig {
    BlockStyle style = BlockStyle::donor_pre_rmsnorm_gated;
    AttentionConfig attention;
    std::size_t d_ffn = 0;
    double dropout = 0.0;
    double eps = 1e-5;
    // Additional per-layer RMSNorm gains (post-attention and post-FFN) for Gemma-2-style blocks.
    std::size_t extra_norms = 0;
    Activation gate_activation = Activation::silu;

    std::size_t d_model() const { return attention.d_model; }
    bool is_donor() const { return style != BlockStyle::slm_post_ln_gelu; }
    void validate() const;
};

struct ShapePreset {
    std::string name;
    std::size_t d_model = 0;
    std::size_t d_ffn = 0;
    std::size_t n_heads = 0;
    std::size_t n_kv_heads = 0;
    std::size_t head_dim = 0;
    bool qkv_bias = false;
    std::size_t extra_norms = 0;
    BlockStyle style = BlockStyle::donor_pre_rmsnorm_gated;
    Activation gate_activation = Activation::silu;

    BlockConfig block() const;
};

// Registered presets: llama31_8b, llama31_70b, qwen2_0p5b, qwen2_1p5b, qwen2_7b,
// gemma2_9b, falcon7b, mistral7b, bert_base (the SLM block), desk_donor, desk_slm.
const std::vector<ShapePreset>& shape_presets();
const ShapePreset& shape_preset(std::string_view name);

// Parameter names/shapes of one block, local to the block ("attn.q.weight", ...).
ParamLayout block_layout(const BlockConfig& cfg);
// Same set of names for an encoder-decoder decoder block: the SLM layout plus
// cross-attention ("xattn.*") and its LayerNorm ("norm3.*").
ParamLayout decoder_block_layout(const BlockConfig& cfg);

// Closed-form parameter counts, independent of the layout enumeration.
std::uint64_t block_param_count(const BlockConfig& cfg);
std::uint64_t decoder_block_param_count(const BlockConfig& cfg);
std::uint64_t linear_param_count(std::uint64_t in, std::uint64_t out, bool bias);

std::string to_string(BlockStyle style);
BlockStyle block_style_from_string(std::string_view s);

}  // namespace pifi::nn
