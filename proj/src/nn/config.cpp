#include "pifi/nn/config.hpp"

#include "pifi/errors.hpp"

namespace pifi::nn {

void AttentionConfig::validate() const {
    if (d_model == 0 || n_heads == 0 || n_kv_heads == 0)
        throw ConfigError("attention: d_model, n_heads and n_kv_heads must be positive");
    if (head_dim == 0 && d_model % n_heads != 0)
        throw ConfigError("attention: d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                          std::to_string(n_heads));
    if (n_heads % n_kv_heads != 0)
        throw ConfigError("attention: n_heads " + std::to_string(n_heads) + " not divisible by n_kv_heads " +
                          std::to_string(n_kv_heads));
    if (rope && resolved_head_dim() % 2 != 0)
        throw ConfigError("attention: rope needs an even head_dim, got " + std::to_string(resolved_head_dim()));
}

void BlockConfig::validate() const {
    attention.validate();
    if (d_ffn == 0) throw ConfigError("block: d_ffn must be positive");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("block: dropout must lie in [0, 1)");
    if (eps <= 0.0) throw ConfigError("block: eps must be positive");
    if (extra_norms != 0 && extra_norms != 2) throw ConfigError("block: extra_norms must be 0 or 2");
    if (extra_norms && style != BlockStyle::donor_pre_rmsnorm_gated)
        throw ConfigError("block: extra norms only apply to the gated donor style");
}

BlockConfig ShapePreset::block() const {
    BlockConfig b;
    b.style = style;
    b.attention.d_model = d_model;
    b.attention.n_heads = n_heads;
    b.attention.n_kv_heads = n_kv_heads;
    b.attention.head_dim = head_dim;
    b.d_ffn = d_ffn;
    b.extra_norms = extra_norms;
    b.gate_activation = gate_activation;
    if (style == BlockStyle::slm_post_ln_gelu) {
        b.attention.qkv_bias = true;
        b.attention.o_bias = true;
        b.attention.rope = false;
        b.eps = 1e-12;
        b.dropout = 0.1;
    } else {
        b.attention.qkv_bias = qkv_bias;
        b.attention.rope = true;
        b.attention.causal = true;
        b.eps = 1e-5;
        b.dropout = 0.0;
    }
    return b;
}

const std::vector<ShapePreset>& shape_presets() {
    using S = BlockStyle;
    static const std::vector<ShapePreset> presets = {
        {"llama31_8b", 4096, 14336, 32, 8, 0, false, 0, S::donor_pre_rmsnorm_gated, Activation::silu},
        {"llama31_70b", 8192, 28672, 64, 8, 0, false, 0, S::donor_pre_rmsnorm_gated, Activation::silu},
        {"mistral7b", 4096, 14336, 32, 8, 0, false, 0, S::donor_pre_rmsnorm_gated, Activation::silu},
        {"qwen2_0p5b", 896, 4864, 14, 2, 0, true, 0, S::donor_pre_rmsnorm_gated, Activation::silu},
        {"qwen2_1p5b", 1536, 8960, 12, 2, 0, true, 0, S::donor_pre_rmsnorm_gated, Activation::silu},
        {"qwen2_7b", 3584, 18944, 28, 4, 0, true, 0, S::donor_pre_rmsnorm_gated, Activation::silu},
        {"gemma2_9b", 3584, 14336, 16, 8, 256, false, 2, S::donor_pre_rmsnorm_gated, Activation::gelu},
        {"falcon7b", 4544, 18176, 71, 1, 64, false, 0, S::donor_parallel_ln_gelu, Activation::gelu},
        {"bert_base", 768, 3072, 12, 12, 0, true, 0, S::slm_post_ln_gelu, Activation::gelu},
        {"desk_donor", 128, 344, 4, 2, 0, false, 0, S::donor_pre_rmsnorm_gated, Activation::silu},
        {"desk_slm", 64, 256, 4, 4, 0, true, 0, S::slm_post_ln_gelu, Activation::gelu},
    };
    return presets;
}

const ShapePreset& shape_preset(std::string_view name) {
    for (const auto& p : shape_presets())
        if (p.name == name) return p;
    std::string known;
    for (const auto& p : shape_presets()) known += (known.empty() ? "" : ", ") + p.name;
    throw ConfigError("unknown preset '" + std::string(name) + "' (known: " + known + ")");
}

namespace {

void add_linear(ParamLayout& out, const std::string& name, std::size_t in, std::size_t width, bool bias) {
    out.push_back({name + ".weight", {in, width}, ParamRole::weight});
    if (bias) out.push_back({name + ".bias", {width}, ParamRole::bias});
}

void add_layer_norm(ParamLayout& out, const std::string& name, std::size_t d) {
    out.push_back({name + ".gain", {d}, ParamRole::gain});
    out.push_back({name + ".bias", {d}, ParamRole::bias});
}

void add_attention(ParamLayout& out, const std::string& prefix, const AttentionConfig& a) {
    const std::size_t d = a.d_model;
    add_linear(out, prefix + ".q", d, a.q_width(), a.qkv_bias);
    add_linear(out, prefix + ".k", d, a.kv_width(), a.qkv_bias);
    add_linear(out, prefix + ".v", d, a.kv_width(), a.qkv_bias);
    add_linear(out, prefix + ".o", a.q_width(), d, a.o_bias);
}

}  // namespace

ParamLayout block_layout(const BlockConfig& cfg) {
    cfg.validate();
    const std::size_t d = cfg.d_model();
    ParamLayout out;
    switch (cfg.style) {
        case BlockStyle::donor_pre_rmsnorm_gated:
            out.push_back({"norm1.gain", {d}, ParamRole::gain});
            add_attention(out, "attn", cfg.attention);
            if (cfg.extra_norms) out.push_back({"norm3.gain", {d}, ParamRole::gain});
            out.push_back({"norm2.gain", {d}, ParamRole::gain});
            add_linear(out, "ffn.gate", d, cfg.d_ffn, false);
            add_linear(out, "ffn.up", d, cfg.d_ffn, false);
            add_linear(out, "ffn.down", cfg.d_ffn, d, false);
            if (cfg.extra_norms) out.push_back({"norm4.gain", {d}, ParamRole::gain});
            break;
        case BlockStyle::donor_parallel_ln_gelu:
            add_layer_norm(out, "norm1", d);
            add_attention(out, "attn", cfg.attention);
            add_linear(out, "ffn.w1", d, cfg.d_ffn, false);
            add_linear(out, "ffn.w2", cfg.d_ffn, d, false);
            break;
        case BlockStyle::slm_post_ln_gelu:
            add_attention(out, "attn", cfg.attention);
            add_layer_norm(out, "norm1", d);
            add_linear(out, "ffn.w1", d, cfg.d_ffn, true);
            add_linear(out, "ffn.w2", cfg.d_ffn, d, true);
            add_layer_norm(out, "norm2", d);
            break;
    }
    return out;
}

ParamLayout decoder_block_layout(const BlockConfig& cfg) {
    if (cfg.style != BlockStyle::slm_post_ln_gelu) throw ConfigError("decoder blocks use the SLM style");
    ParamLayout out = block_layout(cfg);
    AttentionConfig cross = cfg.attention;
    cross.causal = false;
    cross.rope = false;
    add_attention(out, "xattn", cross);
    add_layer_norm(out, "norm3", cfg.d_model());
    return out;
}

std::uint64_t linear_param_count(std::uint64_t in, std::uint64_t out, bool bias) {
    return in * out + (bias ? out : 0);
}

namespace {

std::uint64_t attention_count(const AttentionConfig& a) {
    const std::uint64_t d = a.d_model, q = a.q_width(), kv = a.kv_width();
    return d * q + 2 * d * kv + q * d + (a.qkv_bias ? q + 2 * kv : 0) + (a.o_bias ? d : 0);
}

}  // namespace

std::uint64_t block_param_count(const BlockConfig& cfg) {
    cfg.validate();
    const std::uint64_t d = cfg.d_model(), f = cfg.d_ffn;
    switch (cfg.style) {
        case BlockStyle::donor_pre_rmsnorm_gated:
            return attention_count(cfg.attention) + 3 * d * f + (2 + cfg.extra_norms) * d;
        case BlockStyle::donor_parallel_ln_gelu:
            return attention_count(cfg.attention) + 2 * d * f + 2 * d;
        case BlockStyle::slm_post_ln_gelu:
            return attention_count(cfg.attention) + 2 * d * f + f + d + 4 * d;
    }
    return 0;
}

std::uint64_t decoder_block_param_count(const BlockConfig& cfg) {
    AttentionConfig cross = cfg.attention;
    return block_param_count(cfg) + attention_count(cross) + 2 * cfg.d_model();
}

std::string to_string(BlockStyle style) {
    switch (style) {
        case BlockStyle::slm_post_ln_gelu: return "slm_post_ln_gelu";
        case BlockStyle::donor_pre_rmsnorm_gated: return "donor_pre_rmsnorm_gated";
        case BlockStyle::donor_parallel_ln_gelu: return "donor_parallel_ln_gelu";
    }
    return "?";
}

BlockStyle block_style_from_string(std::string_view s) {
    if (s == "slm_post_ln_gelu") return BlockStyle::slm_post_ln_gelu;
    if (s == "donor_pre_rmsnorm_gated") return BlockStyle::donor_pre_rmsnorm_gated;
    if (s == "donor_parallel_ln_gelu") return BlockStyle::donor_parallel_ln_gelu;
    throw ConfigError("unknown block style '" + std::string(s) + "'");
}

}  // namespace pifi::nn
