#include "pifi/nn/blocks.hpp"

#include <numeric>

namespace pifi::nn {

std::vector<std::size_t> iota_positions(std::size_t n) {
    std::vector<std::size_t> pos(n);
    std::iota(pos.begin(), pos.end(), std::size_t{0});
    return pos;
}

namespace {

template <typename T>
Var<T> project(Var<T> x, const ParamView<T>& p, const std::string& name) {
    if (p.has(name + ".bias")) return linear(x, p(name + ".weight"), p(name + ".bias"));
    return linear(x, p(name + ".weight"));
}

template <typename T>
Var<T> activate(Var<T> x, Activation act) {
    return act == Activation::silu ? silu(x) : gelu(x);
}

template <typename T>
Var<T> maybe_dropout(Var<T> x, double p, ForwardContext& ctx) {
    if (!ctx.training || p <= 0.0) return x;
    return dropout(x, p, ctx.next_key());
}

template <typename T>
void check_width(Var<T> x, std::size_t d, const char* who) {
    if (x.shape().size() != 3 || x.shape()[2] != d)
        throw DimensionError(std::string(who) + ": expected [b x s x " + std::to_string(d) + "] input, got " +
                             shape_str(x.shape()));
}

}  // namespace

template <typename T>
Var<T> attention_forward(Var<T> x_q, Var<T> x_kv, const BoolMask* mask, const AttentionConfig& cfg,
                         const ParamView<T>& params) {
    cfg.validate();
    check_width(x_q, cfg.d_model, "attention");
    check_width(x_kv, cfg.d_model, "attention");
    const std::size_t hd = cfg.resolved_head_dim();
    Var<T> q = project(x_q, params, "q");
    Var<T> k = project(x_kv, params, "k");
    Var<T> v = project(x_kv, params, "v");
    if (cfg.rope) {
        const auto pq = iota_positions(x_q.shape()[1]);
        const auto pk = iota_positions(x_kv.shape()[1]);
        q = rope(q, cfg.n_heads, hd, pq, cfg.rope_theta);
        k = rope(k, cfg.n_kv_heads, hd, pk, cfg.rope_theta);
    }
    const AttentionGeometry geom{cfg.n_heads, cfg.n_kv_heads, hd, cfg.causal};
    return project(attention(q, k, v, geom, mask), params, "o");
}

template <typename T>
Var<T> donor_block_forward(Var<T> x, const BlockConfig& cfg, const ParamView<T>& p, const BoolMask* mask) {
    check_width(x, cfg.d_model(), "donor block");
    switch (cfg.style) {
        case BlockStyle::donor_pre_rmsnorm_gated: {
            const Var<T> n = rms_norm(x, p("norm1.gain"), cfg.eps);
            Var<T> a = attention_forward(n, n, mask, cfg.attention, p.sub("attn."));
            if (cfg.extra_norms) a = rms_norm(a, p("norm3.gain"), cfg.eps);
            const Var<T> h = x + a;
            const Var<T> m = rms_norm(h, p("norm2.gain"), cfg.eps);
            Var<T> f = linear(activate(linear(m, p("ffn.gate.weight")), cfg.gate_activation) * linear(m, p("ffn.up.weight")),
                              p("ffn.down.weight"));
            if (cfg.extra_norms) f = rms_norm(f, p("norm4.gain"), cfg.eps);
            return h + f;
        }
        case BlockStyle::donor_parallel_ln_gelu: {
            const Var<T> n = layer_norm(x, p("norm1.gain"), p("norm1.bias"), cfg.eps);
            const Var<T> a = attention_forward(n, n, mask, cfg.attention, p.sub("attn."));
            const Var<T> f = linear(gelu(linear(n, p("ffn.w1.weight"))), p("ffn.w2.weight"));
            return (x + a) + f;
        }
        case BlockStyle::slm_post_ln_gelu: break;
    }
    throw ConfigError("donor_block_forward: block style " + to_string(cfg.style) + " is not a donor style");
}

template <typename T>
Var<T> slm_block_forward(Var<T> x, const BlockConfig& cfg, const ParamView<T>& p, const BoolMask* mask,
                         ForwardContext& ctx) {
    if (cfg.style != BlockStyle::slm_post_ln_gelu)
        throw ConfigError("slm_block_forward: block style " + to_string(cfg.style) + " is not the SLM style");
    check_width(x, cfg.d_model(), "slm block");
    const Var<T> att = maybe_dropout(attention_forward(x, x, mask, cfg.attention, p.sub("attn.")), cfg.dropout, ctx);
    const Var<T> a = layer_norm(x + att, p("norm1.gain"), p("norm1.bias"), cfg.eps);
    const Var<T> f = maybe_dropout(
        linear(gelu(linear(a, p("ffn.w1.weight"), p("ffn.w1.bias"))), p("ffn.w2.weight"), p("ffn.w2.bias")), cfg.dropout,
        ctx);
    return layer_norm(a + f, p("norm2.gain"), p("norm2.bias"), cfg.eps);
}

template <typename T>
Var<T> decoder_block_forward(Var<T> x, Var<T> memory, const BlockConfig& cfg, const ParamView<T>& p,
                             const BoolMask* self_mask, const BoolMask* memory_mask, ForwardContext& ctx) {
    check_width(x, cfg.d_model(), "decoder block");
    AttentionConfig self_cfg = cfg.attention;
    self_cfg.causal = true;
    AttentionConfig cross_cfg = cfg.attention;
    cross_cfg.causal = false;
    cross_cfg.rope = false;
    const Var<T> sa = maybe_dropout(attention_forward(x, x, self_mask, self_cfg, p.sub("attn.")), cfg.dropout, ctx);
    const Var<T> a = layer_norm(x + sa, p("norm1.gain"), p("norm1.bias"), cfg.eps);
    const Var<T> ca =
        maybe_dropout(attention_forward(a, memory, memory_mask, cross_cfg, p.sub("xattn.")), cfg.dropout, ctx);
    const Var<T> c = layer_norm(a + ca, p("norm3.gain"), p("norm3.bias"), cfg.eps);
    const Var<T> f = maybe_dropout(
        linear(gelu(linear(c, p("ffn.w1.weight"), p("ffn.w1.bias"))), p("ffn.w2.weight"), p("ffn.w2.bias")), cfg.dropout,
        ctx);
    return layer_norm(c + f, p("norm2.gain"), p("norm2.bias"), cfg.eps);
}

template <typename T>
Var<T> block_forward(Var<T> x, const BlockConfig& cfg, const ParamView<T>& params, const BoolMask* mask,
                     ForwardContext& ctx) {
    if (cfg.style == BlockStyle::slm_post_ln_gelu) return slm_block_forward(x, cfg, params, mask, ctx);
    return donor_block_forward(x, cfg, params, mask);
}

#define PIFI_INSTANTIATE_BLOCKS(T)                                                                                  \
    template Var<T> attention_forward(Var<T>, Var<T>, const BoolMask*, const AttentionConfig&, const ParamView<T>&); \
    template Var<T> donor_block_forward(Var<T>, const BlockConfig&, const ParamView<T>&, const BoolMask*);          \
    template Var<T> slm_block_forward(Var<T>, const BlockConfig&, const ParamView<T>&, const BoolMask*,             \
                                      ForwardContext&);                                                             \
    template Var<T> decoder_block_forward(Var<T>, Var<T>, const BlockConfig&, const ParamView<T>&, const BoolMask*, \
                                          const BoolMask*, ForwardContext&);                                        \
    template Var<T> block_forward(Var<T>, const BlockConfig&, const ParamView<T>&, const BoolMask*, ForwardContext&);

PIFI_INSTANTIATE_BLOCKS(float)
PIFI_INSTANTIATE_BLOCKS(double)

}  // namespace pifi::nn
