#include "pifi/experiment/gradcheck.hpp"

#include <algorithm>
#include <memory>

#include "pifi/checkpoint/init.hpp"
#include "pifi/errors.hpp"
#include "pifi/nn/blocks.hpp"

namespace pifi::experiment {

namespace {

Tensor<double> random_tensor(Rng& rng, Shape shape) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.uniform(-1.0, 1.0);
    return Tensor<double>(std::move(shape), std::move(v));
}

// A fixed random linear functional: unlike cross-entropy it cannot saturate,
// so no parameter's gradient collapses toward zero.
Var<double> probe(Var<double> y, std::uint64_t key) {
    std::vector<double> w(y.numel());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = counter_uniform(key, i) * 2.0 - 1.0;
    return sum(mul(y, y.graph->constant(Tensor<double>(y.shape(), std::move(w)))));
}

// Block parameters with gains and biases jittered off their init values.
ParamStore<double> jittered_store(const ParamLayout& layout, std::uint64_t seed) {
    auto store = ckpt::init_params<double>(layout, seed, ckpt::InitScheme::normal_trunc, 0.3);
    Rng rng(seed + 7);
    for (auto& [name, p] : store) {
        for (auto& v : p.value.data()) v += rng.uniform(-0.1, 0.1);
        if (name.ends_with("attn.k.bias")) p.trainable = false;
    }
    return store;
}

nn::BlockConfig tiny_slm_block(std::size_t d) {
    nn::BlockConfig c;
    c.style = nn::BlockStyle::slm_post_ln_gelu;
    c.attention = {.d_model = d, .n_heads = 4, .n_kv_heads = 4, .qkv_bias = true, .o_bias = true};
    c.d_ffn = 2 * d;
    c.eps = 1e-12;
    c.dropout = 0.1;
    return c;
}

}  // namespace

nn::BlockConfig tiny_donor_block(std::size_t d) {
    nn::BlockConfig c;
    c.style = nn::BlockStyle::donor_pre_rmsnorm_gated;
    c.attention = {.d_model = d, .n_heads = 4, .n_kv_heads = 2, .causal = true, .rope = true};
    c.d_ffn = d + 8;
    c.eps = 1e-5;
    return c;
}

model::SlmConfig tiny_slm(model::SlmFamily family, std::size_t d) {
    model::SlmConfig c;
    c.family = family;
    c.vocab_size = 11;
    c.d_model = d;
    c.n_layers = 1;
    c.n_dec_layers = family == model::SlmFamily::encoder_decoder ? 1 : 0;
    c.n_heads = 2;
    c.d_ffn = 16;
    c.max_positions = 8;
    c.n_segments = family == model::SlmFamily::encoder ? 2 : 0;
    return c;
}

model::PiFiConfig tiny_pifi(model::SlmFamily family, std::size_t n_donor, std::size_t donor_d) {
    model::PiFiConfig c;
    c.donor_block = tiny_donor_block(donor_d);
    for (std::size_t i = 1; i <= n_donor; ++i) c.donor_layer_indices.push_back(i);
    c.pooling = family == model::SlmFamily::encoder        ? model::Pooling::cls
                : family == model::SlmFamily::decoder_only ? model::Pooling::last_nonpad
                                                           : model::Pooling::mean_nonpad;
    c.donor_init = model::DonorInit::random;
    c.donor_seed = 99;
    c.n_classes = 3;
    return c;
}

model::TokenBatch random_token_batch(Rng& rng, std::size_t b, std::size_t s, std::size_t vocab, std::size_t min_len,
                                     bool segments) {
    model::TokenBatch t{b, s, std::vector<std::int32_t>(b * s), {}, std::vector<std::uint8_t>(b * s)};
    if (segments) t.segments.assign(b * s, 0);
    for (std::size_t r = 0; r < b; ++r) {
        const auto len = static_cast<std::size_t>(
            rng.between(static_cast<std::int64_t>(min_len), static_cast<std::int64_t>(s)));
        for (std::size_t j = 0; j < s; ++j) {
            t.ids[r * s + j] = j < len ? static_cast<std::int32_t>(rng.below(vocab)) : 0;
            t.valid[r * s + j] = j < len;
            if (segments) t.segments[r * s + j] = j >= len / 2 ? 1 : 0;
        }
    }
    return t;
}

GradCheckResult model_grad_check(const model::PiFiModel<float>& built, std::uint64_t seed) {
    model::PiFiModel<double> m = built.template cast<double>();
    Rng rng(seed);
    // Widen weights (sigma 0.02 -> 0.1) so activations are not nearly linear.
    // Gains stay near 1: large gains saturate attention and shrink gradients
    // to round-off level.
    for (auto& np : m.named_params()) {
        const bool gain = np.name.ends_with(".gain");
        const bool bias = np.name.ends_with(".bias");
        for (auto& v : np.param->value.data()) v = (gain || bias ? v : v * 5.0) + rng.uniform(-0.1, 0.1);
        np.param->trainable = !np.name.ends_with("attn.k.bias");
    }
    const bool seq2seq = m.kind == model::ModelKind::slm && m.slm_cfg.family == model::SlmFamily::encoder_decoder;
    const std::size_t vocab = m.slm_cfg.vocab_size;
    const auto src = random_token_batch(rng, 2, 5, vocab, 2, m.slm_cfg.family == model::SlmFamily::encoder);
    const auto tgt = random_token_batch(rng, 2, 4, vocab, 4);
    auto flat = m.flatten();
    // Graph leaves view parameter buffers, so the model evaluated last must
    // outlive the graph that grad_check differentiates.
    auto live = std::make_shared<model::PiFiModel<double>>(m);
    ScalarObjective f = [live, src, tgt, seq2seq, seed](Graph<double>& g, const ParamStore<double>& p) {
        auto& copy = *live;
        copy.load_flat(p);
        nn::ForwardContext ctx;
        const Var<double> logits = seq2seq ? model::forward_seq2seq(g, copy, src, tgt, ctx)
                                           : model::forward_classify(g, copy, src, ctx);
        return probe(logits, seed);
    };
    return grad_check(f, flat, {.eps = 1e-4, .coords_per_tensor = 3, .seed = seed, .stencil = 4});
}

GradCheckResult block_grad_check(const nn::BlockConfig& cfg, std::uint64_t seed) {
    Rng rng(seed + 21);
    auto store = jittered_store(nn::block_layout(cfg), seed + 3);
    store.add("x", random_tensor(rng, {2, 3, cfg.d_model()}));
    ScalarObjective f = [cfg, seed](Graph<double>& g, const ParamStore<double>& p) {
        nn::ForwardContext ctx;  // eval mode: dropout off
        const auto x = g.param(p.at("x"), "x");
        return probe(nn::block_forward(x, cfg, nn::ParamView(g, p), nullptr, ctx), seed + 99);
    };
    return grad_check(f, store, {.coords_per_tensor = 6, .seed = seed});
}

GradCheckResult decoder_block_grad_check(const nn::BlockConfig& cfg, std::uint64_t seed) {
    Rng rng(seed + 31);
    auto store = jittered_store(nn::decoder_block_layout(cfg), seed + 4);
    store.add("x", random_tensor(rng, {2, 3, cfg.d_model()}));
    store.add("mem", random_tensor(rng, {2, 4, cfg.d_model()}));
    const auto mem_mask = BoolMask::key_padding(2, 4, {1, 1, 1, 1, 1, 1, 0, 0});
    ScalarObjective f = [cfg, mem_mask, seed](Graph<double>& g, const ParamStore<double>& p) {
        nn::ForwardContext ctx;
        return probe(nn::decoder_block_forward(g.param(p.at("x"), "x"), g.param(p.at("mem"), "mem"), cfg,
                                               nn::ParamView(g, p), nullptr, &mem_mask, ctx),
                     seed + 5);
    };
    return grad_check(f, store, {.coords_per_tensor = 4, .seed = seed});
}

const std::vector<std::string>& gradcheck_targets() {
    static const std::vector<std::string> targets = {"block-gated", "block-gated-norms", "block-parallel",
                                                     "block-qkv-bias", "block-slm",      "block-decoder",
                                                     "pifi-encoder",   "pifi-encdec",    "pifi-decoder"};
    return targets;
}

GradCheckResult run_gradcheck(const std::string& target, std::size_t dim, std::uint64_t trial) {
    const auto& known = gradcheck_targets();
    if (std::find(known.begin(), known.end(), target) == known.end()) {
        std::string names;
        for (const auto& t : known) names += (names.empty() ? "" : ", ") + t;
        throw ConfigError("unknown gradcheck target '" + target + "' (known: " + names + ")");
    }
    if (dim < 8 || dim % 4 != 0 || dim > 64)
        throw ConfigError("gradcheck --dim must be a multiple of 4 in [8, 64], got " + std::to_string(dim));

    if (target.starts_with("block-")) {
        auto cfg = tiny_donor_block(dim);
        if (target == "block-gated-norms") {
            cfg.extra_norms = 2;
            cfg.gate_activation = nn::Activation::gelu;
        } else if (target == "block-parallel") {
            cfg.style = nn::BlockStyle::donor_parallel_ln_gelu;
            cfg.attention.n_kv_heads = 1;
        } else if (target == "block-qkv-bias") {
            cfg.attention.qkv_bias = true;
        } else if (target == "block-slm") {
            cfg = tiny_slm_block(dim);
        } else if (target == "block-decoder") {
            return decoder_block_grad_check(tiny_slm_block(dim), trial);
        }
        return block_grad_check(cfg, trial);
    }
    const auto family = target == "pifi-encoder" ? model::SlmFamily::encoder
                        : target == "pifi-encdec" ? model::SlmFamily::encoder_decoder
                                                  : model::SlmFamily::decoder_only;
    const auto m = model::build_pifi(tiny_slm(family, dim - 4), tiny_pifi(family, 1 + trial % 2, dim), nullptr, trial);
    return model_grad_check(m, trial);
}

}  // namespace pifi::experiment
