#include <cmath>
#include <cstring>

#include "doctest.h"
#include "pifi/autograd/grad_check.hpp"
#include "pifi/autograd/rng.hpp"
#include "pifi/checkpoint/init.hpp"
#include "pifi/errors.hpp"
#include "pifi/nn/blocks.hpp"

using namespace pifi;
using namespace pifi::nn;

namespace {

Tensor<double> random_tensor(Rng& rng, Shape shape, double scale = 1.0) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.uniform(-scale, scale);
    return Tensor<double>(std::move(shape), std::move(v));
}

template <typename T>
std::vector<T> values(Var<T> v) {
    auto s = v.value();
    return {s.begin(), s.end()};
}

Var<double> probe(Var<double> y, std::uint64_t key) {
    std::vector<double> w(y.numel());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = counter_uniform(key, i) * 2.0 - 1.0;
    auto wv = y.graph->constant(Tensor<double>(y.shape(), std::move(w)));
    return sum(mul(y, wv));
}

BlockConfig small_donor(std::size_t d = 16, std::size_t heads = 4, std::size_t kv = 2) {
    BlockConfig c;
    c.style = BlockStyle::donor_pre_rmsnorm_gated;
    c.attention = {.d_model = d, .n_heads = heads, .n_kv_heads = kv, .causal = true, .rope = true};
    c.d_ffn = 2 * d + 8;
    c.eps = 1e-5;
    return c;
}

BlockConfig small_slm(std::size_t d = 16, std::size_t heads = 4) {
    BlockConfig c;
    c.style = BlockStyle::slm_post_ln_gelu;
    c.attention = {.d_model = d, .n_heads = heads, .n_kv_heads = heads, .qkv_bias = true, .o_bias = true};
    c.d_ffn = 2 * d;
    c.eps = 1e-12;
    c.dropout = 0.1;
    return c;
}

// Init with non-degenerate gains and biases so every parameter gets a
// gradient worth checking.
// A key bias shifts every score in a softmax row equally, so its true gradient
// is exactly zero and a relative-error check on it measures only noise; those
// tensors are left out of the check.
ParamStore<double> jittered_store(const ParamLayout& layout, std::uint64_t seed, double sigma) {
    auto store = ckpt::init_params<double>(layout, seed, ckpt::InitScheme::normal_trunc, sigma);
    Rng rng(seed + 7);
    for (auto& [name, p] : store) {
        for (auto& v : p.value.data()) v += rng.uniform(-0.1, 0.1);
        if (name.ends_with("attn.k.bias")) p.trainable = false;
    }
    return store;
}

}  // namespace

TEST_CASE("single-layer counts reproduce the published table") {
    const std::vector<std::pair<const char*, std::uint64_t>> expected = {
        {"llama31_8b", 218'112'000},  {"llama31_70b", 855'654'400}, {"mistral7b", 218'112'000},
        {"qwen2_0p5b", 14'912'384},   {"qwen2_1p5b", 46'797'824},   {"qwen2_7b", 233'057'792},
        {"gemma2_9b", 198'195'200},   {"falcon7b", 207'070'080},    {"bert_base", 7'087'872},
    };
    for (const auto& [name, count] : expected) {
        CAPTURE(name);
        CHECK(block_param_count(shape_preset(name).block()) == count);
    }
    CHECK(linear_param_count(768, 4096, false) == 3'145'728);
    CHECK(linear_param_count(768, 896, false) == 688'128);
}

TEST_CASE("layout element totals equal the closed-form count for every preset") {
    for (const auto& preset : shape_presets()) {
        CAPTURE(preset.name);
        const auto cfg = preset.block();
        CHECK(layout_numel(block_layout(cfg)) == block_param_count(cfg));
        if (cfg.style == BlockStyle::slm_post_ln_gelu)
            CHECK(layout_numel(decoder_block_layout(cfg)) == decoder_block_param_count(cfg));
    }
}

TEST_CASE("donor layouts carry no biases and exactly two norm gains") {
    for (const char* name : {"llama31_8b", "llama31_70b", "desk_donor"}) {
        const auto layout = block_layout(shape_preset(name).block());
        std::size_t gains = 0;
        for (const auto& s : layout) {
            CHECK(s.role != ParamRole::bias);
            if (s.role == ParamRole::gain) ++gains;
        }
        CHECK(gains == 2);
    }
    const auto slm = block_layout(shape_preset("bert_base").block());
    std::size_t biases = 0;
    for (const auto& s : slm) biases += s.role == ParamRole::bias;
    CHECK(biases == 8);  // q k v o w1 w2 + two LayerNorm biases
}

TEST_CASE("unknown preset lists known names") {
    try {
        shape_preset("gpt5");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("llama31_8b") != std::string::npos);
    }
}

TEST_CASE("attention with n_kv_heads == n_heads matches a dense per-head oracle") {
    Rng rng(42);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t d = 8, heads = trial % 2 ? 2 : 4, b = 2, sq = 3, skv = 4;
        const bool causal = trial % 3 == 0;
        AttentionConfig cfg{.d_model = d, .n_heads = heads, .n_kv_heads = heads, .causal = causal, .qkv_bias = true};
        ParamStore<double> store;
        for (const char* n : {"q", "k", "v", "o"}) {
            store.add(std::string(n) + ".weight", random_tensor(rng, {d, d}, 0.5));
            if (std::string(n) != "o") store.add(std::string(n) + ".bias", random_tensor(rng, {d}, 0.5));
        }
        const auto xq = random_tensor(rng, {b, sq, d});
        const auto xkv = random_tensor(rng, {b, skv, d});
        Graph<double> g(false);
        const auto out = values(attention_forward(g.constant(xq), g.constant(xkv), nullptr, cfg, ParamView(g, store)));

        auto proj = [&](const Tensor<double>& x, std::size_t s, const char* n, bool bias) {
            std::vector<double> y(b * s * d, 0.0);
            const auto& W = store.value(std::string(n) + ".weight");
            for (std::size_t r = 0; r < b * s; ++r)
                for (std::size_t j = 0; j < d; ++j) {
                    double acc = bias ? store.value(std::string(n) + ".bias")[j] : 0.0;
                    for (std::size_t i = 0; i < d; ++i) acc += x[r * d + i] * W[i * d + j];
                    y[r * d + j] = acc;
                }
            return y;
        };
        const auto q = proj(xq, sq, "q", true), k = proj(xkv, skv, "k", true), v = proj(xkv, skv, "v", true);
        const std::size_t hd = d / heads;
        std::vector<double> ctx(b * sq * d, 0.0);
        for (std::size_t bi = 0; bi < b; ++bi)
            for (std::size_t h = 0; h < heads; ++h)
                for (std::size_t i = 0; i < sq; ++i) {
                    std::vector<double> sc(skv);
                    double mx = -1e300;
                    for (std::size_t j = 0; j < skv; ++j) {
                        double dot = 0;
                        for (std::size_t t = 0; t < hd; ++t)
                            dot += q[(bi * sq + i) * d + h * hd + t] * k[(bi * skv + j) * d + h * hd + t];
                        sc[j] = (causal && j > i + (skv - sq)) ? -1e300 : dot / std::sqrt(double(hd));
                        mx = std::max(mx, sc[j]);
                    }
                    double z = 0;
                    for (auto& s : sc) z += (s = s <= -1e299 ? 0.0 : std::exp(s - mx));
                    for (std::size_t j = 0; j < skv; ++j)
                        for (std::size_t t = 0; t < hd; ++t)
                            ctx[(bi * sq + i) * d + h * hd + t] += sc[j] / z * v[(bi * skv + j) * d + h * hd + t];
                }
        const Tensor<double> ctx_t({b, sq, d}, ctx);
        const auto expected = proj(ctx_t, sq, "o", false);
        REQUIRE(out.size() == expected.size());
        for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == doctest::Approx(expected[i]).epsilon(1e-5));
    }
}

TEST_CASE("length-1 attention ignores the causal flag") {
    Rng rng(3);
    auto cfg = small_donor(16, 4, 2);
    const auto store = jittered_store(block_layout(cfg), 5, 0.2);
    const auto x = random_tensor(rng, {3, 1, 16});
    Graph<double> g(false);
    const auto a = values(donor_block_forward(g.constant(x), cfg, ParamView(g, store)));
    cfg.attention.causal = false;
    const auto b = values(donor_block_forward(g.constant(x), cfg, ParamView(g, store)));
    CHECK(a == b);
}

TEST_CASE("uniform value rows pass through attention unchanged") {
    Graph<double> g(false);
    Rng rng(8);
    const std::size_t b = 2, s = 5, heads = 2, hd = 3;
    auto q = g.constant(random_tensor(rng, {b, s, heads * hd}, 3.0));
    auto k = g.constant(random_tensor(rng, {b, s, heads * hd}, 3.0));
    std::vector<double> row = {0.5, -1.0, 2.0, 0.25, 7.0, -3.0};
    std::vector<double> vv;
    for (std::size_t i = 0; i < b * s; ++i) vv.insert(vv.end(), row.begin(), row.end());
    auto v = g.constant(Tensor<double>({b, s, heads * hd}, vv));
    for (bool causal : {false, true}) {
        const auto out = values(attention(q, k, v, {heads, heads, hd, causal}));
        for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == doctest::Approx(vv[i]).epsilon(1e-12));
    }
}

TEST_CASE("rope properties") {
    Graph<double> g(false);
    Rng rng(4);
    SUBCASE("position 0 is the identity") {
        const auto x = random_tensor(rng, {1, 1, 8});
        const std::vector<std::size_t> pos = {0};
        CHECK(values(rope(g.constant(x), 2, 4, pos, 10000.0)) == x.vec());
    }
    SUBCASE("pairwise norms are preserved") {
        const auto x = random_tensor(rng, {2, 6, 8});
        const auto pos = iota_positions(6);
        const auto y = values(rope(g.constant(x), 2, 4, pos, 10000.0));
        for (std::size_t i = 0; i < y.size(); i += 2)
            CHECK(std::hypot(y[i], y[i + 1]) == doctest::Approx(std::hypot(x[i], x[i + 1])).epsilon(1e-12));
    }
    SUBCASE("two-dimensional rotation at position 1 with base 1") {
        const double x0 = 0.3, x1 = -1.7;
        const std::vector<std::size_t> pos = {1};
        const auto y = values(rope(g.constant(Tensor<double>({1, 1, 2}, {x0, x1})), 1, 2, pos, 1.0));
        CHECK(y[0] == doctest::Approx(x0 * std::cos(1.0) - x1 * std::sin(1.0)).epsilon(1e-14));
        CHECK(y[1] == doctest::Approx(x0 * std::sin(1.0) + x1 * std::cos(1.0)).epsilon(1e-14));
    }
    SUBCASE("odd head_dim is a config error") {
        AttentionConfig cfg{.d_model = 6, .n_heads = 2, .n_kv_heads = 2, .rope = true};
        CHECK_THROWS_AS(cfg.validate(), ConfigError);
    }
}

TEST_CASE("donor block with zero weights is the residual identity") {
    for (const char* preset : {"desk_donor"}) {
        auto cfg = shape_preset(preset).block();
        const auto store = ckpt::init_params<double>(block_layout(cfg), 1, ckpt::InitScheme::ones_for_gains);
        Rng rng(11);
        const auto x = random_tensor(rng, {2, 3, cfg.d_model()});
        Graph<double> g(false);
        CHECK(values(donor_block_forward(g.constant(x), cfg, ParamView(g, store))) == x.vec());
    }
    BlockConfig par;
    par.style = BlockStyle::donor_parallel_ln_gelu;
    par.attention = {.d_model = 8, .n_heads = 2, .n_kv_heads = 1, .causal = true, .rope = true};
    par.d_ffn = 16;
    const auto store = ckpt::init_params<double>(block_layout(par), 1, ckpt::InitScheme::ones_for_gains);
    Rng rng(12);
    const auto x = random_tensor(rng, {1, 4, 8});
    Graph<double> g(false);
    CHECK(values(donor_block_forward(g.constant(x), par, ParamView(g, store))) == x.vec());
}

TEST_CASE("donor block rejects a wrong input width and the SLM style") {
    const auto cfg = small_donor();
    const auto store = ckpt::init_params<double>(block_layout(cfg), 1);
    Graph<double> g(false);
    auto x = g.constant(Tensor<double>({1, 2, 12}));
    CHECK_THROWS_AS(donor_block_forward(x, cfg, ParamView(g, store)), DimensionError);
    auto y = g.constant(Tensor<double>({1, 2, 16}));
    CHECK_THROWS_AS(donor_block_forward(y, small_slm(), ParamView(g, store)), ConfigError);
}

TEST_CASE("block gradients match central differences at d=16") {
    struct Case {
        const char* label;
        BlockConfig cfg;
    };
    BlockConfig gemma_like = small_donor();
    gemma_like.extra_norms = 2;
    gemma_like.gate_activation = Activation::gelu;
    BlockConfig parallel = small_donor(16, 4, 1);
    parallel.style = BlockStyle::donor_parallel_ln_gelu;
    BlockConfig qwen_like = small_donor();
    qwen_like.attention.qkv_bias = true;
    const std::vector<Case> cases = {
        {"gated", small_donor()}, {"gated+norms", gemma_like}, {"parallel", parallel},
        {"qkv-bias", qwen_like},  {"slm", small_slm()},
    };
    for (const auto& c : cases) {
        const std::string label = c.label;
        CAPTURE(label);
        Rng rng(21);
        auto store = jittered_store(block_layout(c.cfg), 3, 0.3);
        store.add("x", random_tensor(rng, {2, 3, 16}));
        const BlockConfig cfg = c.cfg;
        ScalarObjective f = [cfg](Graph<double>& g, const ParamStore<double>& p) {
            ForwardContext ctx;  // eval mode: dropout off
            const auto x = g.param(p.at("x"), "x");
            return probe(block_forward(x, cfg, ParamView(g, p), nullptr, ctx), 99);
        };
        const auto r = grad_check(f, store, {.coords_per_tensor = 6, .seed = 1});
        CAPTURE(r.worst_param);
        CHECK(r.max_rel_error <= 1e-4);
    }
}

TEST_CASE("decoder block gradients match central differences") {
    auto cfg = small_slm();
    Rng rng(31);
    auto store = jittered_store(decoder_block_layout(cfg), 4, 0.3);
    store.add("x", random_tensor(rng, {2, 3, 16}));
    store.add("mem", random_tensor(rng, {2, 4, 16}));
    const auto mem_mask = BoolMask::key_padding(2, 4, {1, 1, 1, 1, 1, 1, 0, 0});
    ScalarObjective f = [cfg, mem_mask](Graph<double>& g, const ParamStore<double>& p) {
        ForwardContext ctx;
        return probe(decoder_block_forward(g.param(p.at("x"), "x"), g.param(p.at("mem"), "mem"), cfg, ParamView(g, p),
                                           nullptr, &mem_mask, ctx),
                     5);
    };
    const auto r = grad_check(f, store, {.coords_per_tensor = 4, .seed = 2});
    CAPTURE(r.worst_param);
    CHECK(r.max_rel_error <= 1e-4);
}

TEST_CASE("frozen donor parameters receive no gradient") {
    const auto cfg = small_donor();
    auto donor = ckpt::init_params<double>(block_layout(cfg), 9);
    donor.set_trainable(false);
    Rng rng(2);
    Graph<double> g;
    auto x = g.leaf(random_tensor(rng, {1, 3, 16}), true);
    const auto loss = sum(donor_block_forward(x, cfg, ParamView(g, donor, "donor.0.")));
    const auto grads = g.named(g.backward(loss));
    CHECK(grads.size() == 0);
    for (std::size_t id = 0; id < g.size(); ++id)
        if (!g.param_name(id).empty()) CHECK_FALSE(g.has_grad_buffer(id));
}

TEST_CASE("slm block: eval is deterministic, training applies dropout") {
    const auto cfg = small_slm();
    const auto store = ckpt::init_params<float>(block_layout(cfg), 13);
    Rng rng(5);
    const auto x = random_tensor(rng, {2, 4, 16}).cast<float>();
    auto run = [&](bool training) {
        Graph<float> g(false);
        ForwardContext ctx{.training = training, .seed = 77};
        return values(slm_block_forward(g.constant(x), cfg, ParamView(g, store), nullptr, ctx));
    };
    const auto a = run(false), b = run(false);
    CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);
    CHECK(run(true) != a);
    CHECK(run(true) == run(true));
}

TEST_CASE("slm block with zero FFN reduces to the attention sublayer") {
    const auto cfg = small_slm();
    auto store = ckpt::init_params<double>(block_layout(cfg), 17);
    for (const char* n : {"ffn.w1.weight", "ffn.w1.bias", "ffn.w2.weight", "ffn.w2.bias"})
        for (auto& v : store.at(n).value.data()) v = 0.0;
    Rng rng(6);
    const auto x = random_tensor(rng, {1, 3, 16});
    Graph<double> g(false);
    ForwardContext ctx;
    const ParamView<double> p(g, store);
    const auto out = values(slm_block_forward(g.constant(x), cfg, p, nullptr, ctx));
    const auto a = layer_norm(g.constant(x) + attention_forward(g.constant(x), g.constant(x), nullptr, cfg.attention,
                                                                 p.sub("attn.")),
                              p("norm1.gain"), p("norm1.bias"), cfg.eps);
    const auto expected = values(layer_norm(a, p("norm2.gain"), p("norm2.bias"), cfg.eps));
    REQUIRE(out.size() == expected.size());
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == doctest::Approx(expected[i]).epsilon(1e-12));
}
