#include "pifi/model/donor_lm.hpp"

#include <sstream>

#include "pifi/errors.hpp"

namespace pifi::model {

namespace {

std::string exact(double v) {
    std::ostringstream out;
    out.precision(17);
    out << v;
    return out.str();
}

}  // namespace

void DonorLmConfig::validate() const {
    block.validate();
    if (block.style != nn::BlockStyle::donor_pre_rmsnorm_gated)
        throw ConfigError("donor LM supports the donor_pre_rmsnorm_gated style only");
    if (n_layers == 0 || vocab_size == 0) throw ConfigError("donor LM: n_layers and vocab_size must be positive");
}

std::map<std::string, std::string> DonorLmConfig::to_metadata() const {
    const auto& a = block.attention;
    return {
        {"style", nn::to_string(block.style)},
        {"d_model", std::to_string(a.d_model)},
        {"n_heads", std::to_string(a.n_heads)},
        {"n_kv_heads", std::to_string(a.n_kv_heads)},
        {"head_dim", std::to_string(a.resolved_head_dim())},
        {"causal", a.causal ? "1" : "0"},
        {"rope", a.rope ? "1" : "0"},
        {"rope_theta", exact(a.rope_theta)},
        {"qkv_bias", a.qkv_bias ? "1" : "0"},
        {"o_bias", a.o_bias ? "1" : "0"},
        {"d_ffn", std::to_string(block.d_ffn)},
        {"eps", exact(block.eps)},
        {"extra_norms", std::to_string(block.extra_norms)},
        {"gate_activation", block.gate_activation == nn::Activation::silu ? "silu" : "gelu"},
        {"n_layers", std::to_string(n_layers)},
        {"vocab_size", std::to_string(vocab_size)},
    };
}

DonorLmConfig DonorLmConfig::from_metadata(const std::map<std::string, std::string>& meta) {
    auto get = [&](const std::string& key) -> const std::string& {
        const auto it = meta.find(key);
        if (it == meta.end()) throw FormatError("__metadata__." + key, "missing donor configuration key");
        return it->second;
    };
    auto num = [&](const std::string& key) -> std::size_t {
        try {
            return std::stoull(get(key));
        } catch (const std::logic_error&) {
            throw FormatError("__metadata__." + key, "not an unsigned integer");
        }
    };
    auto real = [&](const std::string& key) -> double {
        try {
            return std::stod(get(key));
        } catch (const std::logic_error&) {
            throw FormatError("__metadata__." + key, "not a number");
        }
    };
    DonorLmConfig c;
    c.block.style = nn::block_style_from_string(get("style"));
    c.block.attention.d_model = num("d_model");
    c.block.attention.n_heads = num("n_heads");
    c.block.attention.n_kv_heads = num("n_kv_heads");
    c.block.attention.head_dim = num("head_dim");
    c.block.attention.causal = get("causal") == "1";
    c.block.attention.rope = get("rope") == "1";
    c.block.attention.rope_theta = real("rope_theta");
    c.block.attention.qkv_bias = get("qkv_bias") == "1";
    c.block.attention.o_bias = get("o_bias") == "1";
    c.block.d_ffn = num("d_ffn");
    c.block.eps = real("eps");
    c.block.dropout = 0.0;
    c.block.extra_norms = num("extra_norms");
    c.block.gate_activation = get("gate_activation") == "silu" ? nn::Activation::silu : nn::Activation::gelu;
    c.n_layers = num("n_layers");
    c.vocab_size = num("vocab_size");
    c.validate();
    return c;
}

ParamLayout donor_lm_layout(const DonorLmConfig& cfg) {
    cfg.validate();
    const std::size_t d = cfg.block.d_model();
    ParamLayout out;
    out.push_back({"embed.tok", {cfg.vocab_size, d}, ParamRole::weight});
    const auto block = nn::block_layout(cfg.block);
    for (std::size_t i = 0; i < cfg.n_layers; ++i)
        for (const auto& s : block) out.push_back({"layers." + std::to_string(i) + "." + s.name, s.shape, s.role});
    out.push_back({"final_norm.gain", {d}, ParamRole::gain});
    out.push_back({"lm_head.weight", {d, cfg.vocab_size}, ParamRole::weight});
    return out;
}

template <typename T>
Var<T> donor_lm_forward(Graph<T>& g, const ParamStore<T>& params, const DonorLmConfig& cfg, const TokenBatch& batch) {
    batch.validate();
    const nn::ParamView<T> p(g, params);
    Var<T> x = embedding(p("embed.tok"), std::span<const std::int32_t>(batch.ids), batch.shape());
    const BoolMask mask = BoolMask::key_padding(batch.batch, batch.seq, batch.valid);
    for (std::size_t i = 0; i < cfg.n_layers; ++i)
        x = nn::donor_block_forward(x, cfg.block, p.sub("layers." + std::to_string(i) + "."), &mask);
    x = rms_norm(x, p("final_norm.gain"), cfg.block.eps);
    return linear(x, p("lm_head.weight"));
}

template Var<float> donor_lm_forward(Graph<float>&, const ParamStore<float>&, const DonorLmConfig&, const TokenBatch&);
template Var<double> donor_lm_forward(Graph<double>&, const ParamStore<double>&, const DonorLmConfig&, const TokenBatch&);

}  // namespace pifi::model
