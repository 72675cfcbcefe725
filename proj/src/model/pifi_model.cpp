#include "pifi/model/pifi_model.hpp"

#include <algorithm>
#include <cmath>

#include "pifi/checkpoint/extract.hpp"
#include "pifi/checkpoint/init.hpp"
#include "pifi/errors.hpp"

namespace pifi::model {

std::string to_string(SlmFamily f) {
    switch (f) {
        case SlmFamily::encoder: return "encoder";
        case SlmFamily::encoder_decoder: return "encoder_decoder";
        case SlmFamily::decoder_only: return "decoder_only";
    }
    return "?";
}

std::string to_string(Pooling p) {
    switch (p) {
        case Pooling::cls: return "cls";
        case Pooling::mean_all: return "mean_all";
        case Pooling::mean_nonpad: return "mean_nonpad";
        case Pooling::last_nonpad: return "last_nonpad";
    }
    return "?";
}

SlmFamily slm_family_from_string(const std::string& s) {
    for (auto f : {SlmFamily::encoder, SlmFamily::encoder_decoder, SlmFamily::decoder_only})
        if (to_string(f) == s) return f;
    throw ConfigError("unknown SLM family '" + s + "' (known: encoder, encoder_decoder, decoder_only)");
}

Pooling pooling_from_string(const std::string& s) {
    for (auto p : {Pooling::cls, Pooling::mean_all, Pooling::mean_nonpad, Pooling::last_nonpad})
        if (to_string(p) == s) return p;
    throw ConfigError("unknown pooling '" + s + "' (known: cls, mean_all, mean_nonpad, last_nonpad)");
}

void SlmConfig::validate() const {
    if (vocab_size == 0 || d_model == 0 || n_layers == 0 || n_heads == 0 || d_ffn == 0 || max_positions == 0)
        throw ConfigError("SLM: vocab_size, d_model, n_layers, n_heads, d_ffn and max_positions must be positive");
    if (!(init_sigma > 0.0)) throw ConfigError("SLM: init_sigma must be positive");
    if (family == SlmFamily::encoder_decoder && n_dec_layers == 0)
        throw ConfigError("SLM: encoder_decoder needs n_dec_layers > 0");
    block().validate();
}

nn::BlockConfig SlmConfig::block() const {
    nn::BlockConfig b;
    b.style = nn::BlockStyle::slm_post_ln_gelu;
    b.attention.d_model = d_model;
    b.attention.n_heads = n_heads;
    b.attention.n_kv_heads = n_heads;
    b.attention.causal = family == SlmFamily::decoder_only;
    b.attention.qkv_bias = true;
    b.attention.o_bias = true;
    b.d_ffn = d_ffn;
    b.dropout = dropout;
    b.eps = eps;
    return b;
}

nn::BlockConfig SlmConfig::decoder_block() const {
    nn::BlockConfig b = block();
    b.attention.causal = true;
    return b;
}

SlmConfig bert_base_slm() {
    SlmConfig c;
    c.family = SlmFamily::encoder;
    c.vocab_size = 30522;
    c.d_model = 768;
    c.n_layers = 12;
    c.n_heads = 12;
    c.d_ffn = 3072;
    c.max_positions = 512;
    c.n_segments = 2;
    c.pooler = true;
    return c;
}

SlmConfig desk_slm(SlmFamily family, std::size_t vocab_size) {
    const auto& p = nn::shape_preset("desk_slm");
    SlmConfig c;
    c.family = family;
    c.vocab_size = vocab_size;
    c.d_model = p.d_model;
    c.n_layers = 4;
    c.n_dec_layers = family == SlmFamily::encoder_decoder ? 2 : 0;
    c.n_heads = p.n_heads;
    c.d_ffn = p.d_ffn;
    c.max_positions = 64;
    c.n_segments = family == SlmFamily::encoder ? 2 : 0;
    // At width 64, 0.02 shrinks every projection's output about sixfold and
    // the decoder barely sees the encoder memory at the start.
    c.init_sigma = 1.0 / std::sqrt(static_cast<double>(c.d_model));
    return c;
}

void PiFiConfig::validate(const SlmConfig& slm) const {
    slm.validate();
    for (std::size_t i = 0; i < donor_layer_indices.size(); ++i) {
        if (donor_layer_indices[i] == 0) throw ConfigError("donor layer indices are 1-based; got 0");
        if (i > 0 && donor_layer_indices[i] <= donor_layer_indices[i - 1])
            throw ConfigError("donor layer indices must be strictly increasing");
    }
    if (!vanilla()) {
        donor_block.validate();
        if (donor_block.style == nn::BlockStyle::slm_post_ln_gelu)
            throw ConfigError("donor block must use a donor style, got " + nn::to_string(donor_block.style));
    }
    if (slm.family == SlmFamily::encoder_decoder) return;
    if (n_classes < 2) throw ConfigError("classification needs n_classes >= 2");
    if (pooling == Pooling::last_nonpad && slm.family != SlmFamily::decoder_only)
        throw ConfigError("last_nonpad pooling is only valid for decoder_only SLMs");
    if (pooling == Pooling::cls && slm.family != SlmFamily::encoder)
        throw ConfigError("cls pooling is only valid for encoder SLMs");
}

void TokenBatch::validate() const {
    if (batch == 0 || seq == 0) throw DimensionError("token batch must have positive batch and seq");
    const std::size_t n = batch * seq;
    if (ids.size() != n || valid.size() != n || (!segments.empty() && segments.size() != n))
        throw DimensionError("token batch buffers must hold batch*seq = " + std::to_string(n) + " entries");
}

std::size_t TokenBatch::last_valid(std::size_t b) const {
    for (std::size_t j = seq; j-- > 0;)
        if (valid[b * seq + j]) return j;
    throw ContractError("batch row " + std::to_string(b) + " has no valid token");
}

// ---------------------------------------------------------------------------
// Layouts and counts

namespace {

void append(ParamLayout& out, const std::string& prefix, const ParamLayout& inner) {
    for (const auto& s : inner) out.push_back({prefix + s.name, s.shape, s.role});
}

void add_embeddings(ParamLayout& out, const std::string& prefix, const SlmConfig& c, bool segments) {
    out.push_back({prefix + "embed.tok", {c.vocab_size, c.d_model}, ParamRole::weight});
    out.push_back({prefix + "embed.pos", {c.max_positions, c.d_model}, ParamRole::weight});
    if (segments && c.n_segments > 0) out.push_back({prefix + "embed.seg", {c.n_segments, c.d_model}, ParamRole::weight});
    out.push_back({prefix + "embed.norm.gain", {c.d_model}, ParamRole::gain});
    out.push_back({prefix + "embed.norm.bias", {c.d_model}, ParamRole::bias});
}

std::string layer_prefix(const char* base, std::size_t i) {
    return std::string(base) + std::to_string(i) + ".";
}

}  // namespace

ParamLayout slm_layout(const SlmConfig& cfg) {
    cfg.validate();
    ParamLayout out;
    add_embeddings(out, "", cfg, cfg.family == SlmFamily::encoder);
    const auto block = nn::block_layout(cfg.block());
    for (std::size_t i = 0; i < cfg.n_layers; ++i) append(out, layer_prefix("layers.", i), block);
    if (cfg.pooler) {
        out.push_back({"pooler.dense.weight", {cfg.d_model, cfg.d_model}, ParamRole::weight});
        out.push_back({"pooler.dense.bias", {cfg.d_model}, ParamRole::bias});
    }
    if (cfg.family == SlmFamily::encoder_decoder) {
        add_embeddings(out, "dec.", cfg, false);
        const auto dec = nn::decoder_block_layout(cfg.decoder_block());
        for (std::size_t i = 0; i < cfg.n_dec_layers; ++i) append(out, layer_prefix("dec.layers.", i), dec);
        out.push_back({"dec.lm_head.weight", {cfg.d_model, cfg.vocab_size}, ParamRole::weight});
        out.push_back({"dec.lm_head.bias", {cfg.vocab_size}, ParamRole::bias});
    }
    return out;
}

ParamLayout head_layout(std::size_t d, std::size_t n_classes) {
    return {
        {"dense.weight", {d, d}, ParamRole::weight},
        {"dense.bias", {d}, ParamRole::bias},
        {"out.weight", {d, n_classes}, ParamRole::weight},
        {"out.bias", {n_classes}, ParamRole::bias},
    };
}

ParamBreakdown count_params(const SlmConfig& slm, const PiFiConfig& pifi) {
    pifi.validate(slm);
    ParamBreakdown b;
    b.slm = layout_numel(slm_layout(slm));
    if (slm.family != SlmFamily::encoder_decoder) b.head = layout_numel(head_layout(slm.d_model, pifi.n_classes));
    if (!pifi.vanilla()) {
        const std::uint64_t dd = pifi.donor_block.d_model();
        b.l_in = nn::linear_param_count(slm.d_model, dd, false);
        b.l_out = nn::linear_param_count(dd, slm.d_model, false);
        b.donor = pifi.donor_layer_indices.size() * nn::block_param_count(pifi.donor_block);
    }
    b.trainable = b.slm + b.l_in + b.l_out + b.head + (pifi.freeze_policy == FreezePolicy::donor_trainable ? b.donor : 0);
    return b;
}

template <typename T>
ParamBreakdown count_params(const PiFiModel<T>& m) {
    ParamBreakdown b;
    b.slm = m.slm.numel();
    b.l_in = m.l_in.numel();
    b.l_out = m.l_out.numel();
    b.head = m.head.numel();
    b.donor = m.donor_embed.numel();
    b.trainable = m.slm.trainable_numel() + m.l_in.trainable_numel() + m.l_out.trainable_numel() +
                  m.head.trainable_numel() + m.donor_embed.trainable_numel();
    for (const auto& d : m.donor_layers) {
        b.donor += d.numel();
        b.trainable += d.trainable_numel();
    }
    return b;
}

// ---------------------------------------------------------------------------
// Parameter access

namespace {

template <typename T, typename Fn>
void for_each_store(PiFiModel<T>& m, Fn&& fn) {
    fn(m.slm, std::string("slm."));
    fn(m.l_in, std::string("l_in."));
    fn(m.donor_embed, std::string("donor.embed."));
    for (std::size_t i = 0; i < m.donor_layers.size(); ++i) fn(m.donor_layers[i], layer_prefix("donor.", i));
    fn(m.l_out, std::string("l_out."));
    fn(m.head, std::string("head."));
}

}  // namespace

template <typename T>
std::vector<NamedParam<T>> PiFiModel<T>::named_params() {
    std::vector<NamedParam<T>> out;
    for_each_store(*this, [&](ParamStore<T>& s, const std::string& prefix) {
        for (auto& [name, p] : s) out.push_back({prefix + name, &p});
    });
    return out;
}

template <typename T>
std::vector<NamedParam<T>> PiFiModel<T>::donor_params() {
    std::vector<NamedParam<T>> out;
    for (auto& np : named_params())
        if (np.name.rfind("donor.", 0) == 0) out.push_back(np);
    return out;
}

template <typename T>
ParamStore<T> PiFiModel<T>::flatten() const {
    ParamStore<T> flat;
    auto& self = const_cast<PiFiModel<T>&>(*this);
    for (const auto& np : self.named_params()) flat.add(np.name, np.param->value, np.param->trainable);
    return flat;
}

template <typename T>
void PiFiModel<T>::load_flat(const ParamStore<T>& flat) {
    for (auto& np : named_params()) {
        const auto& src = flat.at(np.name);
        if (src.value.shape() != np.param->value.shape())
            throw DimensionError("load_flat: " + np.name + " has shape " + shape_str(src.value.shape()) + ", expected " +
                                 shape_str(np.param->value.shape()));
        np.param->value = src.value;
        np.param->trainable = src.trainable;
    }
}

// ---------------------------------------------------------------------------
// Construction

namespace {

// Initializes `layout` keyed by global names so that same-named tensors in
// different stores (l_in.weight, l_out.weight) draw different values.
ParamStore<float> init_store(const ParamLayout& layout, const std::string& prefix, std::uint64_t seed, double sigma) {
    ParamStore<float> s;
    for (const auto& spec : layout)
        s.add(spec.name, ckpt::init_tensor<float>({prefix + spec.name, spec.shape, spec.role}, seed,
                                                  ckpt::InitScheme::normal_trunc, sigma));
    return s;
}

// Reorders an extracted layer into layout order, checking names and shapes.
ParamStore<float> conform(const ParamStore<float>& extracted, const ParamLayout& layout, std::size_t index) {
    const std::string where = "donor layer " + std::to_string(index) + ": ";
    if (extracted.size() != layout.size())
        throw ConfigError(where + "archive has " + std::to_string(extracted.size()) + " tensors, block config expects " +
                          std::to_string(layout.size()));
    ParamStore<float> out;
    for (const auto& spec : layout) {
        if (!extracted.contains(spec.name)) throw ConfigError(where + "archive lacks " + spec.name);
        const auto& t = extracted.value(spec.name);
        if (t.shape() != spec.shape)
            throw ConfigError(where + spec.name + " has shape " + shape_str(t.shape()) + ", block config expects " +
                              shape_str(spec.shape));
        out.add(spec.name, t);
    }
    return out;
}

}  // namespace

PiFiModel<float> build_pifi(const SlmConfig& slm, const PiFiConfig& pifi, const ckpt::TensorArchive* donor_archive,
                            std::uint64_t seed) {
    pifi.validate(slm);
    PiFiModel<float> m;
    m.kind = ModelKind::slm;
    m.slm_cfg = slm;
    m.cfg = pifi;
    m.slm = init_store(slm_layout(slm), "slm.", seed, slm.init_sigma);
    if (slm.family != SlmFamily::encoder_decoder) m.head = init_store(head_layout(slm.d_model, pifi.n_classes), "head.", seed, 0.02);
    if (pifi.vanilla()) return m;

    const std::size_t dd = pifi.donor_block.d_model();
    m.l_in = init_store({{"weight", {slm.d_model, dd}, ParamRole::weight}}, "l_in.", seed, slm.init_sigma);
    m.l_out = init_store({{"weight", {dd, slm.d_model}, ParamRole::weight}}, "l_out.", seed, slm.init_sigma);
    const auto layout = nn::block_layout(pifi.donor_block);
    if (pifi.donor_init == DonorInit::from_archive) {
        if (!donor_archive) throw ConfigError("donor_init from_archive requires a donor archive");
        const auto layers = ckpt::extract_donor_layers(*donor_archive, pifi.donor_layer_indices);
        for (std::size_t i = 0; i < layers.size(); ++i)
            m.donor_layers.push_back(conform(layers[i], layout, pifi.donor_layer_indices[i]));
    } else {
        for (std::size_t i = 0; i < pifi.donor_layer_indices.size(); ++i)
            m.donor_layers.push_back(init_store(layout, layer_prefix("donor.", i), pifi.donor_seed, 0.02));
    }
    const bool trainable = pifi.freeze_policy == FreezePolicy::donor_trainable;
    for (auto& d : m.donor_layers) d.set_trainable(trainable);
    return m;
}

PiFiModel<float> build_donor_only_classifier(const ckpt::TensorArchive& donor_archive, const nn::BlockConfig& block,
                                             DonorLayerPick pick, std::size_t n_classes, std::uint64_t seed) {
    const std::size_t count = ckpt::archive_layer_count(donor_archive);
    if (count == 0) throw ExtractionError("donor archive holds no layers", 0);
    if (!donor_archive.contains("embed.tok")) throw ExtractionError("donor archive lacks embed.tok", count);
    if (n_classes < 2) throw ConfigError("classification needs n_classes >= 2");
    const std::size_t index = pick == DonorLayerPick::first ? 1 : count;

    PiFiModel<float> m;
    m.kind = ModelKind::donor_only;
    m.cfg.donor_block = block;
    m.cfg.donor_layer_indices = {index};
    m.cfg.pooling = Pooling::last_nonpad;
    m.cfg.n_classes = n_classes;
    m.slm_cfg.family = SlmFamily::decoder_only;
    m.slm_cfg.vocab_size = donor_archive.at("embed.tok").dim(0);
    m.slm_cfg.d_model = block.d_model();
    m.donor_embed.add("tok", donor_archive.at("embed.tok"), false);
    m.donor_layers.push_back(
        conform(ckpt::extract_donor_layers(donor_archive, {index})[0], nn::block_layout(block), index));
    m.donor_layers[0].set_trainable(false);
    m.head = init_store(head_layout(block.d_model(), n_classes), "head.", seed, 0.02);
    return m;
}

// ---------------------------------------------------------------------------
// Forward

namespace {

template <typename T>
Var<T> embed(Graph<T>& g, const nn::ParamView<T>& p, const SlmConfig& cfg, const TokenBatch& batch,
             nn::ForwardContext& ctx) {
    if (batch.seq > cfg.max_positions)
        throw ConfigError("sequence length " + std::to_string(batch.seq) + " exceeds max_positions " +
                          std::to_string(cfg.max_positions));
    Var<T> x = embedding(p("embed.tok"), std::span<const std::int32_t>(batch.ids), batch.shape());
    std::vector<std::int32_t> pos(batch.seq);
    for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = static_cast<std::int32_t>(i);
    x = x + embedding(p("embed.pos"), std::span<const std::int32_t>(pos), Shape{batch.seq});
    if (p.has("embed.seg")) {
        std::vector<std::int32_t> seg = batch.segments;
        if (seg.empty()) seg.assign(batch.batch * batch.seq, 0);
        x = x + embedding(p("embed.seg"), std::span<const std::int32_t>(seg), batch.shape());
    }
    x = layer_norm(x, p("embed.norm.gain"), p("embed.norm.bias"), cfg.eps);
    if (ctx.training && cfg.dropout > 0.0) x = dropout(x, cfg.dropout, ctx.next_key());
    (void)g;
    return x;
}

// Final-layer encoder states [b × s × d].
template <typename T>
Var<T> encode(Graph<T>& g, const PiFiModel<T>& m, const TokenBatch& batch, nn::ForwardContext& ctx) {
    batch.validate();
    const nn::ParamView<T> p(g, m.slm, "slm.");
    Var<T> x = embed(g, p, m.slm_cfg, batch, ctx);
    const BoolMask mask = BoolMask::key_padding(batch.batch, batch.seq, batch.valid);
    const auto block = m.slm_cfg.block();
    for (std::size_t i = 0; i < m.slm_cfg.n_layers; ++i)
        x = nn::slm_block_forward(x, block, p.sub(layer_prefix("layers.", i)), &mask, ctx);
    return x;
}

template <typename T>
Var<T> pool(Var<T> x, const TokenBatch& batch, Pooling pooling) {
    const std::size_t b = batch.batch, s = batch.seq;
    switch (pooling) {
        case Pooling::cls: {
            std::vector<std::size_t> rows(b);
            for (std::size_t i = 0; i < b; ++i) rows[i] = i * s;
            return gather_rows(x, std::span<const std::size_t>(rows));
        }
        case Pooling::last_nonpad: {
            std::vector<std::size_t> rows(b);
            for (std::size_t i = 0; i < b; ++i) rows[i] = i * s + batch.last_valid(i);
            return gather_rows(x, std::span<const std::size_t>(rows));
        }
        case Pooling::mean_all: {
            const std::vector<T> w(b * s, T(1));
            return masked_mean(x, std::span<const T>(w));
        }
        case Pooling::mean_nonpad: {
            std::vector<T> w(b * s);
            for (std::size_t i = 0; i < w.size(); ++i) w[i] = batch.valid[i] ? T(1) : T(0);
            return masked_mean(x, std::span<const T>(w));
        }
    }
    throw ConfigError("unknown pooling");
}

// L_in, donor stack, L_out over a [b × s × d_slm] sequence.
template <typename T>
Var<T> donor_path(Graph<T>& g, const PiFiModel<T>& m, Var<T> x, const BoolMask* mask, ForwardTrace* trace) {
    if (trace) trace->donor_input_len = x.shape()[1];
    Var<T> z = linear(x, nn::ParamView<T>(g, m.l_in, "l_in.")("weight"));
    for (std::size_t i = 0; i < m.donor_layers.size(); ++i)
        z = nn::donor_block_forward(z, m.cfg.donor_block, nn::ParamView<T>(g, m.donor_layers[i], layer_prefix("donor.", i)),
                                    mask);
    return linear(z, nn::ParamView<T>(g, m.l_out, "l_out.")("weight"));
}

template <typename T>
Var<T> head_forward(Graph<T>& g, const PiFiModel<T>& m, Var<T> h) {
    const nn::ParamView<T> p(g, m.head, "head.");
    return linear(tanh(linear(h, p("dense.weight"), p("dense.bias"))), p("out.weight"), p("out.bias"));
}

template <typename T>
Var<T> memory_forward(Graph<T>& g, const PiFiModel<T>& m, const TokenBatch& src, const BoolMask& src_mask,
                      nn::ForwardContext& ctx, ForwardTrace* trace) {
    Var<T> mem = encode(g, m, src, ctx);
    if (!m.cfg.vanilla()) mem = donor_path(g, m, mem, &src_mask, trace);
    return mem;
}

template <typename T>
Var<T> decode(Graph<T>& g, const PiFiModel<T>& m, Var<T> memory, const BoolMask& src_mask, const TokenBatch& tgt_in,
              nn::ForwardContext& ctx) {
    tgt_in.validate();
    const nn::ParamView<T> p(g, m.slm, "slm.");
    const nn::ParamView<T> dec = p.sub("dec.");
    Var<T> y = embed(g, dec, m.slm_cfg, tgt_in, ctx);
    const auto block = m.slm_cfg.decoder_block();
    for (std::size_t i = 0; i < m.slm_cfg.n_dec_layers; ++i)
        y = nn::decoder_block_forward(y, memory, block, dec.sub(layer_prefix("layers.", i)), nullptr, &src_mask, ctx);
    return linear(y, dec("lm_head.weight"), dec("lm_head.bias"));
}

}  // namespace

template <typename T>
Var<T> forward_classify(Graph<T>& g, const PiFiModel<T>& m, const TokenBatch& batch, nn::ForwardContext& ctx,
                        ForwardTrace* trace) {
    batch.validate();
    if (m.kind == ModelKind::donor_only) {
        const nn::ParamView<T> emb(g, m.donor_embed, "donor.embed.");
        Var<T> x = embedding(emb("tok"), std::span<const std::int32_t>(batch.ids), batch.shape());
        const BoolMask mask = BoolMask::key_padding(batch.batch, batch.seq, batch.valid);
        if (trace) trace->donor_input_len = batch.seq;
        x = nn::donor_block_forward(x, m.cfg.donor_block, nn::ParamView<T>(g, m.donor_layers[0], "donor.0."), &mask);
        return head_forward(g, m, pool(x, batch, Pooling::last_nonpad));
    }
    if (m.slm_cfg.family == SlmFamily::encoder_decoder)
        throw ConfigError("forward_classify needs an encoder or decoder_only SLM");
    Var<T> h = pool(encode(g, m, batch, ctx), batch, m.cfg.pooling);
    if (!m.cfg.vanilla()) {
        const std::size_t d = m.slm_cfg.d_model;
        h = reshape(donor_path(g, m, reshape(h, {batch.batch, 1, d}), nullptr, trace), {batch.batch, d});
    }
    return head_forward(g, m, h);
}

template <typename T>
Var<T> forward_seq2seq(Graph<T>& g, const PiFiModel<T>& m, const TokenBatch& src, const TokenBatch& tgt_in,
                       nn::ForwardContext& ctx, ForwardTrace* trace) {
    if (m.kind != ModelKind::slm || m.slm_cfg.family != SlmFamily::encoder_decoder)
        throw ConfigError("forward_seq2seq needs an encoder_decoder SLM");
    src.validate();
    if (tgt_in.batch != src.batch) throw DimensionError("source and target batch sizes differ");
    const BoolMask src_mask = BoolMask::key_padding(src.batch, src.seq, src.valid);
    const Var<T> memory = memory_forward(g, m, src, src_mask, ctx, trace);
    return decode(g, m, memory, src_mask, tgt_in, ctx);
}

template <typename T>
std::vector<std::vector<std::int32_t>> greedy_decode(const PiFiModel<T>& m, const TokenBatch& src, std::size_t max_len,
                                                     std::int32_t bos, std::int32_t eos) {
    if (m.kind != ModelKind::slm || m.slm_cfg.family != SlmFamily::encoder_decoder)
        throw ConfigError("greedy_decode needs an encoder_decoder SLM");
    src.validate();
    const std::size_t b = src.batch;
    std::vector<std::vector<std::int32_t>> out(b);
    if (max_len == 0) return out;
    if (max_len + 1 > m.slm_cfg.max_positions)
        throw ConfigError("max_len " + std::to_string(max_len) + " exceeds decoder positions");
    const BoolMask src_mask = BoolMask::key_padding(src.batch, src.seq, src.valid);
    nn::ForwardContext ctx;
    Tensor<T> memory = [&] {
        Graph<T> g(false);
        return memory_forward(g, m, src, src_mask, ctx, nullptr).tensor();
    }();

    std::vector<std::int32_t> prefix(b, bos);  // row-major [b × t]
    std::vector<bool> done(b, false);
    const std::size_t vocab = m.slm_cfg.vocab_size;
    for (std::size_t t = 1; t <= max_len; ++t) {
        Graph<T> g(false);
        TokenBatch tgt{b, t, prefix, {}, std::vector<std::uint8_t>(b * t, 1)};
        const auto logits = decode(g, m, g.constant(memory), src_mask, tgt, ctx).value();
        std::vector<std::int32_t> next(b * (t + 1));
        for (std::size_t r = 0; r < b; ++r) {
            const T* row = logits.data() + (r * t + t - 1) * vocab;
            const auto best = static_cast<std::int32_t>(std::max_element(row, row + vocab) - row);
            std::copy(prefix.begin() + static_cast<std::ptrdiff_t>(r * t),
                      prefix.begin() + static_cast<std::ptrdiff_t>((r + 1) * t), next.begin() + static_cast<std::ptrdiff_t>(r * (t + 1)));
            next[r * (t + 1) + t] = best;
            if (done[r]) continue;
            if (best == eos)
                done[r] = true;
            else
                out[r].push_back(best);
        }
        prefix = std::move(next);
        if (std::all_of(done.begin(), done.end(), [](bool d) { return d; })) break;
    }
    return out;
}

// ---------------------------------------------------------------------------
// FLOPs

namespace {

std::uint64_t attention_macs(const nn::AttentionConfig& a, std::uint64_t s_q, std::uint64_t s_kv) {
    const std::uint64_t d = a.d_model, q = a.q_width(), kv = a.kv_width();
    const std::uint64_t proj = s_q * d * q + 2 * s_kv * d * kv + s_q * q * d;
    const std::uint64_t core = 2 * a.n_heads * s_q * s_kv * a.resolved_head_dim();
    return proj + core;
}

std::uint64_t ffn_macs(const nn::BlockConfig& cfg, std::uint64_t s) {
    const std::uint64_t mats = cfg.style == nn::BlockStyle::donor_pre_rmsnorm_gated ? 3 : 2;
    return mats * s * cfg.d_model() * cfg.d_ffn;
}

}  // namespace

std::uint64_t block_macs(const nn::BlockConfig& cfg, std::size_t seq) {
    return attention_macs(cfg.attention, seq, seq) + ffn_macs(cfg, seq);
}

FlopsEstimate estimate_flops(const SlmConfig& slm, const PiFiConfig& pifi, std::size_t seq_len, std::size_t batch,
                             std::size_t tgt_len) {
    pifi.validate(slm);
    if (seq_len == 0 || batch == 0) throw ConfigError("estimate_flops: seq_len and batch must be positive");
    if (tgt_len == 0) tgt_len = seq_len;
    const std::uint64_t d = slm.d_model, s = seq_len, bt = batch;
    FlopsEstimate f;
    f.slm = slm.n_layers * block_macs(slm.block(), s);
    if (slm.family == SlmFamily::encoder_decoder) {
        const auto dec = slm.decoder_block();
        const std::uint64_t t = tgt_len;
        f.slm += slm.n_dec_layers * (block_macs(dec, t) + attention_macs(dec.attention, t, s));
        f.slm += t * d * slm.vocab_size;
    } else {
        f.head = d * d + d * pifi.n_classes;
    }
    if (!pifi.vanilla()) {
        const std::uint64_t len = slm.family == SlmFamily::encoder_decoder ? s : 1;
        const std::uint64_t dd = pifi.donor_block.d_model();
        f.donor_input_len = len;
        f.l_in = len * d * dd;
        f.l_out = len * dd * d;
        f.donor = pifi.donor_layer_indices.size() * block_macs(pifi.donor_block, len);
    }
    f.slm *= bt;
    f.l_in *= bt;
    f.donor *= bt;
    f.l_out *= bt;
    f.head *= bt;
    return f;
}

// ---------------------------------------------------------------------------

template struct PiFiModel<float>;
template struct PiFiModel<double>;
template ParamBreakdown count_params(const PiFiModel<float>&);
template ParamBreakdown count_params(const PiFiModel<double>&);

#define PIFI_INSTANTIATE_MODEL(T)                                                                                     \
    template Var<T> forward_classify(Graph<T>&, const PiFiModel<T>&, const TokenBatch&, nn::ForwardContext&,          \
                                     ForwardTrace*);                                                                  \
    template Var<T> forward_seq2seq(Graph<T>&, const PiFiModel<T>&, const TokenBatch&, const TokenBatch&,             \
                                    nn::ForwardContext&, ForwardTrace*);                                              \
    template std::vector<std::vector<std::int32_t>> greedy_decode(const PiFiModel<T>&, const TokenBatch&, std::size_t, \
                                                                  std::int32_t, std::int32_t);

PIFI_INSTANTIATE_MODEL(float)
PIFI_INSTANTIATE_MODEL(double)

}  // namespace pifi::model
