#include "pifi/experiment/pretrain.hpp"

#include <cmath>
#include <map>
#include <sstream>

#include "pifi/autograd/ops.hpp"
#include "pifi/autograd/rng.hpp"
#include "pifi/checkpoint/init.hpp"
#include "pifi/data/synthetic.hpp"
#include "pifi/errors.hpp"

namespace pifi::experiment {

namespace {

std::string exact(double v) {
    std::ostringstream out;
    out.precision(17);
    out << v;
    return out.str();
}

// Windows of seq_len + 1 tokens starting every seq_len tokens, so each token
// after the first is a target exactly once.
std::size_t window_count(std::size_t n_tokens, std::size_t seq_len) { return (n_tokens - 1) / seq_len; }

// Inputs are window[0..s), targets window[1..s].
std::pair<model::TokenBatch, std::vector<std::int32_t>> window_batch(const std::vector<std::int32_t>& stream,
                                                                      std::span<const std::size_t> windows,
                                                                      std::size_t seq_len) {
    model::TokenBatch b{windows.size(), seq_len, {}, {}, std::vector<std::uint8_t>(windows.size() * seq_len, 1)};
    std::vector<std::int32_t> targets;
    b.ids.reserve(windows.size() * seq_len);
    targets.reserve(windows.size() * seq_len);
    for (auto w : windows) {
        const std::size_t start = w * seq_len;
        b.ids.insert(b.ids.end(), stream.begin() + static_cast<std::ptrdiff_t>(start),
                     stream.begin() + static_cast<std::ptrdiff_t>(start + seq_len));
        targets.insert(targets.end(), stream.begin() + static_cast<std::ptrdiff_t>(start + 1),
                       stream.begin() + static_cast<std::ptrdiff_t>(start + seq_len + 1));
    }
    return {std::move(b), std::move(targets)};
}

Var<float> window_loss(Graph<float>& g, const ParamStore<float>& params, const model::DonorLmConfig& cfg,
                       const std::vector<std::int32_t>& stream, std::span<const std::size_t> windows,
                       std::size_t seq_len) {
    const auto [batch, targets] = window_batch(stream, windows, seq_len);
    const auto logits = model::donor_lm_forward(g, params, cfg, batch);
    const std::size_t v = logits.shape().back();
    return cross_entropy(reshape(logits, Shape{logits.numel() / v, v}), std::span<const std::int32_t>(targets));
}

}  // namespace

PretrainConfig::PretrainConfig() {
    train.lr = 3e-3;
    train.epochs = 1;
    train.batch_size = 32;
    train.max_steps = 150;
    train.grad_clip = 1.0;
    train.bucket_by_length = false;
}

void PretrainConfig::validate() const {
    train.validate();
    if (seq_len < 2) throw ConfigError("pretrain: seq_len must be at least 2");
    if (n_tokens < seq_len + 1 || eval_tokens < seq_len + 1)
        throw ConfigError("pretrain: n_tokens and eval_tokens must exceed seq_len");
    if (!(init_sigma > 0.0)) throw ConfigError("pretrain: init_sigma must be positive");
}

model::DonorLmConfig desk_donor_lm(std::size_t n_layers) {
    model::DonorLmConfig c;
    c.block = nn::shape_preset("desk_donor").block();
    c.block.attention.causal = true;
    c.block.attention.rope = true;
    c.n_layers = n_layers;
    c.vocab_size = data::synthetic_vocab().size();
    return c;
}

double donor_lm_cross_entropy(const ParamStore<float>& params, const model::DonorLmConfig& cfg,
                              const std::vector<std::int32_t>& stream, std::size_t seq_len) {
    const std::size_t n = window_count(stream.size(), seq_len);
    if (n == 0) throw ContractError("donor_lm_cross_entropy: stream shorter than one window");
    double total = 0.0;
    const std::size_t chunk = 64;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < n; start += chunk) {
        idx.clear();
        for (std::size_t w = start; w < std::min(n, start + chunk); ++w) idx.push_back(w);
        Graph<float> g(false);
        const auto l = window_loss(g, params, cfg, stream, idx, seq_len);
        total += static_cast<double>(l.value()[0]) * static_cast<double>(idx.size());
    }
    return total / static_cast<double>(n);
}

double unigram_entropy(const std::vector<std::int32_t>& stream) {
    if (stream.empty()) throw ContractError("unigram_entropy: empty stream");
    std::map<std::int32_t, std::size_t> counts;
    for (auto t : stream) ++counts[t];
    double h = 0.0;
    const double n = static_cast<double>(stream.size());
    for (const auto& [t, c] : counts) {
        const double p = static_cast<double>(c) / n;
        h -= p * std::log(p);
    }
    return h;
}

PretrainResult pretrain_donor(const model::DonorLmConfig& donor, const PretrainConfig& cfg, std::ostream* history_sink) {
    donor.validate();
    cfg.validate();
    if (donor.vocab_size != data::synthetic_vocab().size())
        throw ConfigError("pretrain: donor vocab_size " + std::to_string(donor.vocab_size) +
                          " differs from the synthetic vocabulary (" + std::to_string(data::synthetic_vocab().size()) + ")");
    const std::uint64_t seed = cfg.train.seed;
    const auto stream = data::gen_pretrain_corpus(cfg.n_tokens, splitmix64(seed) ^ 0x7261696eULL);
    const auto held_out = data::gen_pretrain_corpus(cfg.eval_tokens, splitmix64(seed) ^ 0x6576616cULL);

    auto params = ckpt::init_params<float>(model::donor_lm_layout(donor), seed, ckpt::InitScheme::normal_trunc,
                                           cfg.init_sigma);
    PretrainResult r;
    r.unigram_entropy = unigram_entropy(held_out);
    r.initial_ce = donor_lm_cross_entropy(params, donor, held_out, cfg.seq_len);

    std::vector<NamedParam<float>> named;
    for (auto& [name, p] : params) named.push_back({name, &p});
    train::BatchLoss<float> loss = [&](Graph<float>& g, std::span<const std::size_t> rows, nn::ForwardContext&) {
        return window_loss(g, params, donor, stream, rows, cfg.seq_len);
    };
    r.history = train::train_loop(named, window_count(stream.size(), cfg.seq_len), loss, cfg.train, {}, history_sink);
    r.final_ce = donor_lm_cross_entropy(params, donor, held_out, cfg.seq_len);

    for (const auto& [name, p] : params) r.archive.add(name, p.value);
    r.archive.metadata = donor.to_metadata();
    r.archive.metadata["corpus.generator"] = "markov_bigram";
    r.archive.metadata["corpus.n_tokens"] = std::to_string(cfg.n_tokens);
    r.archive.metadata["corpus.eval_tokens"] = std::to_string(cfg.eval_tokens);
    r.archive.metadata["pretrain.seed"] = std::to_string(seed);
    r.archive.metadata["pretrain.seq_len"] = std::to_string(cfg.seq_len);
    r.archive.metadata["pretrain.steps"] = std::to_string(r.history.steps);
    r.archive.metadata["pretrain.lr"] = exact(cfg.train.lr);
    r.archive.metadata["pretrain.initial_ce"] = exact(r.initial_ce);
    r.archive.metadata["pretrain.final_ce"] = exact(r.final_ce);
    r.archive.metadata["pretrain.unigram_entropy"] = exact(r.unigram_entropy);
    return r;
}

}  // namespace pifi::experiment
