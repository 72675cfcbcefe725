#include "pifi/train/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "pifi/autograd/ops.hpp"
#include "pifi/autograd/rng.hpp"
#include "pifi/errors.hpp"
#include "pifi/train/metrics.hpp"

namespace pifi::train {

namespace {

template <typename T>
std::uint64_t frozen_hash(const std::vector<NamedParam<T>>& params) {
    std::vector<NamedParam<T>> frozen;
    for (const auto& np : params)
        if (!np.param->trainable) frozen.push_back(np);
    return params_hash(frozen);
}

template <typename T>
std::size_t usable_len(const model::PiFiModel<T>& m, std::size_t max_len) {
    return std::min(max_len, m.slm_cfg.max_positions);
}

template <typename E>
std::vector<const E*> pick_rows(const std::vector<E>& all, std::span<const std::size_t> rows) {
    std::vector<const E*> out;
    out.reserve(rows.size());
    for (auto r : rows) out.push_back(&all[r]);
    return out;
}

}  // namespace

std::string HistoryRecord::to_json() const {
    nlohmann::ordered_json j;
    j["step"] = step;
    j["epoch"] = epoch;
    j["loss"] = loss;
    j["metrics"] = nlohmann::ordered_json::object();
    for (const auto& [k, v] : metrics) j["metrics"][k] = v;
    return j.dump();
}

template <typename T>
TrainResult train_loop(const std::vector<NamedParam<T>>& params, std::size_t n_examples, const BatchLoss<T>& loss,
                       const TrainConfig& cfg, const Evaluator& evaluate, std::ostream* sink,
                       std::span<const std::size_t> lengths) {
    cfg.validate();
    if (n_examples == 0) throw ContractError("train_loop: empty training set");
    if (!lengths.empty() && lengths.size() != n_examples)
        throw ContractError("train_loop: lengths must have one entry per example");
    const bool bucket = cfg.bucket_by_length && !lengths.empty();
    TrainResult result;
    result.frozen_hash_before = frozen_hash(params);
    AdamState<T> state;
    std::vector<std::size_t> order(n_examples);
    bool done = false;
    for (std::size_t epoch = 1; epoch <= cfg.epochs && !done; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng(splitmix64(cfg.seed) ^ splitmix64(0x5eed0000ULL + epoch));
        rng.shuffle(order.begin(), order.end());
        std::vector<std::pair<std::size_t, std::size_t>> batches;
        if (bucket) {
            const std::size_t window = 16 * cfg.batch_size;
            for (std::size_t w = 0; w < n_examples; w += window) {
                const auto first = order.begin() + static_cast<std::ptrdiff_t>(w);
                const auto last = order.begin() + static_cast<std::ptrdiff_t>(std::min(n_examples, w + window));
                std::stable_sort(first, last, [&](std::size_t a, std::size_t b) { return lengths[a] < lengths[b]; });
            }
        }
        for (std::size_t start = 0; start < n_examples; start += cfg.batch_size)
            batches.emplace_back(start, std::min(n_examples, start + cfg.batch_size));
        if (bucket) rng.shuffle(batches.begin(), batches.end());
        for (std::size_t bi = 0; bi < batches.size(); ++bi) {
            const auto [start, end] = batches[bi];
            const std::size_t step = ++result.steps;
            Graph<T> g(true);
            nn::ForwardContext ctx{.training = true, .seed = splitmix64(cfg.seed ^ splitmix64(step)), .counter = 0};
            const Var<T> l = loss(g, std::span<const std::size_t>(order).subspan(start, end - start), ctx);
            const double lv = static_cast<double>(l.value()[0]);
            auto grads = g.named(g.backward(l));
            const double norm = cfg.grad_clip ? clip_grad_norm(grads, *cfg.grad_clip) : grad_norm(grads);
            if (!std::isfinite(lv) || !std::isfinite(norm)) {
                std::ostringstream msg;
                msg.precision(17);
                msg << "non-finite training signal at step " << step << " (epoch " << epoch << "): loss " << lv
                    << ", grad norm " << norm << ", lr " << cfg.lr;
                throw TrainingError(msg.str());
            }
            adam_step(params, grads, state, cfg);
            HistoryRecord rec{step, epoch, lv, {}};
            done = cfg.max_steps != 0 && step >= cfg.max_steps;
            const bool epoch_end = bi + 1 == batches.size() || done;
            if (evaluate && (epoch_end || (cfg.eval_every != 0 && step % cfg.eval_every == 0))) rec.metrics = evaluate();
            if (sink) *sink << rec.to_json() << '\n';
            result.history.push_back(std::move(rec));
            if (done) break;
        }
    }
    result.frozen_hash_after = frozen_hash(params);
    if (result.frozen_hash_after != result.frozen_hash_before)
        throw ContractError("train_loop: a frozen tensor changed during training");
    return result;
}

template <typename T>
std::vector<std::int32_t> predict(const model::PiFiModel<T>& model, const data::LabeledDataset& data,
                                  std::size_t batch_size, std::size_t max_len) {
    if (batch_size == 0) throw ConfigError("predict: batch_size must be positive");
    const std::size_t n = data.examples.size();
    std::vector<std::int32_t> out(n);
    // Rows of similar length share a batch; predictions go back to input order.
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return data.examples[a].tokens.size() + data.examples[a].pair.size() <
               data.examples[b].tokens.size() + data.examples[b].pair.size();
    });
    for (std::size_t start = 0; start < n; start += batch_size) {
        const std::size_t end = std::min(n, start + batch_size);
        const auto rows = pick_rows(data.examples, std::span<const std::size_t>(idx).subspan(start, end - start));
        const auto batch = data::encode_batch(rows, usable_len(model, max_len), model.slm_cfg.family);
        Graph<T> g(false);
        nn::ForwardContext ctx;
        const auto logits = model::forward_classify(g, model, batch, ctx);
        const std::size_t c = logits.shape().back();
        const auto v = logits.value();
        for (std::size_t r = 0; r < rows.size(); ++r) {
            const auto row = v.subspan(r * c, c);
            out[idx[start + r]] = static_cast<std::int32_t>(std::max_element(row.begin(), row.end()) - row.begin());
        }
    }
    return out;
}

template <typename T>
EvalReport evaluate_classification(const model::PiFiModel<T>& model, const data::LabeledDataset& data,
                                   std::size_t batch_size, std::size_t max_len) {
    if (data.examples.empty()) throw ContractError("evaluate_classification: empty dataset");
    const auto preds = predict(model, data, batch_size, max_len);
    std::vector<std::int32_t> golds;
    for (const auto& e : data.examples) golds.push_back(e.label);
    EvalReport r;
    r.task = "classification";
    r.n_examples = golds.size();
    r.metrics["accuracy"] = accuracy(preds, golds);
    r.metrics["macro_f1"] = macro_f1(preds, golds, model.cfg.n_classes);
    if (model.cfg.n_classes == 2) r.metrics["binary_f1"] = binary_f1(preds, golds, 1);
    return r;
}

template <typename T>
EvalReport evaluate_generation(const model::PiFiModel<T>& model, const data::Seq2SeqDataset& data,
                               const data::Vocab& vocab, std::size_t batch_size, std::size_t max_len) {
    if (data.examples.empty()) throw ContractError("evaluate_generation: empty dataset");
    if (batch_size == 0) throw ConfigError("evaluate_generation: batch_size must be positive");
    const std::size_t len = usable_len(model, max_len);
    const std::size_t n = data.examples.size();
    std::vector<std::string> cands(n), refs(n);
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return data.examples[a].source.size() < data.examples[b].source.size();
    });
    for (std::size_t start = 0; start < n; start += batch_size) {
        const std::size_t end = std::min(n, start + batch_size);
        const auto rows = pick_rows(data.examples, std::span<const std::size_t>(idx).subspan(start, end - start));
        const auto batch = data::encode_seq2seq_batch(rows, len);
        const auto decoded = model::greedy_decode(model, batch.src, len - 1, data::kBos, data::kEos);
        for (std::size_t r = 0; r < rows.size(); ++r) {
            cands[idx[start + r]] = vocab.decode(decoded[r]);
            refs[idx[start + r]] = vocab.decode(rows[r]->target);
        }
    }
    EvalReport r;
    r.task = "generation";
    r.n_examples = n;
    r.metrics["exact_match"] = exact_match(cands, refs);
    r.metrics["token_f1"] = token_f1(cands, refs);
    r.metrics["bleu"] = bleu(cands, refs);
    r.metrics["rouge_l"] = rouge_l(cands, refs);
    return r;
}

template <typename T>
TrainResult train_classifier(model::PiFiModel<T>& model, const data::LabeledDataset& train,
                             const data::LabeledDataset* dev, const TrainConfig& cfg, std::ostream* sink) {
    train.validate(model.slm_cfg.vocab_size);
    if (train.n_classes() != model.cfg.n_classes)
        throw ConfigError("dataset has " + std::to_string(train.n_classes()) + " classes, model head has " +
                          std::to_string(model.cfg.n_classes));
    const std::size_t len = usable_len(model, cfg.max_len);
    BatchLoss<T> loss = [&](Graph<T>& g, std::span<const std::size_t> rows, nn::ForwardContext& ctx) {
        const auto ptrs = pick_rows(train.examples, rows);
        std::vector<std::int32_t> y;
        for (const auto* e : ptrs) y.push_back(e->label);
        const auto batch = data::encode_batch(ptrs, len, model.slm_cfg.family);
        return cross_entropy(model::forward_classify(g, model, batch, ctx), std::span<const std::int32_t>(y));
    };
    Evaluator eval;
    if (dev) eval = [&] { return evaluate_classification(model, *dev, 64, cfg.max_len).metrics; };
    std::vector<std::size_t> lengths;
    for (const auto& e : train.examples) lengths.push_back(e.tokens.size() + e.pair.size());
    return train_loop(model.named_params(), train.examples.size(), loss, cfg, eval, sink, lengths);
}

template <typename T>
TrainResult train_seq2seq(model::PiFiModel<T>& model, const data::Seq2SeqDataset& train,
                          const data::Seq2SeqDataset* dev, const data::Vocab& vocab, const TrainConfig& cfg,
                          std::ostream* sink) {
    if (model.kind != model::ModelKind::slm || model.slm_cfg.family != model::SlmFamily::encoder_decoder)
        throw ConfigError("train_seq2seq needs an encoder_decoder SLM");
    const std::size_t len = usable_len(model, cfg.max_len);
    BatchLoss<T> loss = [&](Graph<T>& g, std::span<const std::size_t> rows, nn::ForwardContext& ctx) {
        const auto batch = data::encode_seq2seq_batch(pick_rows(train.examples, rows), len);
        const auto logits = model::forward_seq2seq(g, model, batch.src, batch.tgt_in, ctx);
        const std::size_t v = logits.shape().back();
        const auto flat = reshape(logits, Shape{logits.numel() / v, v});
        return cross_entropy(flat, std::span<const std::int32_t>(batch.tgt_out), std::optional<std::int32_t>(data::kPad));
    };
    Evaluator eval;
    if (dev) eval = [&] { return evaluate_generation(model, *dev, vocab, 64, cfg.max_len).metrics; };
    std::vector<std::size_t> lengths;
    for (const auto& e : train.examples) lengths.push_back(std::max(e.source.size(), e.target.size()));
    return train_loop(model.named_params(), train.examples.size(), loss, cfg, eval, sink, lengths);
}

#define PIFI_INSTANTIATE_TRAINER(T)                                                                                      \
    template TrainResult train_loop(const std::vector<NamedParam<T>>&, std::size_t, const BatchLoss<T>&,                 \
                                    const TrainConfig&, const Evaluator&, std::ostream*,                                 \
                                    std::span<const std::size_t>);                                \
    template std::vector<std::int32_t> predict(const model::PiFiModel<T>&, const data::LabeledDataset&, std::size_t,      \
                                               std::size_t);                                                              \
    template EvalReport evaluate_classification(const model::PiFiModel<T>&, const data::LabeledDataset&, std::size_t,    \
                                                std::size_t);                                                             \
    template EvalReport evaluate_generation(const model::PiFiModel<T>&, const data::Seq2SeqDataset&, const data::Vocab&, \
                                            std::size_t, std::size_t);                                                    \
    template TrainResult train_classifier(model::PiFiModel<T>&, const data::LabeledDataset&, const data::LabeledDataset*, \
                                          const TrainConfig&, std::ostream*);                                             \
    template TrainResult train_seq2seq(model::PiFiModel<T>&, const data::Seq2SeqDataset&, const data::Seq2SeqDataset*,    \
                                       const data::Vocab&, const TrainConfig&, std::ostream*);

PIFI_INSTANTIATE_TRAINER(float)
PIFI_INSTANTIATE_TRAINER(double)

}  // namespace pifi::train
