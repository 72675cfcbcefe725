#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "pifi/data/dataset.hpp"
#include "pifi/model/pifi_model.hpp"
#include "pifi/train/optim.hpp"

namespace pifi::train {

// One optimizer step; `metrics` is filled on steps where the dev set was evaluated.
struct HistoryRecord {
    std::size_t step = 0;  // 1-based
    std::size_t epoch = 0;  // 1-based
    double loss = 0.0;
    std::map<std::string, double> metrics;

    // {"step":…,"epoch":…,"loss":…,"metrics":{…}} on one line.
    std::string to_json() const;
};

struct TrainResult {
    std::vector<HistoryRecord> history;
    std::size_t steps = 0;
    // Hash of every frozen tensor before and after training; equal by contract.
    std::uint64_t frozen_hash_before = 0;
    std::uint64_t frozen_hash_after = 0;
};

// Mean loss of the rows `rows` of the training set, built on `g`.
template <typename T>
using BatchLoss = std::function<Var<T>(Graph<T>& g, std::span<const std::size_t> rows, nn::ForwardContext& ctx)>;
using Evaluator = std::function<std::map<std::string, double>()>;

// Adam over shuffled mini-batches of n_examples rows. The epoch order is a
// function of (cfg.seed, epoch) and dropout keys of (cfg.seed, step). Each
// history record is also written to `sink` as a JSON line. `lengths` (one per
// row, optional) enables cfg.bucket_by_length. Throws
// TrainingError on a non-finite loss or gradient norm, and ContractError if a
// frozen tensor changed.
template <typename T>
TrainResult train_loop(const std::vector<NamedParam<T>>& params, std::size_t n_examples, const BatchLoss<T>& loss,
                       const TrainConfig& cfg, const Evaluator& evaluate = {}, std::ostream* sink = nullptr,
                       std::span<const std::size_t> lengths = {});

struct EvalReport {
    std::string task;  // "classification" or "generation"
    std::map<std::string, double> metrics;
    std::size_t n_examples = 0;
    std::uint64_t seed = 0;
};

template <typename T>
std::vector<std::int32_t> predict(const model::PiFiModel<T>& model, const data::LabeledDataset& data,
                                  std::size_t batch_size, std::size_t max_len);

// accuracy, macro_f1, and binary_f1 when there are two classes.
template <typename T>
EvalReport evaluate_classification(const model::PiFiModel<T>& model, const data::LabeledDataset& data,
                                   std::size_t batch_size = 64, std::size_t max_len = 64);

// Greedy decoding scored by exact_match, token_f1, bleu and rouge_l.
template <typename T>
EvalReport evaluate_generation(const model::PiFiModel<T>& model, const data::Seq2SeqDataset& data,
                               const data::Vocab& vocab, std::size_t batch_size = 64, std::size_t max_len = 64);

// Cross-entropy fine-tuning of a classifier; dev metrics come from
// evaluate_classification.
template <typename T>
TrainResult train_classifier(model::PiFiModel<T>& model, const data::LabeledDataset& train,
                             const data::LabeledDataset* dev, const TrainConfig& cfg, std::ostream* sink = nullptr);

// Teacher-forced token cross-entropy for an encoder_decoder model.
template <typename T>
TrainResult train_seq2seq(model::PiFiModel<T>& model, const data::Seq2SeqDataset& train,
                          const data::Seq2SeqDataset* dev, const data::Vocab& vocab, const TrainConfig& cfg,
                          std::ostream* sink = nullptr);

}  // namespace pifi::train
