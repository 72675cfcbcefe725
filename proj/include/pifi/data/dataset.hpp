#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "pifi/data/vocab.hpp"
#include "pifi/model/pifi_model.hpp"

namespace pifi::data {

struct LabeledExample {
    std::vector<std::int32_t> tokens;
    std::vector<std::int32_t> pair;  // second text of paired tasks; empty otherwise
    std::int32_t label = 0;
};

struct LabeledDataset {
    std::vector<LabeledExample> examples;
    std::vector<std::string> label_names;  // index = class id

    std::size_t n_classes() const { return label_names.size(); }
    bool paired() const;
    // Throws ContractError on a label outside [0, n_classes) or an id outside the vocabulary.
    void validate(std::size_t vocab_size) const;
};

struct Seq2SeqExample {
    std::vector<std::int32_t> source;
    std::vector<std::int32_t> target;
};

struct Seq2SeqDataset {
    std::vector<Seq2SeqExample> examples;
};

// Tab-separated files with a header row. Classification columns are
// "text[\ttext2]\tlabel", labels written by name; seq2seq columns are
// "source\ttarget". Text fields hold space-joined tokens.
void save_tsv(const LabeledDataset& data, const Vocab& vocab, const std::filesystem::path& path);
void save_tsv(const Seq2SeqDataset& data, const Vocab& vocab, const std::filesystem::path& path);
// Throws IngestionError (with the 1-based line) on a missing header, a wrong
// field count or a label outside `label_names`.
LabeledDataset load_labeled_tsv(const std::filesystem::path& path, const Vocab& vocab,
                                const std::vector<std::string>& label_names);
Seq2SeqDataset load_seq2seq_tsv(const std::filesystem::path& path, const Vocab& vocab);

// Uniform draw without replacement of round(n · fraction) examples, stratified
// so each class keeps its share to within one example. Original order is kept.
LabeledDataset subsample(const LabeledDataset& data, double fraction, std::uint64_t seed);
Seq2SeqDataset subsample(const Seq2SeqDataset& data, double fraction, std::uint64_t seed);

// Frames, truncates and right-pads classification inputs.
//   encoder:         [CLS] a [SEP]  or  [CLS] a [SEP] b [SEP] with segment ids 0 | 1
//   decoder_only:    [BOS] a        or  [BOS] a [SEP] b
//   encoder_decoder: a [EOS]        or  a [SEP] b [EOS]
// Content is truncated (longer text first for pairs) so rows fit `max_len`;
// the batch is padded to its longest row.
model::TokenBatch encode_batch(std::span<const LabeledExample* const> rows, std::size_t max_len,
                               model::SlmFamily family);

struct Seq2SeqBatch {
    model::TokenBatch src;      // source [EOS]
    model::TokenBatch tgt_in;   // [BOS] target
    std::vector<std::int32_t> tgt_out;  // target [EOS], kPad where tgt_in is padding
};

Seq2SeqBatch encode_seq2seq_batch(std::span<const Seq2SeqExample* const> rows, std::size_t max_len);

}  // namespace pifi::data
