#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pifi/data/dataset.hpp"
#include "pifi/data/vocab.hpp"

namespace pifi::data {

// Latent sentiment lexicon shared by all domains. Each domain realizes every
// concept with its own surface token, so domains share the label process but
// not their vocabularies.
inline constexpr std::size_t kPositiveConcepts = 8;
inline constexpr std::size_t kNegativeConcepts = 8;
inline constexpr std::size_t kNeutralConcepts = 24;
inline constexpr std::size_t kConcepts = kPositiveConcepts + kNegativeConcepts + kNeutralConcepts;

enum class Polarity : std::uint8_t { positive, negative, neutral };

struct DomainSpec {
    char name = 'A';  // 'A', 'B' or 'C'
    // Surface token of concept c; concepts are ordered positive, negative, neutral.
    std::string surface(std::size_t concept_id) const;
};

Polarity concept_polarity(std::size_t concept_id);
DomainSpec domain(char name);
inline constexpr std::array<char, 3> kDomains{'A', 'B', 'C'};

// Seq2seq symbol alphabet.
inline constexpr std::size_t kSymbols = 24;
std::string symbol(std::size_t i);

// Every token any generator emits, in a fixed order after the specials.
const Vocab& synthetic_vocab();

// Sentiment: 8–32 tokens; an odd number of polar tokens is planted, most of
// them with the label's polarity, and the rest are neutral. Label 1 is
// positive. Labels are exactly balanced (the extra one of odd n is positive).
LabeledDataset gen_sentiment(const DomainSpec& domain, std::size_t n, std::uint64_t seed);

// Acceptability: positives are sentences of a small context-free grammar;
// negatives are grammar sentences with one adjacent transposition that no
// longer parse. Balanced as above; label 1 is acceptable.
LabeledDataset gen_acceptability(std::size_t n, std::uint64_t seed);
// CYK membership test for the acceptability grammar.
bool grammatical(const std::vector<std::string>& words);

enum class Seq2SeqKind : std::uint8_t { copy, reverse, cipher };
std::string to_string(Seq2SeqKind kind);
Seq2SeqKind seq2seq_kind_from_string(const std::string& name);

// Fixed bijection over the symbol alphabet used by the cipher task.
const std::array<std::size_t, kSymbols>& cipher_table();

// Sources of 4–16 symbols; the target is the source copied, reversed or
// mapped through cipher_table().
Seq2SeqDataset gen_seq2seq(Seq2SeqKind kind, std::size_t n, std::uint64_t seed);

// First-order Markov chain over all domains' surface tokens. A concept's
// successors are the same in every domain and favour its own polarity; the
// domain mostly persists between tokens.
struct BigramTable {
    std::vector<std::int32_t> states;  // vocabulary ids
    // rows[i] lists (state index, probability); probabilities sum to 1.
    std::vector<std::vector<std::pair<std::size_t, double>>> rows;
};

const BigramTable& pretrain_bigram_table();

// Token stream of exactly `n_tokens` ids, starting from a uniform state.
std::vector<std::int32_t> gen_pretrain_corpus(std::size_t n_tokens, std::uint64_t seed);

}  // namespace pifi::data
