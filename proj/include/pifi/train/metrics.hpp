#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace pifi::train {

// Classification metrics. Inputs must be non-empty and equally long.
double accuracy(std::span<const std::int32_t> preds, std::span<const std::int32_t> golds);

// Unweighted mean of per-class F1 = 2PR/(P+R) over the classes that occur in
// golds or preds. A class whose precision or recall is undefined scores 0;
// a class absent from both is left out of the mean.
double macro_f1(std::span<const std::int32_t> preds, std::span<const std::int32_t> golds, std::size_t n_classes);

// F1 of the `positive` class alone; 0 when it is never predicted or never gold.
double binary_f1(std::span<const std::int32_t> preds, std::span<const std::int32_t> golds, std::int32_t positive = 1);

// Generation metrics over whitespace-tokenized strings.
std::string normalize_whitespace(std::string_view text);

// Fraction of candidates equal to their reference after whitespace normalization.
double exact_match(const std::vector<std::string>& candidates, const std::vector<std::string>& references);

// Mean per-example F1 of the token multisets. Two empty strings score 1.
double token_f1(const std::vector<std::string>& candidates, const std::vector<std::string>& references);

// Corpus BLEU: geometric mean of clipped n-gram precisions for n = 1..max_n,
// times the brevity penalty exp(1 − r/c) when c < r. An order with no
// clipped match uses precision epsilon / (candidate n-grams); an order with no
// candidate n-grams at all (every candidate shorter than n) is left out of
// the mean. An empty candidate corpus scores 0.
double bleu(const std::vector<std::string>& candidates, const std::vector<std::string>& references,
            std::size_t max_n = 4, double epsilon = 0.1);

// Mean per-example LCS F-measure (β = 1). Two empty strings score 1.
double rouge_l(const std::vector<std::string>& candidates, const std::vector<std::string>& references);

// Two-sided permutation test on the difference of means. When the number of
// distinct splits C(|a|+|b|, |a|) is at most n_perm, every split is
// enumerated and p = (# splits with |Δ| ≥ |Δ_obs|) / C. Otherwise n_perm
// random splits give p = (hits + 1) / (n_perm + 1). Symmetric in a and b.
double permutation_test(std::span<const double> a, std::span<const double> b, std::size_t n_perm, std::uint64_t seed);

}  // namespace pifi::train
