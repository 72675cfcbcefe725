#include "pifi/train/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "pifi/autograd/rng.hpp"
#include "pifi/data/vocab.hpp"
#include "pifi/errors.hpp"

namespace pifi::train {

namespace {

template <typename A, typename B>
void check_pair(const A& a, const B& b, const char* what) {
    if (a.size() != b.size())
        throw ContractError(std::string(what) + ": " + std::to_string(a.size()) + " predictions vs " +
                            std::to_string(b.size()) + " references");
    if (a.empty()) throw ContractError(std::string(what) + ": no examples");
}

double f1(double tp, double fp, double fn) {
    if (tp + fp == 0.0 || tp + fn == 0.0) return 0.0;
    const double p = tp / (tp + fp);
    const double r = tp / (tp + fn);
    return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

using Tokens = std::vector<std::string>;

std::map<std::vector<std::string>, std::size_t> ngrams(const Tokens& t, std::size_t n) {
    std::map<std::vector<std::string>, std::size_t> out;
    for (std::size_t i = 0; i + n <= t.size(); ++i) ++out[Tokens(t.begin() + static_cast<std::ptrdiff_t>(i),
                                                                  t.begin() + static_cast<std::ptrdiff_t>(i + n))];
    return out;
}

std::size_t lcs(const Tokens& a, const Tokens& b) {
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j)
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

double mean_diff(std::span<const double> pooled, const std::vector<char>& in_a, std::size_t na) {
    double sa = 0.0, sb = 0.0;
    for (std::size_t i = 0; i < pooled.size(); ++i) (in_a[i] ? sa : sb) += pooled[i];
    return sa / static_cast<double>(na) - sb / static_cast<double>(pooled.size() - na);
}

// C(n, k), saturating at `cap`.
std::size_t choose_capped(std::size_t n, std::size_t k, std::size_t cap) {
    k = std::min(k, n - k);
    double c = 1.0;
    for (std::size_t i = 1; i <= k; ++i) {
        c = c * static_cast<double>(n - k + i) / static_cast<double>(i);
        if (c > static_cast<double>(cap)) return cap + 1;
    }
    return static_cast<std::size_t>(std::llround(c));
}

}  // namespace

double accuracy(std::span<const std::int32_t> preds, std::span<const std::int32_t> golds) {
    check_pair(preds, golds, "accuracy");
    std::size_t hit = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) hit += preds[i] == golds[i];
    return static_cast<double>(hit) / static_cast<double>(preds.size());
}

double macro_f1(std::span<const std::int32_t> preds, std::span<const std::int32_t> golds, std::size_t n_classes) {
    check_pair(preds, golds, "macro_f1");
    std::vector<double> tp(n_classes), fp(n_classes), fn(n_classes);
    auto slot = [&](std::int32_t c) {
        if (c < 0 || static_cast<std::size_t>(c) >= n_classes)
            throw ContractError("macro_f1: class " + std::to_string(c) + " outside [0, " + std::to_string(n_classes) + ")");
        return static_cast<std::size_t>(c);
    };
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const auto p = slot(preds[i]);
        const auto g = slot(golds[i]);
        if (p == g) {
            tp[p] += 1.0;
        } else {
            fp[p] += 1.0;
            fn[g] += 1.0;
        }
    }
    double sum = 0.0;
    std::size_t present = 0;
    for (std::size_t c = 0; c < n_classes; ++c) {
        if (tp[c] + fp[c] + fn[c] == 0.0) continue;
        sum += f1(tp[c], fp[c], fn[c]);
        ++present;
    }
    return sum / static_cast<double>(present);
}

double binary_f1(std::span<const std::int32_t> preds, std::span<const std::int32_t> golds, std::int32_t positive) {
    check_pair(preds, golds, "binary_f1");
    double tp = 0.0, fp = 0.0, fn = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const bool p = preds[i] == positive;
        const bool g = golds[i] == positive;
        tp += p && g;
        fp += p && !g;
        fn += !p && g;
    }
    return f1(tp, fp, fn);
}

std::string normalize_whitespace(std::string_view text) {
    std::string out;
    for (const auto& t : data::split_ws(text)) {
        if (!out.empty()) out += ' ';
        out += t;
    }
    return out;
}

double exact_match(const std::vector<std::string>& candidates, const std::vector<std::string>& references) {
    check_pair(candidates, references, "exact_match");
    std::size_t hit = 0;
    for (std::size_t i = 0; i < candidates.size(); ++i)
        hit += normalize_whitespace(candidates[i]) == normalize_whitespace(references[i]);
    return static_cast<double>(hit) / static_cast<double>(candidates.size());
}

double token_f1(const std::vector<std::string>& candidates, const std::vector<std::string>& references) {
    check_pair(candidates, references, "token_f1");
    double total = 0.0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        const auto c = data::split_ws(candidates[i]);
        const auto r = data::split_ws(references[i]);
        if (c.empty() || r.empty()) {
            total += c.empty() && r.empty() ? 1.0 : 0.0;
            continue;
        }
        std::map<std::string, long> count;
        for (const auto& t : r) ++count[t];
        double common = 0.0;
        for (const auto& t : c)
            if (count[t]-- > 0) common += 1.0;
        if (common == 0.0) continue;
        const double p = common / static_cast<double>(c.size());
        const double rec = common / static_cast<double>(r.size());
        total += 2.0 * p * rec / (p + rec);
    }
    return total / static_cast<double>(candidates.size());
}

double bleu(const std::vector<std::string>& candidates, const std::vector<std::string>& references, std::size_t max_n,
            double epsilon) {
    check_pair(candidates, references, "bleu");
    if (max_n == 0) throw ContractError("bleu: max_n must be positive");
    std::vector<double> clipped(max_n + 1, 0.0), total(max_n + 1, 0.0);
    double c_len = 0.0, r_len = 0.0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        const auto c = data::split_ws(candidates[i]);
        const auto r = data::split_ws(references[i]);
        c_len += static_cast<double>(c.size());
        r_len += static_cast<double>(r.size());
        for (std::size_t n = 1; n <= max_n; ++n) {
            const auto cn = ngrams(c, n);
            const auto rn = ngrams(r, n);
            for (const auto& [g, k] : cn) {
                total[n] += static_cast<double>(k);
                const auto it = rn.find(g);
                if (it != rn.end()) clipped[n] += static_cast<double>(std::min(k, it->second));
            }
        }
    }
    if (c_len == 0.0) return 0.0;
    double log_p = 0.0;
    std::size_t orders = 0;
    for (std::size_t n = 1; n <= max_n; ++n) {
        if (total[n] == 0.0) continue;
        const double p = clipped[n] > 0.0 ? clipped[n] / total[n] : epsilon / total[n];
        log_p += std::log(p);
        ++orders;
    }
    const double bp = c_len < r_len ? std::exp(1.0 - r_len / c_len) : 1.0;
    return bp * std::exp(log_p / static_cast<double>(orders));
}

double rouge_l(const std::vector<std::string>& candidates, const std::vector<std::string>& references) {
    check_pair(candidates, references, "rouge_l");
    double total = 0.0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        const auto c = data::split_ws(candidates[i]);
        const auto r = data::split_ws(references[i]);
        if (c.empty() || r.empty()) {
            total += c.empty() && r.empty() ? 1.0 : 0.0;
            continue;
        }
        const double l = static_cast<double>(lcs(c, r));
        if (l == 0.0) continue;
        const double p = l / static_cast<double>(c.size());
        const double rec = l / static_cast<double>(r.size());
        total += 2.0 * p * rec / (p + rec);
    }
    return total / static_cast<double>(candidates.size());
}

double permutation_test(std::span<const double> a, std::span<const double> b, std::size_t n_perm, std::uint64_t seed) {
    if (a.empty() || b.empty()) throw ContractError("permutation_test: both samples must be non-empty");
    if (n_perm < 1000) throw ContractError("permutation_test: n_perm must be at least 1000");
    // Canonical order makes the result independent of argument order.
    std::vector<double> first(a.begin(), a.end()), second(b.begin(), b.end());
    if (std::make_pair(second.size(), second) < std::make_pair(first.size(), first)) std::swap(first, second);
    const std::size_t na = first.size();
    std::vector<double> pooled = first;
    pooled.insert(pooled.end(), second.begin(), second.end());
    const std::size_t n = pooled.size();

    std::vector<char> in_a(n, 0);
    std::fill(in_a.begin(), in_a.begin() + static_cast<std::ptrdiff_t>(na), 1);
    const double observed = std::abs(mean_diff(pooled, in_a, na));
    // Ties within round-off count as at least as extreme.
    const double threshold = observed - 1e-12 * (1.0 + observed);

    const std::size_t splits = choose_capped(n, na, n_perm);
    if (splits <= n_perm) {
        // Visit every membership vector with exactly na ones (descending lexicographic order).
        std::vector<char> mask(n, 0);
        std::fill(mask.begin(), mask.begin() + static_cast<std::ptrdiff_t>(na), 1);
        std::size_t hits = 0, count = 0;
        do {
            ++count;
            hits += std::abs(mean_diff(pooled, mask, na)) >= threshold;
        } while (std::prev_permutation(mask.begin(), mask.end()));
        return static_cast<double>(hits) / static_cast<double>(count);
    }
    Rng rng(seed);
    std::vector<std::size_t> idx(n);
    std::size_t hits = 0;
    for (std::size_t t = 0; t < n_perm; ++t) {
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        rng.shuffle(idx.begin(), idx.end());
        std::vector<char> mask(n, 0);
        for (std::size_t i = 0; i < na; ++i) mask[idx[i]] = 1;
        hits += std::abs(mean_diff(pooled, mask, na)) >= threshold;
    }
    return static_cast<double>(hits + 1) / static_cast<double>(n_perm + 1);
}

}  // namespace pifi::train
