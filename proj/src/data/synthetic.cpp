#include "pifi/data/synthetic.hpp"

#include <algorithm>
#include <numeric>

#include "pifi/autograd/rng.hpp"
#include "pifi/errors.hpp"

namespace pifi::data {

namespace {

// Grammar terminals by preterminal.
const std::vector<std::string> kDet{"the", "a", "every"};
const std::vector<std::string> kNoun{"dog", "cat", "bird", "child", "farmer"};
const std::vector<std::string> kAdj{"red", "small", "old"};
const std::vector<std::string> kVerb{"sees", "likes", "finds"};
const std::vector<std::string> kPrep{"near", "with"};

// Nonterminals of the grammar in Chomsky normal form.
enum Nt : unsigned { S, NP, VP, PP, AN, NPP, Det, N, Adj, V, P, kNtCount };

struct Binary {
    Nt lhs, left, right;
};

// S → NP VP; NP → Det N | Det AN; AN → Adj N; VP → V | V NP | V NPP;
// NPP → NP PP; PP → P NP. The unit rule VP → V is folded into the lexicon.
constexpr Binary kRules[] = {
    {S, NP, VP}, {NP, Det, N}, {NP, Det, AN}, {AN, Adj, N}, {VP, V, NP}, {VP, V, NPP}, {NPP, NP, PP}, {PP, P, NP},
};

unsigned lexical(const std::string& w) {
    auto in = [&](const std::vector<std::string>& set) { return std::find(set.begin(), set.end(), w) != set.end(); };
    unsigned m = 0;
    if (in(kDet)) m |= 1u << Det;
    if (in(kNoun)) m |= 1u << N;
    if (in(kAdj)) m |= 1u << Adj;
    if (in(kVerb)) m |= (1u << V) | (1u << VP);
    if (in(kPrep)) m |= 1u << P;
    return m;
}

template <typename C>
const auto& pick(Rng& rng, const C& items) {
    return items[rng.below(items.size())];
}

void gen_np(Rng& rng, std::vector<std::string>& out) {
    out.push_back(pick(rng, kDet));
    if (rng.below(2)) out.push_back(pick(rng, kAdj));
    out.push_back(pick(rng, kNoun));
}

std::vector<std::string> gen_sentence(Rng& rng) {
    std::vector<std::string> out;
    gen_np(rng, out);
    out.push_back(pick(rng, kVerb));
    const auto vp = rng.below(3);
    if (vp >= 1) gen_np(rng, out);
    if (vp == 2) {
        out.push_back(pick(rng, kPrep));
        gen_np(rng, out);
    }
    return out;
}

// Label order for n examples: exactly n/2 zeros, the rest ones, shuffled.
std::vector<std::int32_t> balanced_labels(Rng& rng, std::size_t n) {
    std::vector<std::int32_t> labels(n, 1);
    std::fill(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n / 2), 0);
    rng.shuffle(labels.begin(), labels.end());
    return labels;
}

std::vector<std::int32_t> to_ids(const std::vector<std::string>& words) {
    std::vector<std::int32_t> out;
    for (const auto& w : words) out.push_back(synthetic_vocab().id(w));
    return out;
}

void require_n(std::size_t n, const char* what) {
    if (n < 2) throw ConfigError(std::string(what) + ": n must be at least 2");
}

std::uint64_t stream_key(std::uint64_t seed, std::string_view tag) {
    return splitmix64(seed) ^ fnv1a64(tag);
}

}  // namespace

Polarity concept_polarity(std::size_t concept_id) {
    if (concept_id >= kConcepts) throw ContractError("concept id out of range");
    if (concept_id < kPositiveConcepts) return Polarity::positive;
    if (concept_id < kPositiveConcepts + kNegativeConcepts) return Polarity::negative;
    return Polarity::neutral;
}

std::string DomainSpec::surface(std::size_t concept_id) const {
    switch (concept_polarity(concept_id)) {
        case Polarity::positive: return std::string(1, name) + "p" + std::to_string(concept_id);
        case Polarity::negative: return std::string(1, name) + "n" + std::to_string(concept_id - kPositiveConcepts);
        case Polarity::neutral:
            return std::string(1, name) + "u" + std::to_string(concept_id - kPositiveConcepts - kNegativeConcepts);
    }
    return {};
}

DomainSpec domain(char name) {
    if (std::find(kDomains.begin(), kDomains.end(), name) == kDomains.end())
        throw ConfigError(std::string("unknown domain '") + name + "' (expected A, B or C)");
    return DomainSpec{name};
}

std::string symbol(std::size_t i) {
    return "x" + std::to_string(i);
}

const Vocab& synthetic_vocab() {
    static const Vocab vocab = [] {
        Vocab v;
        for (char d : kDomains)
            for (std::size_t c = 0; c < kConcepts; ++c) v.add(DomainSpec{d}.surface(c));
        for (const auto* set : {&kDet, &kNoun, &kAdj, &kVerb, &kPrep})
            for (const auto& w : *set) v.add(w);
        for (std::size_t i = 0; i < kSymbols; ++i) v.add(symbol(i));
        return v;
    }();
    return vocab;
}

LabeledDataset gen_sentiment(const DomainSpec& dom, std::size_t n, std::uint64_t seed) {
    require_n(n, "gen_sentiment");
    domain(dom.name);
    Rng rng(stream_key(seed, std::string("sentiment/") + dom.name));
    const auto& vocab = synthetic_vocab();
    LabeledDataset data;
    data.label_names = {"negative", "positive"};
    for (auto label : balanced_labels(rng, n)) {
        const auto len = static_cast<std::size_t>(rng.between(8, 32));
        const auto polar = static_cast<std::size_t>(2 * rng.between(0, 3) + 1);
        const auto majority = static_cast<std::size_t>(rng.between(static_cast<std::int64_t>(polar / 2 + 1),
                                                                   static_cast<std::int64_t>(polar)));
        const std::size_t n_pos = label == 1 ? majority : polar - majority;
        std::vector<std::int32_t> tokens;
        for (std::size_t i = 0; i < len; ++i) {
            std::size_t concept_id;
            if (i < n_pos)
                concept_id = rng.below(kPositiveConcepts);
            else if (i < polar)
                concept_id = kPositiveConcepts + rng.below(kNegativeConcepts);
            else
                concept_id = kPositiveConcepts + kNegativeConcepts + rng.below(kNeutralConcepts);
            tokens.push_back(vocab.id(dom.surface(concept_id)));
        }
        rng.shuffle(tokens.begin(), tokens.end());
        data.examples.push_back({std::move(tokens), {}, label});
    }
    return data;
}

bool grammatical(const std::vector<std::string>& words) {
    const std::size_t n = words.size();
    if (n == 0) return false;
    // table[i][l] = nonterminal set deriving words[i, i + l + 1).
    std::vector<std::vector<unsigned>> table(n, std::vector<unsigned>(n, 0));
    for (std::size_t i = 0; i < n; ++i) table[i][0] = lexical(words[i]);
    for (std::size_t len = 2; len <= n; ++len)
        for (std::size_t i = 0; i + len <= n; ++i)
            for (std::size_t split = 1; split < len; ++split) {
                const unsigned left = table[i][split - 1];
                const unsigned right = table[i + split][len - split - 1];
                for (const auto& r : kRules)
                    if ((left >> r.left & 1u) && (right >> r.right & 1u)) table[i][len - 1] |= 1u << r.lhs;
            }
    return (table[0][n - 1] >> S & 1u) != 0;
}

LabeledDataset gen_acceptability(std::size_t n, std::uint64_t seed) {
    require_n(n, "gen_acceptability");
    Rng rng(stream_key(seed, "acceptability"));
    LabeledDataset data;
    data.label_names = {"unacceptable", "acceptable"};
    for (auto label : balanced_labels(rng, n)) {
        auto words = gen_sentence(rng);
        if (label == 0) {
            // Rejection: resample until some adjacent swap breaks the parse.
            while (true) {
                std::vector<std::size_t> pos(words.size() - 1);
                std::iota(pos.begin(), pos.end(), std::size_t{0});
                rng.shuffle(pos.begin(), pos.end());
                bool done = false;
                for (auto p : pos) {
                    if (words[p] == words[p + 1]) continue;
                    std::swap(words[p], words[p + 1]);
                    if (!grammatical(words)) {
                        done = true;
                        break;
                    }
                    std::swap(words[p], words[p + 1]);
                }
                if (done) break;
                words = gen_sentence(rng);
            }
        }
        data.examples.push_back({to_ids(words), {}, label});
    }
    return data;
}

std::string to_string(Seq2SeqKind kind) {
    switch (kind) {
        case Seq2SeqKind::copy: return "copy";
        case Seq2SeqKind::reverse: return "reverse";
        case Seq2SeqKind::cipher: return "cipher";
    }
    return "?";
}

Seq2SeqKind seq2seq_kind_from_string(const std::string& name) {
    for (auto k : {Seq2SeqKind::copy, Seq2SeqKind::reverse, Seq2SeqKind::cipher})
        if (to_string(k) == name) return k;
    throw ConfigError("unknown seq2seq task '" + name + "' (expected copy, reverse or cipher)");
}

const std::array<std::size_t, kSymbols>& cipher_table() {
    static const auto table = [] {
        std::array<std::size_t, kSymbols> t{};
        std::iota(t.begin(), t.end(), std::size_t{0});
        Rng rng(0xc1f3e7ULL);
        // A derangement, so every symbol changes.
        do rng.shuffle(t.begin(), t.end());
        while ([&] {
            for (std::size_t i = 0; i < kSymbols; ++i)
                if (t[i] == i) return true;
            return false;
        }());
        return t;
    }();
    return table;
}

Seq2SeqDataset gen_seq2seq(Seq2SeqKind kind, std::size_t n, std::uint64_t seed) {
    require_n(n, "gen_seq2seq");
    Rng rng(stream_key(seed, "seq2seq/" + to_string(kind)));
    const auto& vocab = synthetic_vocab();
    Seq2SeqDataset data;
    for (std::size_t i = 0; i < n; ++i) {
        const auto len = static_cast<std::size_t>(rng.between(4, 16));
        std::vector<std::size_t> sym(len);
        for (auto& s : sym) s = rng.below(kSymbols);
        Seq2SeqExample e;
        for (auto s : sym) e.source.push_back(vocab.id(symbol(s)));
        switch (kind) {
            case Seq2SeqKind::copy: e.target = e.source; break;
            case Seq2SeqKind::reverse: e.target.assign(e.source.rbegin(), e.source.rend()); break;
            case Seq2SeqKind::cipher:
                for (auto s : sym) e.target.push_back(vocab.id(symbol(cipher_table()[s])));
                break;
        }
        data.examples.push_back(std::move(e));
    }
    return data;
}

const BigramTable& pretrain_bigram_table() {
    static const BigramTable table = [] {
        constexpr std::size_t kSuccessors = 6;
        constexpr double kStay = 0.9;
        Rng rng(0xb16a3ULL);
        const std::size_t first_neg = kPositiveConcepts;
        const std::size_t first_neu = kPositiveConcepts + kNegativeConcepts;
        auto draw_from = [&](std::size_t lo, std::size_t count, std::vector<std::size_t>& into) {
            while (true) {
                const std::size_t c = lo + rng.below(count);
                if (std::find(into.begin(), into.end(), c) == into.end()) {
                    into.push_back(c);
                    return;
                }
            }
        };
        // Concept-level successor distributions, shared by every domain.
        std::vector<std::vector<std::pair<std::size_t, double>>> concept_rows(kConcepts);
        for (std::size_t c = 0; c < kConcepts; ++c) {
            std::vector<std::size_t> next;
            const auto pol = concept_polarity(c);
            const std::size_t same_lo = pol == Polarity::positive ? 0 : pol == Polarity::negative ? first_neg : first_neu;
            const std::size_t same_n = pol == Polarity::neutral ? kNeutralConcepts : kPositiveConcepts;
            for (int k = 0; k < (pol == Polarity::neutral ? 4 : 3); ++k) draw_from(same_lo, same_n, next);
            if (pol == Polarity::neutral) {
                draw_from(0, kPositiveConcepts, next);
                draw_from(first_neg, kNegativeConcepts, next);
            } else {
                draw_from(pol == Polarity::positive ? first_neg : 0, kNegativeConcepts, next);
                draw_from(first_neu, kNeutralConcepts, next);
                draw_from(first_neu, kNeutralConcepts, next);
            }
            double total = 0.0;
            std::vector<double> w(kSuccessors);
            for (auto& x : w) total += (x = rng.uniform(0.5, 1.5));
            for (std::size_t k = 0; k < kSuccessors; ++k) concept_rows[c].emplace_back(next[k], w[k] / total);
        }
        BigramTable t;
        const auto& vocab = synthetic_vocab();
        const std::size_t nd = kDomains.size();
        for (std::size_t d = 0; d < nd; ++d)
            for (std::size_t c = 0; c < kConcepts; ++c) t.states.push_back(vocab.id(DomainSpec{kDomains[d]}.surface(c)));
        for (std::size_t d = 0; d < nd; ++d)
            for (std::size_t c = 0; c < kConcepts; ++c) {
                std::vector<std::pair<std::size_t, double>> row;
                for (std::size_t d2 = 0; d2 < nd; ++d2) {
                    const double pd = d2 == d ? kStay : (1.0 - kStay) / static_cast<double>(nd - 1);
                    for (const auto& [c2, pc] : concept_rows[c]) row.emplace_back(d2 * kConcepts + c2, pd * pc);
                }
                t.rows.push_back(std::move(row));
            }
        return t;
    }();
    return table;
}

std::vector<std::int32_t> gen_pretrain_corpus(std::size_t n_tokens, std::uint64_t seed) {
    const auto& table = pretrain_bigram_table();
    Rng rng(stream_key(seed, "pretrain"));
    std::vector<std::int32_t> out;
    out.reserve(n_tokens);
    if (n_tokens == 0) return out;
    // Cumulative rows for inverse-CDF sampling.
    std::vector<std::vector<double>> cdf(table.rows.size());
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        double acc = 0.0;
        for (const auto& [next, p] : table.rows[i]) cdf[i].push_back(acc += p);
    }
    std::size_t state = rng.below(table.states.size());
    out.push_back(table.states[state]);
    while (out.size() < n_tokens) {
        const double u = rng.uniform() * cdf[state].back();
        const auto k = static_cast<std::size_t>(std::upper_bound(cdf[state].begin(), cdf[state].end(), u) - cdf[state].begin());
        state = table.rows[state][std::min(k, cdf[state].size() - 1)].first;
        out.push_back(table.states[state]);
    }
    return out;
}

}  // namespace pifi::data
