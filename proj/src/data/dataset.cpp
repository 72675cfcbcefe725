#include "pifi/data/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "pifi/autograd/rng.hpp"
#include "pifi/errors.hpp"

namespace pifi::data {

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t tab = line.find('\t', start);
        out.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
        if (tab == std::string::npos) return out;
        start = tab + 1;
    }
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    return out;
}

// Reads non-blank lines as (1-based line number, tab fields); the first is the header.
std::vector<std::pair<std::size_t, std::vector<std::string>>> read_rows(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IngestionError("cannot open " + path.string(), 0);
    std::vector<std::pair<std::size_t, std::vector<std::string>>> rows;
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        rows.emplace_back(number, split_tabs(line));
    }
    if (rows.empty()) throw IngestionError("missing header row", 1);
    return rows;
}

void check_width(const std::pair<std::size_t, std::vector<std::string>>& row, std::size_t width) {
    if (row.second.size() != width)
        throw IngestionError("expected " + std::to_string(width) + " tab-separated fields, got " +
                                 std::to_string(row.second.size()),
                             row.first);
}

std::size_t target_count(std::size_t n, double fraction) {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("subsample fraction must be in (0, 1]");
    return static_cast<std::size_t>(std::llround(static_cast<double>(n) * fraction));
}

void truncate_pair(std::vector<std::int32_t>& a, std::vector<std::int32_t>& b, std::size_t budget) {
    while (a.size() + b.size() > budget) {
        if (a.size() >= b.size())
            a.pop_back();
        else
            b.pop_back();
    }
}

model::TokenBatch pad_rows(const std::vector<std::vector<std::int32_t>>& ids,
                           const std::vector<std::vector<std::int32_t>>* segments) {
    std::size_t seq = 1;
    for (const auto& r : ids) seq = std::max(seq, r.size());
    model::TokenBatch t;
    t.batch = ids.size();
    t.seq = seq;
    t.ids.assign(t.batch * seq, kPad);
    t.valid.assign(t.batch * seq, 0);
    if (segments) t.segments.assign(t.batch * seq, 0);
    for (std::size_t r = 0; r < ids.size(); ++r)
        for (std::size_t j = 0; j < ids[r].size(); ++j) {
            t.ids[r * seq + j] = ids[r][j];
            t.valid[r * seq + j] = 1;
            if (segments) t.segments[r * seq + j] = (*segments)[r][j];
        }
    return t;
}

}  // namespace

bool LabeledDataset::paired() const {
    return std::any_of(examples.begin(), examples.end(), [](const auto& e) { return !e.pair.empty(); });
}

void LabeledDataset::validate(std::size_t vocab_size) const {
    for (std::size_t i = 0; i < examples.size(); ++i) {
        const auto& e = examples[i];
        if (e.label < 0 || static_cast<std::size_t>(e.label) >= n_classes())
            throw ContractError("example " + std::to_string(i) + ": label " + std::to_string(e.label) + " outside [0, " +
                                std::to_string(n_classes()) + ")");
        for (const auto* part : {&e.tokens, &e.pair})
            for (auto id : *part)
                if (id < 0 || static_cast<std::size_t>(id) >= vocab_size)
                    throw ContractError("example " + std::to_string(i) + ": token id " + std::to_string(id) +
                                        " outside the vocabulary");
    }
}

void save_tsv(const LabeledDataset& data, const Vocab& vocab, const std::filesystem::path& path) {
    auto out = open_out(path);
    const bool paired = data.paired();
    out << (paired ? "text\ttext2\tlabel\n" : "text\tlabel\n");
    for (const auto& e : data.examples) {
        out << vocab.decode(e.tokens) << '\t';
        if (paired) out << vocab.decode(e.pair) << '\t';
        out << data.label_names.at(static_cast<std::size_t>(e.label)) << '\n';
    }
}

void save_tsv(const Seq2SeqDataset& data, const Vocab& vocab, const std::filesystem::path& path) {
    auto out = open_out(path);
    out << "source\ttarget\n";
    for (const auto& e : data.examples) out << vocab.decode(e.source) << '\t' << vocab.decode(e.target) << '\n';
}

LabeledDataset load_labeled_tsv(const std::filesystem::path& path, const Vocab& vocab,
                                const std::vector<std::string>& label_names) {
    const auto rows = read_rows(path);
    const auto& header = rows.front();
    bool paired = false;
    if (header.second == std::vector<std::string>{"text", "text2", "label"})
        paired = true;
    else if (header.second != std::vector<std::string>{"text", "label"})
        throw IngestionError("header must be \"text\\tlabel\" or \"text\\ttext2\\tlabel\"", header.first);
    LabeledDataset data;
    data.label_names = label_names;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        check_width(rows[i], paired ? 3 : 2);
        const auto& f = rows[i].second;
        const auto it = std::find(label_names.begin(), label_names.end(), f.back());
        if (it == label_names.end()) throw IngestionError("unknown label \"" + f.back() + "\"", rows[i].first);
        LabeledExample e;
        e.tokens = vocab.encode(f[0]);
        if (paired) e.pair = vocab.encode(f[1]);
        e.label = static_cast<std::int32_t>(it - label_names.begin());
        data.examples.push_back(std::move(e));
    }
    return data;
}

Seq2SeqDataset load_seq2seq_tsv(const std::filesystem::path& path, const Vocab& vocab) {
    const auto rows = read_rows(path);
    if (rows.front().second != std::vector<std::string>{"source", "target"})
        throw IngestionError("header must be \"source\\ttarget\"", rows.front().first);
    Seq2SeqDataset data;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        check_width(rows[i], 2);
        data.examples.push_back({vocab.encode(rows[i].second[0]), vocab.encode(rows[i].second[1])});
    }
    return data;
}

LabeledDataset subsample(const LabeledDataset& data, double fraction, std::uint64_t seed) {
    const std::size_t n = data.examples.size();
    const std::size_t want = target_count(n, fraction);
    const std::size_t c = std::max<std::size_t>(data.n_classes(), 1);
    std::vector<std::vector<std::size_t>> by_class(c);
    for (std::size_t i = 0; i < n; ++i) by_class.at(static_cast<std::size_t>(data.examples[i].label)).push_back(i);

    // Floor of each class's share, then the remainder to the largest fractional parts.
    std::vector<std::size_t> quota(c);
    std::vector<std::pair<double, std::size_t>> rest;
    std::size_t assigned = 0;
    for (std::size_t k = 0; k < c; ++k) {
        const double share = static_cast<double>(by_class[k].size()) * fraction;
        quota[k] = std::min(by_class[k].size(), static_cast<std::size_t>(std::floor(share)));
        assigned += quota[k];
        rest.emplace_back(share - static_cast<double>(quota[k]), k);
    }
    std::stable_sort(rest.begin(), rest.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t r = 0; assigned < want && r < rest.size(); ++r) {
        const std::size_t k = rest[r].second;
        if (quota[k] < by_class[k].size()) {
            ++quota[k];
            ++assigned;
        }
    }

    Rng rng(seed);
    std::vector<std::size_t> keep;
    for (std::size_t k = 0; k < c; ++k) {
        rng.shuffle(by_class[k].begin(), by_class[k].end());
        keep.insert(keep.end(), by_class[k].begin(), by_class[k].begin() + static_cast<std::ptrdiff_t>(quota[k]));
    }
    std::sort(keep.begin(), keep.end());
    LabeledDataset out;
    out.label_names = data.label_names;
    for (auto i : keep) out.examples.push_back(data.examples[i]);
    return out;
}

Seq2SeqDataset subsample(const Seq2SeqDataset& data, double fraction, std::uint64_t seed) {
    const std::size_t want = target_count(data.examples.size(), fraction);
    std::vector<std::size_t> idx(data.examples.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(seed);
    rng.shuffle(idx.begin(), idx.end());
    idx.resize(want);
    std::sort(idx.begin(), idx.end());
    Seq2SeqDataset out;
    for (auto i : idx) out.examples.push_back(data.examples[i]);
    return out;
}

model::TokenBatch encode_batch(std::span<const LabeledExample* const> rows, std::size_t max_len,
                               model::SlmFamily family) {
    if (max_len < 3) throw ConfigError("encode_batch: max_len must be at least 3");
    if (rows.empty()) throw ContractError("encode_batch: empty batch");
    using model::SlmFamily;
    std::vector<std::vector<std::int32_t>> ids;
    std::vector<std::vector<std::int32_t>> segs;
    for (const auto* e : rows) {
        auto a = e->tokens;
        auto b = e->pair;
        const bool paired = !b.empty();
        std::vector<std::int32_t> row;
        std::vector<std::int32_t> seg;
        switch (family) {
            case SlmFamily::encoder:
                truncate_pair(a, b, max_len - (paired ? 3 : 2));
                row.push_back(kCls);
                row.insert(row.end(), a.begin(), a.end());
                row.push_back(kSep);
                seg.assign(row.size(), 0);
                if (paired) {
                    row.insert(row.end(), b.begin(), b.end());
                    row.push_back(kSep);
                    seg.resize(row.size(), 1);
                }
                break;
            case SlmFamily::decoder_only:
                truncate_pair(a, b, max_len - (paired ? 2 : 1));
                row.push_back(kBos);
                row.insert(row.end(), a.begin(), a.end());
                if (paired) {
                    row.push_back(kSep);
                    row.insert(row.end(), b.begin(), b.end());
                }
                break;
            case SlmFamily::encoder_decoder:
                truncate_pair(a, b, max_len - (paired ? 2 : 1));
                row = a;
                if (paired) {
                    row.push_back(kSep);
                    row.insert(row.end(), b.begin(), b.end());
                }
                row.push_back(kEos);
                break;
        }
        ids.push_back(std::move(row));
        segs.push_back(std::move(seg));
    }
    return pad_rows(ids, family == SlmFamily::encoder ? &segs : nullptr);
}

Seq2SeqBatch encode_seq2seq_batch(std::span<const Seq2SeqExample* const> rows, std::size_t max_len) {
    if (max_len < 3) throw ConfigError("encode_seq2seq_batch: max_len must be at least 3");
    if (rows.empty()) throw ContractError("encode_seq2seq_batch: empty batch");
    std::vector<std::vector<std::int32_t>> src;
    std::vector<std::vector<std::int32_t>> tgt_in;
    std::vector<std::vector<std::int32_t>> tgt_out;
    for (const auto* e : rows) {
        auto s = e->source;
        if (s.size() > max_len - 1) s.resize(max_len - 1);
        s.push_back(kEos);
        src.push_back(std::move(s));
        auto t = e->target;
        if (t.size() > max_len - 1) t.resize(max_len - 1);
        std::vector<std::int32_t> in{kBos};
        in.insert(in.end(), t.begin(), t.end());
        t.push_back(kEos);
        tgt_in.push_back(std::move(in));
        tgt_out.push_back(std::move(t));
    }
    Seq2SeqBatch out;
    out.src = pad_rows(src, nullptr);
    out.tgt_in = pad_rows(tgt_in, nullptr);
    out.tgt_out.assign(out.tgt_in.ids.size(), kPad);
    for (std::size_t r = 0; r < tgt_out.size(); ++r)
        for (std::size_t j = 0; j < tgt_out[r].size(); ++j) out.tgt_out[r * out.tgt_in.seq + j] = tgt_out[r][j];
    return out;
}

}  // namespace pifi::data
