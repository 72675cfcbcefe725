#include "pifi/data/vocab.hpp"

#include "pifi/errors.hpp"

namespace pifi::data {

Vocab::Vocab() {
    for (const char* s : {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[BOS]", "[EOS]"}) add(s);
}

std::int32_t Vocab::add(std::string_view token) {
    const std::string key(token);
    if (const auto it = ids_.find(key); it != ids_.end()) return it->second;
    const auto id = static_cast<std::int32_t>(tokens_.size());
    tokens_.push_back(key);
    ids_.emplace(key, id);
    return id;
}

bool Vocab::contains(std::string_view token) const {
    return ids_.contains(std::string(token));
}

std::int32_t Vocab::id(std::string_view token) const {
    const auto it = ids_.find(std::string(token));
    return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(std::int32_t id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
        throw ContractError("vocab: id " + std::to_string(id) + " outside [0, " + std::to_string(tokens_.size()) + ")");
    return tokens_[static_cast<std::size_t>(id)];
}

std::vector<std::int32_t> Vocab::encode(std::string_view text) const {
    std::vector<std::int32_t> out;
    for (const auto& t : split_ws(text)) out.push_back(id(t));
    return out;
}

std::string Vocab::decode(std::span<const std::int32_t> ids) const {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i) out += ' ';
        out += token(ids[i]);
    }
    return out;
}

std::vector<std::string> split_ws(std::string_view text) {
    std::vector<std::string> out;
    std::size_t i = 0;
    auto space = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; };
    while (i < text.size()) {
        while (i < text.size() && space(text[i])) ++i;
        const std::size_t start = i;
        while (i < text.size() && !space(text[i])) ++i;
        if (i > start) out.emplace_back(text.substr(start, i - start));
    }
    return out;
}

}  // namespace pifi::data
