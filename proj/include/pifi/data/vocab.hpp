#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace pifi::data {

inline constexpr std::int32_t kPad = 0;
inline constexpr std::int32_t kUnk = 1;
inline constexpr std::int32_t kCls = 2;
inline constexpr std::int32_t kSep = 3;
inline constexpr std::int32_t kBos = 4;
inline constexpr std::int32_t kEos = 5;

// Dense token <-> id map. Ids 0..5 are the fixed specials
// [PAD] [UNK] [CLS] [SEP] [BOS] [EOS].
class Vocab {
public:
    Vocab();

    // Id of `token`, adding it when new.
    std::int32_t add(std::string_view token);
    bool contains(std::string_view token) const;
    // Id of `token`, or kUnk.
    std::int32_t id(std::string_view token) const;
    const std::string& token(std::int32_t id) const;
    std::size_t size() const noexcept { return tokens_.size(); }
    const std::vector<std::string>& tokens() const noexcept { return tokens_; }

    // Whitespace tokenization; unknown tokens map to kUnk.
    std::vector<std::int32_t> encode(std::string_view text) const;
    // Space-joined tokens.
    std::string decode(std::span<const std::int32_t> ids) const;

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::int32_t> ids_;
};

// Splits on ASCII whitespace, dropping empty pieces.
std::vector<std::string> split_ws(std::string_view text);

}  // namespace pifi::data
