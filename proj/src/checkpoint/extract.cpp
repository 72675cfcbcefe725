#include "pifi/checkpoint/extract.hpp"

#include <charconv>
#include <set>

#include "pifi/errors.hpp"

namespace pifi::ckpt {

namespace {

// Parses "layers.{i}.rest"; returns false for other names.
bool split_layer_name(const std::string& name, std::size_t& index, std::string& rest) {
    static const std::string prefix = "layers.";
    if (name.rfind(prefix, 0) != 0) return false;
    const std::size_t dot = name.find('.', prefix.size());
    if (dot == std::string::npos || dot == prefix.size()) return false;
    const char* first = name.data() + prefix.size();
    const char* last = name.data() + dot;
    const auto [ptr, ec] = std::from_chars(first, last, index);
    if (ec != std::errc() || ptr != last) return false;
    rest = name.substr(dot + 1);
    return true;
}

}  // namespace

std::size_t archive_layer_count(const TensorArchive& archive) {
    std::set<std::size_t> seen;
    std::size_t index = 0;
    std::string rest;
    for (const auto& e : archive.entries())
        if (split_layer_name(e.name, index, rest)) seen.insert(index);
    if (seen.empty()) return 0;
    if (*seen.rbegin() + 1 != seen.size())
        throw ExtractionError("layer indices in archive are not contiguous from 0", seen.size());
    return seen.size();
}

std::vector<ParamStore<float>> extract_donor_layers(const TensorArchive& archive, const std::vector<std::size_t>& indices) {
    const std::size_t count = archive_layer_count(archive);
    for (std::size_t k : indices)
        if (k < 1 || k > count)
            throw ExtractionError("layer index " + std::to_string(k) + " outside [1, " + std::to_string(count) + "]",
                                  count);
    std::vector<ParamStore<float>> out(indices.size());
    std::size_t index = 0;
    std::string rest;
    for (const auto& e : archive.entries()) {
        if (!split_layer_name(e.name, index, rest)) continue;
        for (std::size_t i = 0; i < indices.size(); ++i)
            if (indices[i] == index + 1) out[i].add(rest, e.tensor, false);
    }
    return out;
}

ParamStore<float> extract_prefix(const TensorArchive& archive, const std::string& prefix) {
    ParamStore<float> out;
    for (const auto& e : archive.entries())
        if (e.name.rfind(prefix, 0) == 0) out.add(e.name.substr(prefix.size()), e.tensor);
    return out;
}

}  // namespace pifi::ckpt
