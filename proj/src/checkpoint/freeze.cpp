#include "pifi/checkpoint/freeze.hpp"

#include <fnmatch.h>

#include <sstream>

#include "pifi/errors.hpp"

namespace pifi::ckpt {

bool glob_match(const std::string& pattern, const std::string& name) {
    return fnmatch(pattern.c_str(), name.c_str(), 0) == 0;
}

template <typename T>
FreezeSummary apply_freeze(const std::vector<NamedParam<T>>& params, const FreezeManifest& manifest) {
    FreezeSummary summary;
    std::vector<bool> used(manifest.size(), false);
    for (const auto& np : params) {
        bool trainable = true;
        for (std::size_t r = 0; r < manifest.size(); ++r) {
            if (!glob_match(manifest[r].glob, np.name)) continue;
            trainable = manifest[r].trainable;
            used[r] = true;
        }
        np.param->trainable = trainable;
        const std::size_t n = np.param->value.numel();
        if (trainable) {
            summary.trainable += n;
            ++summary.trainable_tensors;
        } else {
            summary.frozen += n;
            ++summary.frozen_tensors;
        }
    }
    for (std::size_t r = 0; r < manifest.size(); ++r)
        if (!used[r]) summary.warnings.push_back("freeze rule '" + manifest[r].glob + "' matched no parameter");
    return summary;
}

template FreezeSummary apply_freeze(const std::vector<NamedParam<float>>&, const FreezeManifest&);
template FreezeSummary apply_freeze(const std::vector<NamedParam<double>>&, const FreezeManifest&);

FreezeManifest parse_freeze_manifest(const std::string& text) {
    FreezeManifest out;
    std::string item;
    std::string normalized = text;
    for (auto& c : normalized)
        if (c == '\n') c = ',';
    std::istringstream in(normalized);
    while (std::getline(in, item, ',')) {
        const auto first = item.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        const auto last = item.find_last_not_of(" \t\r");
        item = item.substr(first, last - first + 1);
        const auto eq = item.rfind('=');
        if (eq == std::string::npos) throw ConfigError("freeze rule '" + item + "' must look like glob=frozen|trainable");
        const std::string flag = item.substr(eq + 1);
        if (flag != "frozen" && flag != "trainable")
            throw ConfigError("freeze rule '" + item + "': flag must be 'frozen' or 'trainable'");
        out.push_back({item.substr(0, eq), flag == "trainable"});
    }
    return out;
}

}  // namespace pifi::ckpt
