#pragma once

#include <string>
#include <vector>

#include "pifi/autograd/param_store.hpp"

namespace pifi::ckpt {

struct FreezeRule {
    std::string glob;  // fnmatch pattern over model-global names
    bool trainable = false;
};

// Ordered rules; for each parameter the last matching rule wins, and a
// parameter matched by no rule is trainable.
using FreezeManifest = std::vector<FreezeRule>;

struct FreezeSummary {
    std::size_t trainable = 0;  // element counts
    std::size_t frozen = 0;
    std::size_t trainable_tensors = 0;
    std::size_t frozen_tensors = 0;
    std::vector<std::string> warnings;  // one per glob that matched nothing
};

bool glob_match(const std::string& pattern, const std::string& name);

template <typename T>
FreezeSummary apply_freeze(const std::vector<NamedParam<T>>& params, const FreezeManifest& manifest);

// Parses "glob=frozen" / "glob=trainable" (comma or newline separated).
FreezeManifest parse_freeze_manifest(const std::string& text);

}  // namespace pifi::ckpt
