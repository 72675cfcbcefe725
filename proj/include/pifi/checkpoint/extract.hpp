#pragma once

#include <string>
#include <vector>

#include "pifi/checkpoint/archive.hpp"

namespace pifi::ckpt {

// Number of layers L stored as "layers.{0..L-1}.*". Indices must be contiguous.
std::size_t archive_layer_count(const TensorArchive& archive);

// Copies the tensors of each requested layer (1-based, as users count them)
// into a store with the "layers.{k-1}." prefix stripped. Order follows
// `indices`. Throws ExtractionError carrying L for any index outside [1, L].
std::vector<ParamStore<float>> extract_donor_layers(const TensorArchive& archive, const std::vector<std::size_t>& indices);

// Copies all tensors whose name starts with `prefix`, prefix stripped.
ParamStore<float> extract_prefix(const TensorArchive& archive, const std::string& prefix);

}  // namespace pifi::ckpt
