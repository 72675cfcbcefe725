#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "pifi/autograd/param_store.hpp"

namespace pifi::ckpt {

// PIFA container, version 1 (all integers little-endian):
//
//   offset 0   magic        "PIFA"
//   offset 4   version      u32 = 1
//   offset 8   manifest_len u64
//   offset 16  manifest     UTF-8 JSON, manifest_len bytes
//   ...        zero padding up to the next multiple of 64
//   data       f32 payloads; each starts on a 64-byte boundary
//
// The manifest is a JSON object mapping tensor name → {"dtype":"f32",
// "shape":[...], "offset":N, "byte_len":N}, offsets relative to the data
// section, in strictly increasing order. The reserved key "__metadata__"
// holds a flat string → string object.
inline constexpr char kMagic[4] = {'P', 'I', 'F', 'A'};
inline constexpr std::uint32_t kVersion = 1;
inline constexpr std::size_t kAlignment = 64;
inline constexpr const char* kMetadataKey = "__metadata__";

class TensorArchive {
public:
    struct Entry {
        std::string name;
        Tensor<float> tensor;
    };

    void add(std::string name, Tensor<float> tensor);
    bool contains(const std::string& name) const;
    const Tensor<float>& at(const std::string& name) const;
    const std::vector<Entry>& entries() const noexcept { return entries_; }
    std::size_t size() const noexcept { return entries_.size(); }

    std::map<std::string, std::string> metadata;

    std::vector<std::uint8_t> serialize() const;
    static TensorArchive parse(std::span<const std::uint8_t> bytes);

    bool operator==(const TensorArchive& other) const;

private:
    std::vector<Entry> entries_;
};

void save_archive(const TensorArchive& archive, const std::filesystem::path& path);
TensorArchive load_archive(const std::filesystem::path& path);

// Adds every parameter of `store` under `prefix` + name.
void add_store(TensorArchive& archive, const ParamStore<float>& store, const std::string& prefix);

// Manifest as JSON text, for `inspect`.
std::string manifest_json(std::span<const std::uint8_t> bytes, int indent = 2);

}  // namespace pifi::ckpt
