#include "pifi/checkpoint/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "json.hpp"
#include "pifi/errors.hpp"

namespace pifi::ckpt {

using ordered_json = nlohmann::ordered_json;

namespace {

std::size_t align_up(std::size_t n) {
    return (n + kAlignment - 1) / kAlignment * kAlignment;
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_le(std::span<const std::uint8_t> bytes, std::size_t at, int width) {
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(bytes[at + i]) << (8 * i);
    return v;
}

void put_f32(std::uint8_t* dst, float f) {
    const auto bits = std::bit_cast<std::uint32_t>(f);
    for (int i = 0; i < 4; ++i) dst[i] = static_cast<std::uint8_t>(bits >> (8 * i));
}

float get_f32(const std::uint8_t* src) {
    std::uint32_t bits = 0;
    for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(src[i]) << (8 * i);
    return std::bit_cast<float>(bits);
}

struct Header {
    std::size_t manifest_len = 0;
    std::size_t data_start = 0;
};

Header read_header(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 16) throw FormatError("header", "file shorter than the 16-byte header");
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("magic", "expected \"PIFA\"");
    const auto version = get_le(bytes, 4, 4);
    if (version != kVersion) throw FormatError("version", "unsupported version " + std::to_string(version));
    const auto manifest_len = get_le(bytes, 8, 8);
    if (manifest_len > bytes.size() - 16) throw FormatError("manifest_len", "manifest extends past end of file");
    Header h;
    h.manifest_len = static_cast<std::size_t>(manifest_len);
    h.data_start = align_up(16 + h.manifest_len);
    return h;
}

ordered_json parse_manifest(std::span<const std::uint8_t> bytes, const Header& h) {
    const std::string text(reinterpret_cast<const char*>(bytes.data() + 16), h.manifest_len);
    ordered_json manifest;
    try {
        manifest = ordered_json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("manifest", std::string("invalid JSON: ") + e.what());
    }
    if (!manifest.is_object()) throw FormatError("manifest", "top level must be an object");
    return manifest;
}

std::uint64_t require_uint(const ordered_json& entry, const std::string& tensor, const char* key) {
    const std::string field = tensor + "." + key;
    if (!entry.contains(key) || !entry[key].is_number_unsigned()) throw FormatError(field, "missing or not an unsigned integer");
    return entry[key].get<std::uint64_t>();
}

}  // namespace

void TensorArchive::add(std::string name, Tensor<float> tensor) {
    if (name == kMetadataKey) throw ConfigError("tensor name \"__metadata__\" is reserved");
    if (contains(name)) throw ConfigError("duplicate tensor name: " + name);
    entries_.push_back({std::move(name), std::move(tensor)});
}

bool TensorArchive::contains(const std::string& name) const {
    for (const auto& e : entries_)
        if (e.name == name) return true;
    return false;
}

const Tensor<float>& TensorArchive::at(const std::string& name) const {
    for (const auto& e : entries_)
        if (e.name == name) return e.tensor;
    throw ConfigError("archive has no tensor named " + name);
}

bool TensorArchive::operator==(const TensorArchive& other) const {
    if (metadata != other.metadata || entries_.size() != other.entries_.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        const auto& a = entries_[i];
        const auto& b = other.entries_[i];
        if (a.name != b.name || a.tensor.shape() != b.tensor.shape()) return false;
        if (std::memcmp(a.tensor.data().data(), b.tensor.data().data(), a.tensor.data().size_bytes()) != 0) return false;
    }
    return true;
}

std::vector<std::uint8_t> TensorArchive::serialize() const {
    ordered_json manifest = ordered_json::object();
    if (!metadata.empty()) {
        ordered_json meta = ordered_json::object();
        for (const auto& [k, v] : metadata) meta[k] = v;
        manifest[kMetadataKey] = std::move(meta);
    }
    std::size_t offset = 0;
    std::vector<std::size_t> offsets;
    for (const auto& e : entries_) {
        const std::size_t len = e.tensor.numel() * sizeof(float);
        manifest[e.name] = {{"dtype", "f32"}, {"shape", e.tensor.shape()}, {"offset", offset}, {"byte_len", len}};
        offsets.push_back(offset);
        offset = align_up(offset + len);
    }
    const std::string text = manifest.dump();

    std::vector<std::uint8_t> out;
    out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
    put_u32(out, kVersion);
    put_u64(out, text.size());
    out.insert(out.end(), text.begin(), text.end());
    const std::size_t data_start = align_up(out.size());
    std::size_t total = data_start;
    if (!entries_.empty()) total += offsets.back() + entries_.back().tensor.numel() * sizeof(float);
    out.resize(total, 0);
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        std::uint8_t* dst = out.data() + data_start + offsets[i];
        for (float f : entries_[i].tensor.data()) {
            put_f32(dst, f);
            dst += 4;
        }
    }
    return out;
}

TensorArchive TensorArchive::parse(std::span<const std::uint8_t> bytes) {
    const Header h = read_header(bytes);
    const ordered_json manifest = parse_manifest(bytes, h);
    const std::size_t data_size = bytes.size() >= h.data_start ? bytes.size() - h.data_start : 0;

    TensorArchive archive;
    std::size_t prev_end = 0;
    bool first = true;
    for (const auto& [name, entry] : manifest.items()) {
        if (name == kMetadataKey) {
            if (!entry.is_object()) throw FormatError(name, "metadata must be an object");
            for (const auto& [k, v] : entry.items()) {
                if (!v.is_string()) throw FormatError(name + "." + k, "metadata values must be strings");
                archive.metadata[k] = v.get<std::string>();
            }
            continue;
        }
        if (!entry.is_object()) throw FormatError(name, "entry must be an object");
        if (!entry.contains("dtype") || entry["dtype"] != "f32") throw FormatError(name + ".dtype", "only \"f32\" is supported");
        if (!entry.contains("shape") || !entry["shape"].is_array() || entry["shape"].empty())
            throw FormatError(name + ".shape", "missing or empty");
        Shape shape;
        for (const auto& d : entry["shape"]) {
            if (!d.is_number_unsigned() || d.get<std::uint64_t>() == 0) throw FormatError(name + ".shape", "extents must be positive integers");
            shape.push_back(d.get<std::size_t>());
        }
        const auto offset = require_uint(entry, name, "offset");
        const auto byte_len = require_uint(entry, name, "byte_len");
        if (byte_len != shape_numel(shape) * sizeof(float))
            throw FormatError(name + ".byte_len", std::to_string(byte_len) + " does not match shape " + shape_str(shape));
        if (offset % kAlignment != 0) throw FormatError(name + ".offset", "not 64-byte aligned");
        if (!first && offset < prev_end) throw FormatError(name + ".offset", "overlaps or precedes the previous tensor");
        if (offset > data_size || byte_len > data_size - offset)
            throw FormatError(name + ".offset", "payload extends past end of file (truncated?)");
        first = false;
        prev_end = offset + byte_len;

        std::vector<float> data(shape_numel(shape));
        const std::uint8_t* src = bytes.data() + h.data_start + offset;
        for (auto& f : data) {
            f = get_f32(src);
            src += 4;
        }
        archive.add(name, Tensor<float>(std::move(shape), std::move(data)));
    }
    return archive;
}

void save_archive(const TensorArchive& archive, const std::filesystem::path& path) {
    const auto bytes = archive.serialize();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

namespace {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TensorArchive load_archive(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    return TensorArchive::parse(bytes);
}

void add_store(TensorArchive& archive, const ParamStore<float>& store, const std::string& prefix) {
    for (const auto& [name, p] : store) archive.add(prefix + name, p.value);
}

std::string manifest_json(std::span<const std::uint8_t> bytes, int indent) {
    const Header h = read_header(bytes);
    TensorArchive::parse(bytes);
    return parse_manifest(bytes, h).dump(indent);
}

}  // namespace pifi::ckpt
