#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "pifi/autograd/rng.hpp"
#include "pifi/checkpoint/archive.hpp"
#include "pifi/checkpoint/extract.hpp"
#include "pifi/checkpoint/freeze.hpp"
#include "pifi/checkpoint/init.hpp"
#include "pifi/errors.hpp"
#include "pifi/nn/config.hpp"

using namespace pifi;
using namespace pifi::ckpt;

namespace {

Tensor<float> random_tensor(Rng& rng, Shape shape) {
    std::vector<float> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<float>(rng.normal());
    return Tensor<float>(std::move(shape), std::move(v));
}

// Random archive with awkward shapes, so payload lengths are rarely multiples of 64.
TensorArchive random_archive(Rng& rng, std::size_t n) {
    TensorArchive a;
    for (std::size_t i = 0; i < n; ++i) {
        Shape s;
        const auto rank = rng.between(1, 3);
        for (int r = 0; r < rank; ++r) s.push_back(static_cast<std::size_t>(rng.between(1, 7)));
        a.add("t" + std::to_string(i) + ".w", random_tensor(rng, s));
    }
    return a;
}

// A fake donor with L layers of a tiny gated block plus embeddings.
TensorArchive donor_archive(std::size_t layers) {
    Rng rng(7);
    TensorArchive a;
    a.add("embed.tok", random_tensor(rng, {10, 8}));
    for (std::size_t i = 0; i < layers; ++i) {
        a.add("layers." + std::to_string(i) + ".norm1.gain", random_tensor(rng, {8}));
        a.add("layers." + std::to_string(i) + ".attn.q.weight", random_tensor(rng, {8, 8}));
        a.add("layers." + std::to_string(i) + ".ffn.down.weight", random_tensor(rng, {12, 8}));
    }
    a.add("final_norm.gain", random_tensor(rng, {8}));
    a.metadata["style"] = "donor_pre_rmsnorm_gated";
    return a;
}

std::filesystem::path temp_file(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("pifi_test_" + name);
}

void put_u64(std::vector<std::uint8_t>& b, std::size_t at, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) b[at + i] = static_cast<std::uint8_t>(v >> (8 * i));
}

std::string manifest_text(const std::vector<std::uint8_t>& bytes) {
    std::uint64_t len = 0;
    for (int i = 0; i < 8; ++i) len |= std::uint64_t(bytes[8 + i]) << (8 * i);
    return std::string(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(len));
}

// Replaces the manifest in place with text of the same length.
void patch_manifest(std::vector<std::uint8_t>& bytes, const std::string& from, const std::string& to) {
    REQUIRE(from.size() == to.size());
    std::string text = manifest_text(bytes);
    const auto at = text.find(from);
    REQUIRE(at != std::string::npos);
    text.replace(at, from.size(), to);
    std::memcpy(bytes.data() + 16, text.data(), text.size());
}

std::string format_field(const std::vector<std::uint8_t>& bytes) {
    try {
        TensorArchive::parse(bytes);
    } catch (const FormatError& e) {
        return e.field();
    }
    return "<no error>";
}

}  // namespace

TEST_CASE("archive header layout") {
    Rng rng(1);
    TensorArchive a;
    a.add("x", random_tensor(rng, {3}));
    const auto bytes = a.serialize();
    CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "PIFA");
    CHECK(bytes[4] == 1);
    CHECK(bytes[5] == 0);
    const auto manifest = manifest_text(bytes);
    CHECK(manifest == R"({"x":{"dtype":"f32","shape":[3],"offset":0,"byte_len":12}})");
    const std::size_t data_start = (16 + manifest.size() + 63) / 64 * 64;
    CHECK(bytes.size() == data_start + 12);
    for (std::size_t i = 16 + manifest.size(); i < data_start; ++i) CHECK(bytes[i] == 0);
    float first = 0;
    std::memcpy(&first, bytes.data() + data_start, 4);
    CHECK(first == a.at("x")[0]);
}

TEST_CASE("round trip is bit-identical for random tensor sets") {
    Rng rng(2);
    for (int trial = 0; trial < 25; ++trial) {
        auto a = random_archive(rng, static_cast<std::size_t>(rng.between(0, 6)));
        if (trial % 3 == 0) a.metadata["k" + std::to_string(trial)] = "v";
        const auto bytes = a.serialize();
        const auto b = TensorArchive::parse(bytes);
        CHECK(a == b);
        CHECK(b.serialize() == bytes);
    }
}

TEST_CASE("special float values survive the round trip") {
    TensorArchive a;
    a.add("s", Tensor<float>({4}, {-0.0f, INFINITY, -INFINITY, 1e-45f}));
    a.add("n", Tensor<float>({1}, {NAN}));
    const auto b = TensorArchive::parse(a.serialize());
    CHECK(std::signbit(b.at("s")[0]));
    CHECK(std::isinf(b.at("s")[1]));
    CHECK(b.at("s")[3] == 1e-45f);
    CHECK(std::isnan(b.at("n")[0]));
}

TEST_CASE("empty archive is valid and round-trips through a file") {
    const auto path = temp_file("empty.pifa");
    save_archive(TensorArchive{}, path);
    const auto b = load_archive(path);
    CHECK(b.size() == 0);
    CHECK(b.serialize() == TensorArchive{}.serialize());
    std::filesystem::remove(path);
}

TEST_CASE("archive rejects duplicate and reserved names") {
    TensorArchive a;
    a.add("x", Tensor<float>({1}));
    CHECK_THROWS_AS(a.add("x", Tensor<float>({1})), ConfigError);
    CHECK_THROWS_AS(a.add("__metadata__", Tensor<float>({1})), ConfigError);
}

TEST_CASE("corrupt archives raise format errors naming the field") {
    Rng rng(3);
    TensorArchive a;
    a.add("alpha", random_tensor(rng, {5, 3}));
    a.add("beta", random_tensor(rng, {7}));
    const auto good = a.serialize();

    SUBCASE("bad magic") {
        auto b = good;
        b[0] = 'X';
        CHECK(format_field(b) == "magic");
    }
    SUBCASE("future version") {
        auto b = good;
        b[4] = 2;
        CHECK(format_field(b) == "version");
    }
    SUBCASE("short header") {
        CHECK(format_field(std::vector<std::uint8_t>(good.begin(), good.begin() + 10)) == "header");
    }
    SUBCASE("manifest longer than file") {
        auto b = good;
        put_u64(b, 8, 1u << 30);
        CHECK(format_field(b) == "manifest_len");
    }
    SUBCASE("truncated payload") {
        auto b = good;
        b.resize(b.size() - 4);
        CHECK(format_field(b) == "beta.offset");
    }
    SUBCASE("overlapping offsets") {
        auto b = good;
        patch_manifest(b, R"("offset":64)", R"("offset": 0)");
        CHECK(format_field(b) == "beta.offset");
    }
    SUBCASE("misaligned offset") {
        auto b = good;
        patch_manifest(b, R"("offset":64)", R"("offset":65)");
        CHECK(format_field(b) == "beta.offset");
    }
    SUBCASE("shape disagrees with byte_len") {
        auto b = good;
        patch_manifest(b, R"("shape":[5,3])", R"("shape":[5,4])");
        CHECK(format_field(b) == "alpha.byte_len");
    }
    SUBCASE("unsupported dtype") {
        auto b = good;
        patch_manifest(b, R"("f32","shape":[7])", R"("f16","shape":[7])");
        CHECK(format_field(b) == "beta.dtype");
    }
    SUBCASE("broken JSON") {
        auto b = good;
        b[16] = '[';
        CHECK(format_field(b) == "manifest");
    }
}

TEST_CASE("inspect renders the manifest") {
    const auto bytes = donor_archive(2).serialize();
    const auto text = manifest_json(bytes);
    CHECK(text.find("\"__metadata__\"") != std::string::npos);
    CHECK(text.find("\"layers.1.ffn.down.weight\"") != std::string::npos);
}

TEST_CASE("layer extraction uses 1-based indices") {
    const auto a = donor_archive(4);
    CHECK(archive_layer_count(a) == 4);

    const auto last = extract_donor_layers(a, {4});
    REQUIRE(last.size() == 1);
    CHECK(last[0].size() == 3);
    CHECK(last[0].value("attn.q.weight") == a.at("layers.3.attn.q.weight"));
    CHECK(last[0].value("ffn.down.weight") == a.at("layers.3.ffn.down.weight"));

    const auto two = extract_donor_layers(a, {2, 1});
    CHECK(two[0].value("norm1.gain") == a.at("layers.1.norm1.gain"));
    CHECK(two[1].value("norm1.gain") == a.at("layers.0.norm1.gain"));

    const auto embed = extract_prefix(a, "embed.");
    CHECK(embed.value("tok") == a.at("embed.tok"));
}

TEST_CASE("out-of-range layer index reports the layer count") {
    const auto a = donor_archive(4);
    for (std::size_t bad : {std::size_t{0}, std::size_t{5}}) {
        try {
            extract_donor_layers(a, {1, bad});
            FAIL("expected ExtractionError");
        } catch (const ExtractionError& e) {
            CHECK(e.layer_count() == 4);
        }
    }
}

TEST_CASE("extraction leaves the archive file unchanged") {
    const auto path = temp_file("donor.pifa");
    save_archive(donor_archive(3), path);
    std::ifstream in(path, std::ios::binary);
    const std::vector<char> before{std::istreambuf_iterator<char>(in), {}};
    for (int i = 0; i < 3; ++i) extract_donor_layers(load_archive(path), {1, 2, 3});
    std::ifstream again(path, std::ios::binary);
    const std::vector<char> after{std::istreambuf_iterator<char>(again), {}};
    CHECK(before == after);
    std::filesystem::remove(path);
}

TEST_CASE("init is deterministic per seed and tensor name") {
    const auto cfg = nn::shape_preset("desk_donor").block();
    const auto layout = nn::block_layout(cfg);
    const auto a = init_params<float>(layout, 5);
    const auto b = init_params<float>(layout, 5);
    CHECK(a == b);
    CHECK_FALSE(a == init_params<float>(layout, 6));

    // A tensor's draw does not depend on its neighbours in the layout.
    const ParamLayout single = {layout[1]};
    CHECK(init_params<float>(single, 5).value(layout[1].name) == a.value(layout[1].name));

    for (const auto& spec : layout) {
        const auto& t = a.value(spec.name);
        for (float v : t.data()) {
            if (spec.role == ParamRole::gain) CHECK(v == 1.0f);
            if (spec.role == ParamRole::bias) CHECK(v == 0.0f);
            if (spec.role == ParamRole::weight) CHECK(std::abs(v) <= 0.04f);
        }
    }
}

TEST_CASE("init schemes") {
    const ParamLayout layout = {{"w", {3, 3}, ParamRole::weight}, {"b", {3}, ParamRole::bias}, {"g", {3}, ParamRole::gain}};
    const auto zeros = init_params<float>(layout, 1, InitScheme::zeros);
    for (const auto& [name, p] : zeros)
        for (float v : p.value.data()) CHECK(v == 0.0f);
    const auto ones = init_params<float>(layout, 1, InitScheme::ones_for_gains);
    for (float v : ones.value("w").data()) CHECK(v == 0.0f);
    for (float v : ones.value("g").data()) CHECK(v == 1.0f);
    CHECK(init_scheme_from_string("zeros") == InitScheme::zeros);
    CHECK_THROWS_AS(init_scheme_from_string("xavier"), ConfigError);
}

TEST_CASE("truncated-normal init matches its analytic moments") {
    const std::size_t n = 1'000'000;
    const double sigma = 0.02;
    const auto store = init_params<double>({{"w", {1000, 1000}, ParamRole::weight}}, 123);
    double mean = 0, sq = 0;
    for (double v : store.value("w").data()) {
        mean += v;
        sq += v * v;
    }
    mean /= n;
    const double var = sq / n - mean * mean;
    // N(0,1) truncated to [-2, 2]: variance 1 − 2·2·φ(2)/(Φ(2) − Φ(−2)).
    const double phi2 = std::exp(-2.0) / std::sqrt(2.0 * M_PI);
    const double mass = std::erf(2.0 / std::sqrt(2.0));
    const double trunc_var = sigma * sigma * (1.0 - 4.0 * phi2 / mass);
    CHECK(std::abs(mean) <= 3.0 * std::sqrt(trunc_var) / std::sqrt(double(n)));
    CHECK(var == doctest::Approx(trunc_var).epsilon(0.01));
}

TEST_CASE("freeze manifest: last match wins, unmatched globs warn") {
    ParamStore<float> store;
    for (const char* n : {"slm.embed.tok", "l_in.weight", "donor.0.attn.q.weight", "donor.0.norm1.gain", "head.out.weight"})
        store.add(n, Tensor<float>({2, 2}));
    std::vector<NamedParam<float>> named;
    for (auto& [name, p] : store) named.push_back({name, &p});

    auto s = apply_freeze(named, parse_freeze_manifest("donor.*=frozen"));
    CHECK(s.frozen_tensors == 2);
    CHECK(s.trainable_tensors == 3);
    CHECK(s.frozen + s.trainable == store.numel());
    CHECK_FALSE(store.at("donor.0.attn.q.weight").trainable);
    CHECK(store.at("l_in.weight").trainable);
    CHECK(s.warnings.empty());

    s = apply_freeze(named, parse_freeze_manifest("*=frozen, donor.*.norm1.*=trainable\nnothing.*=frozen"));
    CHECK(s.trainable_tensors == 1);
    CHECK(store.at("donor.0.norm1.gain").trainable);
    REQUIRE(s.warnings.size() == 1);
    CHECK(s.warnings[0].find("nothing.*") != std::string::npos);

    s = apply_freeze(named, {});
    CHECK(s.frozen == 0);
    CHECK(s.trainable == store.numel());

    CHECK_THROWS_AS(parse_freeze_manifest("donor.*"), ConfigError);
    CHECK_THROWS_AS(parse_freeze_manifest("donor.*=maybe"), ConfigError);
}
