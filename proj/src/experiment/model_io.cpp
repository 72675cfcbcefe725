#include "pifi/experiment/model_io.hpp"

#include "pifi/errors.hpp"
#include "pifi/experiment/spec.hpp"

namespace pifi::experiment {

using nlohmann::json;

namespace {

constexpr const char* kModelKey = "pifi.model";

std::string kind_name(model::ModelKind k) { return k == model::ModelKind::slm ? "slm" : "donor_only"; }

}  // namespace

json block_to_json(const nn::BlockConfig& b) {
    const auto& a = b.attention;
    return {{"style", nn::to_string(b.style)},
            {"d_model", a.d_model},
            {"n_heads", a.n_heads},
            {"n_kv_heads", a.n_kv_heads},
            {"head_dim", a.head_dim},
            {"causal", a.causal},
            {"rope", a.rope},
            {"rope_theta", a.rope_theta},
            {"qkv_bias", a.qkv_bias},
            {"o_bias", a.o_bias},
            {"d_ffn", b.d_ffn},
            {"dropout", b.dropout},
            {"eps", b.eps},
            {"extra_norms", b.extra_norms},
            {"gate_activation", b.gate_activation == nn::Activation::silu ? "silu" : "gelu"}};
}

nn::BlockConfig block_from_json(const json& j) {
    try {
        nn::BlockConfig b;
        b.style = nn::block_style_from_string(j.at("style").get<std::string>());
        b.attention.d_model = j.at("d_model").get<std::size_t>();
        b.attention.n_heads = j.at("n_heads").get<std::size_t>();
        b.attention.n_kv_heads = j.at("n_kv_heads").get<std::size_t>();
        b.attention.head_dim = j.at("head_dim").get<std::size_t>();
        b.attention.causal = j.at("causal").get<bool>();
        b.attention.rope = j.at("rope").get<bool>();
        b.attention.rope_theta = j.at("rope_theta").get<double>();
        b.attention.qkv_bias = j.at("qkv_bias").get<bool>();
        b.attention.o_bias = j.at("o_bias").get<bool>();
        b.d_ffn = j.at("d_ffn").get<std::size_t>();
        b.dropout = j.at("dropout").get<double>();
        b.eps = j.at("eps").get<double>();
        b.extra_norms = j.at("extra_norms").get<std::size_t>();
        b.gate_activation = j.at("gate_activation").get<std::string>() == "silu" ? nn::Activation::silu : nn::Activation::gelu;
        return b;
    } catch (const json::exception& e) {
        throw FormatError("block", e.what());
    }
}

ckpt::TensorArchive model_to_archive(const SavedModel& saved) {
    const auto& m = saved.model;
    ckpt::TensorArchive a;
    for (const auto& [name, p] : m.flatten()) a.add(name, p.value);
    json cfg;
    cfg["kind"] = kind_name(m.kind);
    cfg["slm"] = slm_to_json(m.slm_cfg);
    cfg["donor_block"] = m.cfg.vanilla() ? json(nullptr) : block_to_json(m.cfg.donor_block);
    cfg["donor_layer_indices"] = m.cfg.donor_layer_indices;
    cfg["pooling"] = model::to_string(m.cfg.pooling);
    cfg["donor_trainable"] = m.cfg.freeze_policy == model::FreezePolicy::donor_trainable;
    cfg["donor_random"] = m.cfg.donor_init == model::DonorInit::random;
    cfg["n_classes"] = m.cfg.n_classes;
    cfg["task"] = saved.task;
    cfg["label_names"] = saved.label_names;
    a.metadata[kModelKey] = cfg.dump();
    return a;
}

SavedModel model_from_archive(const ckpt::TensorArchive& archive) {
    const auto it = archive.metadata.find(kModelKey);
    if (it == archive.metadata.end()) throw FormatError(std::string("__metadata__.") + kModelKey, "not a saved model archive");
    json cfg;
    try {
        cfg = json::parse(it->second);
    } catch (const json::parse_error& e) {
        throw FormatError(std::string("__metadata__.") + kModelKey, e.what());
    }
    SavedModel out;
    try {
        out.task = cfg.at("task").get<std::string>();
        out.label_names = cfg.at("label_names").get<std::vector<std::string>>();
        const auto slm = slm_from_json(cfg.at("slm"), model::SlmConfig{});
        model::PiFiConfig p;
        p.donor_layer_indices = cfg.at("donor_layer_indices").get<std::vector<std::size_t>>();
        if (!cfg.at("donor_block").is_null()) p.donor_block = block_from_json(cfg.at("donor_block"));
        p.pooling = model::pooling_from_string(cfg.at("pooling").get<std::string>());
        p.freeze_policy = cfg.at("donor_trainable").get<bool>() ? model::FreezePolicy::donor_trainable
                                                                : model::FreezePolicy::donor_frozen;
        p.donor_init = cfg.at("donor_random").get<bool>() ? model::DonorInit::random : model::DonorInit::from_archive;
        p.n_classes = cfg.at("n_classes").get<std::size_t>();

        if (cfg.at("kind").get<std::string>() == "donor_only") {
            // Rebuild the structure from the stored tensors, then restore the
            // recorded layer index.
            ckpt::TensorArchive donor;
            donor.add("embed.tok", archive.at("donor.embed.tok"));
            for (const auto& e : archive.entries())
                if (e.name.starts_with("donor.0.")) donor.add("layers.0." + e.name.substr(8), e.tensor);
            out.model = model::build_donor_only_classifier(donor, p.donor_block, model::DonorLayerPick::first,
                                                           p.n_classes, 0);
            out.model.cfg.donor_layer_indices = p.donor_layer_indices;
        } else {
            // Random init gives the right structure without a donor archive;
            // the stored tensors then overwrite every value.
            auto structural = p;
            structural.donor_init = model::DonorInit::random;
            out.model = model::build_pifi(slm, structural, nullptr, 0);
            out.model.cfg = p;
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("__metadata__.") + kModelKey, e.what());
    }
    ParamStore<float> flat;
    for (const auto& np : out.model.named_params()) {
        if (!archive.contains(np.name)) throw FormatError(np.name, "missing from the model archive");
        flat.add(np.name, archive.at(np.name), np.param->trainable);
    }
    out.model.load_flat(flat);
    return out;
}

void save_model(const SavedModel& saved, const std::filesystem::path& path) { ckpt::save_archive(model_to_archive(saved), path); }

SavedModel load_model(const std::filesystem::path& path) { return model_from_archive(ckpt::load_archive(path)); }

}  // namespace pifi::experiment
