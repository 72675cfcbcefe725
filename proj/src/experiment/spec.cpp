#include "pifi/experiment/spec.hpp"

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "pifi/autograd/rng.hpp"
#include "pifi/checkpoint/extract.hpp"
#include "pifi/data/synthetic.hpp"
#include "pifi/errors.hpp"
#include "pifi/model/donor_lm.hpp"

namespace pifi::experiment {

using nlohmann::json;

namespace {

template <typename E, std::size_t N>
E parse_enum(const std::string& s, const std::array<std::pair<E, const char*>, N>& table, const char* what) {
    for (const auto& [e, name] : table)
        if (s == name) return e;
    std::string known;
    for (const auto& [e, name] : table) known += (known.empty() ? "" : ", ") + std::string(name);
    throw ConfigError("unknown " + std::string(what) + " '" + s + "' (known: " + known + ")");
}

template <typename E, std::size_t N>
std::string enum_name(E v, const std::array<std::pair<E, const char*>, N>& table) {
    for (const auto& [e, name] : table)
        if (e == v) return name;
    throw ContractError("unnamed enum value");
}

constexpr std::array<std::pair<Variant, const char*>, 7> kVariants{{
    {Variant::vanilla, "vanilla"},
    {Variant::pifi, "pifi"},
    {Variant::pifi_random, "pifi_random"},
    {Variant::pifi_random_full, "pifi_random_full"},
    {Variant::pifi_full, "pifi_full"},
    {Variant::donor_only_first, "donor_only_first"},
    {Variant::donor_only_last, "donor_only_last"},
}};

constexpr std::array<std::pair<Task, const char*>, 5> kTasks{{
    {Task::sentiment, "sentiment"},
    {Task::acceptability, "acceptability"},
    {Task::copy, "copy"},
    {Task::reverse, "reverse"},
    {Task::cipher, "cipher"},
}};

constexpr std::array<std::pair<SweepAxis, const char*>, 6> kAxes{{
    {SweepAxis::none, "none"},
    {SweepAxis::layer_position, "layer_position"},
    {SweepAxis::pooling, "pooling"},
    {SweepAxis::donor_size, "donor_size"},
    {SweepAxis::n_layers, "n_layers"},
    {SweepAxis::data_fraction, "data_fraction"},
}};

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
    for (const auto& [k, v] : j.items()) {
        if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return k == a; }))
            throw ConfigError("unknown key '" + k + "' in " + where);
    }
}

template <typename T>
T get_or(const json& j, const char* key, T fallback, const std::string& where) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(where + "." + key + ": " + e.what());
    }
}

std::string domain_string(char d) { return std::string(1, d); }

char domain_char(const std::string& s) {
    if (s.size() != 1) throw ConfigError("domain must be one letter, got '" + s + "'");
    data::domain(s[0]);  // validates
    return s[0];
}

std::uint64_t derive(std::uint64_t seed, std::string_view purpose) { return splitmix64(seed) ^ fnv1a64(purpose); }

std::map<std::string, std::string> archive_metadata(const std::string& path) {
    return ckpt::load_archive(path).metadata;
}

std::size_t archive_layers(const std::string& path) {
    if (!std::filesystem::exists(path)) throw ConfigError("experiment: donor archive not found: " + path);
    return ckpt::archive_layer_count(ckpt::load_archive(path));
}

std::string sweep_value_text(const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

}  // namespace

std::string to_string(Variant v) { return enum_name(v, kVariants); }
Variant variant_from_string(const std::string& s) { return parse_enum(s, kVariants, "variant"); }
bool needs_archive(Variant v) {
    return v == Variant::pifi || v == Variant::pifi_full || v == Variant::donor_only_first ||
           v == Variant::donor_only_last;
}
bool is_donor_only(Variant v) { return v == Variant::donor_only_first || v == Variant::donor_only_last; }

std::string to_string(Task t) { return enum_name(t, kTasks); }
Task task_from_string(const std::string& s) { return parse_enum(s, kTasks, "task"); }
bool is_generation(Task t) { return t == Task::copy || t == Task::reverse || t == Task::cipher; }

std::string to_string(SweepAxis a) { return enum_name(a, kAxes); }
SweepAxis sweep_axis_from_string(const std::string& s) { return parse_enum(s, kAxes, "sweep axis"); }

json slm_to_json(const model::SlmConfig& c) {
    return {{"family", model::to_string(c.family)},
            {"d_model", c.d_model},
            {"n_layers", c.n_layers},
            {"n_dec_layers", c.n_dec_layers},
            {"n_heads", c.n_heads},
            {"d_ffn", c.d_ffn},
            {"max_positions", c.max_positions},
            {"n_segments", c.n_segments},
            {"dropout", c.dropout},
            {"eps", c.eps},
            {"init_sigma", c.init_sigma},
            {"pooler", c.pooler},
            {"vocab_size", c.vocab_size}};
}

model::SlmConfig slm_from_json(const json& j, model::SlmConfig c) {
    const std::string w = "slm";
    check_keys(j, {"family", "d_model", "n_layers", "n_dec_layers", "n_heads", "d_ffn", "max_positions", "n_segments",
                   "dropout", "eps", "init_sigma", "pooler", "vocab_size"},
               w);
    if (j.contains("family")) {
        // A family change resets the family-dependent defaults.
        const auto family = model::slm_family_from_string(get_or<std::string>(j, "family", "", w));
        if (family != c.family) {
            const auto fresh = model::desk_slm(family, c.vocab_size);
            c.family = family;
            c.n_dec_layers = fresh.n_dec_layers;
            c.n_segments = fresh.n_segments;
        }
    }
    c.d_model = get_or(j, "d_model", c.d_model, w);
    c.n_layers = get_or(j, "n_layers", c.n_layers, w);
    c.n_dec_layers = get_or(j, "n_dec_layers", c.n_dec_layers, w);
    c.n_heads = get_or(j, "n_heads", c.n_heads, w);
    c.d_ffn = get_or(j, "d_ffn", c.d_ffn, w);
    c.max_positions = get_or(j, "max_positions", c.max_positions, w);
    c.n_segments = get_or(j, "n_segments", c.n_segments, w);
    c.dropout = get_or(j, "dropout", c.dropout, w);
    c.eps = get_or(j, "eps", c.eps, w);
    c.init_sigma = get_or(j, "init_sigma", c.init_sigma, w);
    c.pooler = get_or(j, "pooler", c.pooler, w);
    c.vocab_size = get_or(j, "vocab_size", c.vocab_size, w);
    return c;
}

json train_to_json(const train::TrainConfig& c) {
    return {{"lr", c.lr},
            {"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"beta1", c.beta1},
            {"beta2", c.beta2},
            {"adam_eps", c.adam_eps},
            {"grad_clip", c.grad_clip ? json(*c.grad_clip) : json(nullptr)},
            {"eval_every", c.eval_every},
            {"max_steps", c.max_steps},
            {"max_len", c.max_len},
            {"bucket_by_length", c.bucket_by_length}};
}

train::TrainConfig train_from_json(const json& j, train::TrainConfig c) {
    const std::string w = "train";
    check_keys(j, {"lr", "epochs", "batch_size", "beta1", "beta2", "adam_eps", "grad_clip", "eval_every", "max_steps",
                   "max_len", "bucket_by_length"},
               w);
    c.lr = get_or(j, "lr", c.lr, w);
    c.epochs = get_or(j, "epochs", c.epochs, w);
    c.batch_size = get_or(j, "batch_size", c.batch_size, w);
    c.beta1 = get_or(j, "beta1", c.beta1, w);
    c.beta2 = get_or(j, "beta2", c.beta2, w);
    c.adam_eps = get_or(j, "adam_eps", c.adam_eps, w);
    if (j.contains("grad_clip"))
        c.grad_clip = j.at("grad_clip").is_null() ? std::nullopt : std::optional<double>(get_or(j, "grad_clip", 0.0, w));
    c.eval_every = get_or(j, "eval_every", c.eval_every, w);
    c.max_steps = get_or(j, "max_steps", c.max_steps, w);
    c.max_len = get_or(j, "max_len", c.max_len, w);
    c.bucket_by_length = get_or(j, "bucket_by_length", c.bucket_by_length, w);
    return c;
}

ExperimentSpec ExperimentSpec::desk(Task task) {
    ExperimentSpec s;
    s.task = task;
    const auto family = is_generation(task) ? model::SlmFamily::encoder_decoder : model::SlmFamily::encoder;
    s.slm = model::desk_slm(family, data::synthetic_vocab().size());
    s.pooling = family == model::SlmFamily::encoder ? model::Pooling::cls : model::Pooling::mean_nonpad;
    if (is_generation(task)) {
        s.n_train = 8000;
        s.n_test = 300;
    }
    return s;
}

ExperimentSpec ExperimentSpec::from_json(const json& j) {
    const std::string w = "experiment config";
    check_keys(j, {"name", "task", "train_domain", "eval_domains", "n_train", "n_test", "data_fraction", "variants",
                   "seeds", "slm", "donor", "pooling", "train", "eval_each_epoch", "sweep", "contrasts"},
               w);
    ExperimentSpec s = desk(task_from_string(get_or<std::string>(j, "task", "sentiment", w)));
    s.name = get_or(j, "name", s.name, w);
    s.train_domain = domain_char(get_or<std::string>(j, "train_domain", "A", w));
    if (j.contains("eval_domains"))
        for (const auto& d : get_or<std::vector<std::string>>(j, "eval_domains", {}, w)) s.eval_domains.push_back(domain_char(d));
    s.n_train = get_or(j, "n_train", s.n_train, w);
    s.n_test = get_or(j, "n_test", s.n_test, w);
    s.data_fraction = get_or(j, "data_fraction", s.data_fraction, w);
    if (j.contains("variants")) {
        s.variants.clear();
        for (const auto& v : get_or<std::vector<std::string>>(j, "variants", {}, w)) s.variants.push_back(variant_from_string(v));
    }
    s.seeds = get_or(j, "seeds", s.seeds, w);
    if (j.contains("slm")) s.slm = slm_from_json(j.at("slm"), s.slm);
    s.slm.vocab_size = data::synthetic_vocab().size();
    if (j.contains("slm") && j.at("slm").contains("family") && !j.contains("pooling"))
        s.pooling = s.slm.family == model::SlmFamily::encoder        ? model::Pooling::cls
                    : s.slm.family == model::SlmFamily::decoder_only ? model::Pooling::last_nonpad
                                                                      : model::Pooling::mean_nonpad;
    if (j.contains("donor")) {
        const auto& d = j.at("donor");
        check_keys(d, {"archive", "preset", "layers"}, "donor");
        s.donor_archive = get_or(d, "archive", s.donor_archive, "donor");
        s.donor_preset = get_or(d, "preset", s.donor_preset, "donor");
        s.donor_layers = get_or(d, "layers", s.donor_layers, "donor");
    }
    if (j.contains("pooling")) s.pooling = model::pooling_from_string(get_or<std::string>(j, "pooling", "", w));
    if (j.contains("train")) s.train = train_from_json(j.at("train"), s.train);
    s.eval_each_epoch = get_or(j, "eval_each_epoch", s.eval_each_epoch, w);
    if (j.contains("sweep")) {
        const auto& sw = j.at("sweep");
        check_keys(sw, {"axis", "values"}, "sweep");
        s.sweep = sweep_axis_from_string(get_or<std::string>(sw, "axis", "none", "sweep"));
        s.sweep_values = sw.contains("values") ? sw.at("values") : json::array();
    }
    if (j.contains("contrasts")) {
        for (const auto& c : j.at("contrasts")) {
            if (!c.is_array() || c.size() != 2 || !c[0].is_string() || !c[1].is_string())
                throw ConfigError("each contrast must be a pair of cell labels");
            s.contrasts.emplace_back(c[0].get<std::string>(), c[1].get<std::string>());
        }
    }
    return s;
}

json ExperimentSpec::to_json() const {
    json j;
    j["name"] = name;
    j["task"] = experiment::to_string(task);
    j["train_domain"] = domain_string(train_domain);
    json domains = json::array();
    for (char d : eval_domains) domains.push_back(domain_string(d));
    j["eval_domains"] = domains;
    j["n_train"] = n_train;
    j["n_test"] = n_test;
    j["data_fraction"] = data_fraction;
    json vs = json::array();
    for (auto v : variants) vs.push_back(experiment::to_string(v));
    j["variants"] = vs;
    j["seeds"] = seeds;
    j["slm"] = slm_to_json(slm);
    j["donor"] = {{"archive", donor_archive}, {"preset", donor_preset}, {"layers", donor_layers}};
    j["pooling"] = model::to_string(pooling);
    j["train"] = train_to_json(train);
    j["eval_each_epoch"] = eval_each_epoch;
    j["sweep"] = {{"axis", experiment::to_string(sweep)}, {"values", sweep_values}};
    json cs = json::array();
    for (const auto& [a, b] : contrasts) cs.push_back({a, b});
    j["contrasts"] = cs;
    return j;
}

std::string ExperimentSpec::hash() const {
    std::ostringstream out;
    out << std::hex;
    out.width(16);
    out.fill('0');
    out << fnv1a64(to_json().dump());
    return out.str();
}

void ExperimentSpec::validate() const {
    if (seeds.empty()) throw ConfigError("experiment: seeds must be non-empty");
    if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
        throw ConfigError("experiment: seeds must be distinct");
    if (variants.empty()) throw ConfigError("experiment: variants must be non-empty");
    if (std::set<Variant>(variants.begin(), variants.end()).size() != variants.size())
        throw ConfigError("experiment: variants must be distinct");
    if (n_train == 0 || n_test == 0) throw ConfigError("experiment: n_train and n_test must be positive");
    if (!(data_fraction > 0.0 && data_fraction <= 1.0)) throw ConfigError("experiment: data_fraction must lie in (0, 1]");
    train.validate();
    if (slm.vocab_size != data::synthetic_vocab().size())
        throw ConfigError("experiment: slm.vocab_size must equal the synthetic vocabulary size (" +
                          std::to_string(data::synthetic_vocab().size()) + ")");
    slm.validate();
    if (task != Task::sentiment && !eval_domains.empty())
        throw ConfigError("experiment: eval_domains apply to the sentiment task only");
    if (is_generation(task) && slm.family != model::SlmFamily::encoder_decoder)
        throw ConfigError("experiment: task " + experiment::to_string(task) + " needs an encoder_decoder SLM");
    for (auto v : variants) {
        if (is_donor_only(v) && is_generation(task))
            throw ConfigError("experiment: " + experiment::to_string(v) + " is a classifier and cannot run " +
                              experiment::to_string(task));
        if (needs_archive(v) && donor_archive.empty() && sweep != SweepAxis::donor_size)
            throw ConfigError("experiment: variant " + experiment::to_string(v) + " needs donor.archive");
    }
    if (sweep == SweepAxis::none && !sweep_values.empty())
        throw ConfigError("experiment: sweep values given without a sweep axis");
    if (sweep != SweepAxis::none && (!sweep_values.is_array() || sweep_values.empty()))
        throw ConfigError("experiment: sweep " + experiment::to_string(sweep) + " needs a non-empty values array");

    // Build every cell's configuration now so incompatibilities surface
    // before any training starts.
    const auto cells = expand_cells(*this);
    std::set<std::string> labels;
    for (const auto& c : cells) {
        if (!labels.insert(c.label).second) throw ConfigError("experiment: duplicate cell " + c.label);
        if (!c.donor_archive.empty() && !std::filesystem::exists(c.donor_archive))
            throw ConfigError("experiment: donor archive not found: " + c.donor_archive);
        if (!(c.data_fraction > 0.0 && c.data_fraction <= 1.0))
            throw ConfigError("experiment: data_fraction must lie in (0, 1]");
        if (c.variant == Variant::vanilla || is_donor_only(c.variant)) continue;
        model::PiFiConfig p;
        p.donor_block = cell_donor_block(*this, c);
        p.donor_layer_indices = c.donor_layers;
        p.pooling = c.pooling;
        p.n_classes = 2;
        p.validate(slm);
        if (needs_archive(c.variant)) {
            const std::size_t count = archive_layers(c.donor_archive);
            for (auto i : c.donor_layers)
                if (i > count)
                    throw ConfigError("experiment: donor layer " + std::to_string(i) + " outside [1, " +
                                      std::to_string(count) + "] of " + c.donor_archive);
        }
    }
    if (!is_generation(task)) {
        for (const auto& c : cells) {
            if (c.variant == Variant::vanilla) {
                model::PiFiConfig p;
                p.pooling = c.pooling;
                p.validate(slm);
            }
        }
    }
    for (const auto& [a, b] : contrasts)
        if (!labels.count(a) || !labels.count(b)) throw ConfigError("experiment: contrast names unknown cell " + (labels.count(a) ? b : a));
}

json Cell::to_json() const {
    return {{"label", label},
            {"variant", experiment::to_string(variant)},
            {"donor_archive", donor_archive},
            {"donor_layers", donor_layers},
            {"pooling", model::to_string(pooling)},
            {"data_fraction", data_fraction},
            {"sweep_value", sweep_value}};
}

std::vector<Cell> expand_cells(const ExperimentSpec& spec) {
    std::vector<json> values{json(nullptr)};
    if (spec.sweep != SweepAxis::none) values.assign(spec.sweep_values.begin(), spec.sweep_values.end());
    std::vector<Cell> out;
    for (auto v : spec.variants) {
        for (const auto& value : values) {
            Cell c;
            c.variant = v;
            c.label = experiment::to_string(v);
            c.pooling = spec.pooling;
            c.data_fraction = spec.data_fraction;
            c.sweep_value = value;
            if (spec.sweep != SweepAxis::none) c.label += "@" + experiment::to_string(spec.sweep) + "=" + sweep_value_text(value);
            std::string archive = spec.donor_archive;
            std::vector<std::size_t> layers = spec.donor_layers;
            try {
                switch (spec.sweep) {
                    case SweepAxis::none: break;
                    case SweepAxis::layer_position:
                        layers = value.is_array() ? value.get<std::vector<std::size_t>>()
                                                  : std::vector<std::size_t>{value.get<std::size_t>()};
                        break;
                    case SweepAxis::pooling: c.pooling = model::pooling_from_string(value.get<std::string>()); break;
                    case SweepAxis::donor_size: archive = value.get<std::string>(); break;
                    case SweepAxis::n_layers: {
                        const auto k = value.get<std::size_t>();
                        if (k == 0) throw ConfigError("experiment: n_layers sweep values must be positive");
                        const std::size_t count = archive.empty() ? k : archive_layers(archive);
                        if (k > count)
                            throw ConfigError("experiment: cannot insert " + std::to_string(k) + " of " +
                                              std::to_string(count) + " donor layers");
                        layers.clear();
                        for (std::size_t i = count - k + 1; i <= count; ++i) layers.push_back(i);
                        break;
                    }
                    case SweepAxis::data_fraction: c.data_fraction = value.get<double>(); break;
                }
            } catch (const json::exception& e) {
                throw ConfigError("experiment: bad " + experiment::to_string(spec.sweep) + " sweep value " +
                                  value.dump() + ": " + e.what());
            }
            if (v == Variant::vanilla) {
                layers.clear();
                archive.clear();
            } else if (is_donor_only(v)) {
                layers.clear();
            } else if (layers.empty()) {
                // Default: the donor's last layer.
                layers = {archive.empty() ? std::size_t{1} : archive_layers(archive)};
            }
            c.donor_archive = archive;
            c.donor_layers = layers;
            out.push_back(std::move(c));
        }
    }
    return out;
}

nn::BlockConfig cell_donor_block(const ExperimentSpec& spec, const Cell& cell) {
    if (!cell.donor_archive.empty()) {
        auto block = model::DonorLmConfig::from_metadata(archive_metadata(cell.donor_archive)).block;
        block.dropout = 0.0;
        return block;
    }
    auto block = nn::shape_preset(spec.donor_preset).block();
    block.attention.causal = true;
    block.attention.rope = true;
    return block;
}

TaskData make_task_data(const ExperimentSpec& spec, const Cell& cell, std::uint64_t seed) {
    TaskData d;
    const std::uint64_t train_seed = derive(seed, "data/train");
    const std::uint64_t test_seed = derive(seed, "data/test");
    const std::uint64_t sub_seed = derive(seed, "data/subsample");
    switch (spec.task) {
        case Task::sentiment: {
            d.train = data::gen_sentiment(data::domain(spec.train_domain), spec.n_train, train_seed);
            auto domains = spec.eval_domains;
            if (domains.empty()) domains.push_back(spec.train_domain);
            for (char dom : domains)
                d.eval.emplace_back(domain_string(dom), data::gen_sentiment(data::domain(dom), spec.n_test, test_seed));
            break;
        }
        case Task::acceptability:
            d.train = data::gen_acceptability(spec.n_train, train_seed);
            d.eval.emplace_back("acceptability", data::gen_acceptability(spec.n_test, test_seed));
            break;
        case Task::copy:
        case Task::reverse:
        case Task::cipher: {
            const auto kind = data::seq2seq_kind_from_string(experiment::to_string(spec.task));
            d.train_s2s = data::gen_seq2seq(kind, spec.n_train, train_seed);
            d.eval_s2s.emplace_back(experiment::to_string(spec.task), data::gen_seq2seq(kind, spec.n_test, test_seed));
            break;
        }
    }
    if (cell.data_fraction < 1.0) {
        if (is_generation(spec.task))
            d.train_s2s = data::subsample(d.train_s2s, cell.data_fraction, sub_seed);
        else
            d.train = data::subsample(d.train, cell.data_fraction, sub_seed);
    }
    return d;
}

model::PiFiModel<float> build_cell_model(const ExperimentSpec& spec, const Cell& cell, std::uint64_t seed,
                                         std::size_t n_classes) {
    const std::uint64_t init_seed = derive(seed, "model/init");
    if (is_donor_only(cell.variant)) {
        const auto archive = ckpt::load_archive(cell.donor_archive);
        const auto pick = cell.variant == Variant::donor_only_first ? model::DonorLayerPick::first
                                                                    : model::DonorLayerPick::last;
        return model::build_donor_only_classifier(archive, cell_donor_block(spec, cell), pick, n_classes, init_seed);
    }
    model::PiFiConfig p;
    p.pooling = cell.pooling;
    p.n_classes = n_classes;
    if (cell.variant == Variant::vanilla) return model::build_pifi(spec.slm, p, nullptr, init_seed);
    p.donor_block = cell_donor_block(spec, cell);
    p.donor_layer_indices = cell.donor_layers;
    const bool random = cell.variant == Variant::pifi_random || cell.variant == Variant::pifi_random_full;
    const bool full = cell.variant == Variant::pifi_full || cell.variant == Variant::pifi_random_full;
    p.donor_init = random ? model::DonorInit::random : model::DonorInit::from_archive;
    p.donor_seed = derive(seed, "model/donor");
    p.freeze_policy = full ? model::FreezePolicy::donor_trainable : model::FreezePolicy::donor_frozen;
    if (random) return model::build_pifi(spec.slm, p, nullptr, init_seed);
    const auto archive = ckpt::load_archive(cell.donor_archive);
    return model::build_pifi(spec.slm, p, &archive, init_seed);
}

json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
    }
}

}  // namespace pifi::experiment
