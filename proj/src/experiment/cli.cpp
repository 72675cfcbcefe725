#include "pifi/experiment/cli.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "pifi/checkpoint/extract.hpp"
#include "pifi/data/synthetic.hpp"
#include "pifi/errors.hpp"
#include "pifi/experiment/gradcheck.hpp"
#include "pifi/experiment/model_io.hpp"
#include "pifi/experiment/pretrain.hpp"
#include "pifi/experiment/report.hpp"
#include "pifi/experiment/runner.hpp"
#include "pifi/experiment/spec.hpp"
#include "pifi/nn/config.hpp"

namespace pifi::experiment {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Globals {
    std::optional<std::uint64_t> seed;
    std::string config;
    std::string out;
};

std::string read_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + p.string());
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

void write_text(const fs::path& p, const std::string& text) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << text;
    out.flush();
    if (!out) throw std::runtime_error("cannot write " + p.string());
}

fs::path out_dir(const Globals& g, const std::string& fallback) { return g.out.empty() ? fs::path(fallback) : fs::path(g.out); }

std::string pct(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f%%", 100.0 * v);
    return buf;
}

std::string millions(std::uint64_t n) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", static_cast<double>(n) / 1e6);
    return buf;
}

// Metrics are fractions internally; the CLI shows them as percentages.
void print_metrics(std::ostream& out, const std::string& eval_set, const std::map<std::string, double>& metrics) {
    out << eval_set << ":";
    for (const auto& [name, v] : metrics) out << " " << name << " " << pct(v);
    out << "\n";
}

void reject_config(const Globals& g, const std::string& command) {
    if (!g.config.empty()) throw ConfigError(command + " takes no --config");
}

std::pair<std::uint64_t, std::uint64_t> parse_pair(const std::string& s, const std::string& what) {
    const auto colon = s.find(':');
    try {
        if (colon == std::string::npos) throw std::invalid_argument(s);
        std::size_t used = 0;
        const auto a = std::stoull(s.substr(0, colon), &used);
        if (used != colon) throw std::invalid_argument(s);
        const auto rest = s.substr(colon + 1);
        const auto b = std::stoull(rest, &used);
        if (used != rest.size()) throw std::invalid_argument(s);
        return {a, b};
    } catch (const std::exception&) {
        throw ConfigError(what + " expects IN:OUT integers, got '" + s + "'");
    }
}

model::SlmConfig named_slm(const std::string& name) {
    if (name == "bert_base") return model::bert_base_slm();
    if (name == "desk") return model::desk_slm(model::SlmFamily::encoder, data::synthetic_vocab().size());
    throw ConfigError("unknown SLM '" + name + "' (known: bert_base, desk)");
}

// ---- pretrain-donor -------------------------------------------------------

struct PretrainArgs {
    std::size_t n_layers = 4;
    PretrainConfig cfg;
};

void apply_pretrain_json(const json& j, PretrainArgs& a) {
    static const std::vector<std::string> keys = {"n_layers", "n_tokens", "eval_tokens", "seq_len", "init_sigma", "train"};
    if (!j.is_object()) throw ConfigError("pretrain config must be a JSON object");
    for (const auto& [k, v] : j.items())
        if (std::find(keys.begin(), keys.end(), k) == keys.end()) throw ConfigError("pretrain config: unknown key '" + k + "'");
    try {
        if (j.contains("n_layers")) a.n_layers = j.at("n_layers").get<std::size_t>();
        if (j.contains("n_tokens")) a.cfg.n_tokens = j.at("n_tokens").get<std::size_t>();
        if (j.contains("eval_tokens")) a.cfg.eval_tokens = j.at("eval_tokens").get<std::size_t>();
        if (j.contains("seq_len")) a.cfg.seq_len = j.at("seq_len").get<std::size_t>();
        if (j.contains("init_sigma")) a.cfg.init_sigma = j.at("init_sigma").get<double>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("pretrain config: ") + e.what());
    }
    if (j.contains("train")) a.cfg.train = train_from_json(j.at("train"), a.cfg.train);
}

int run_pretrain(const Globals& g, PretrainArgs a, CLI::App& sub, std::ostream& out, std::ostream& err) {
    if (!g.config.empty()) {
        // Flags given on the command line win over the file.
        PretrainArgs from_file;
        apply_pretrain_json(load_json_file(g.config), from_file);
        if (!sub.count("--layers")) a.n_layers = from_file.n_layers;
        if (!sub.count("--tokens")) a.cfg.n_tokens = from_file.cfg.n_tokens;
        if (!sub.count("--eval-tokens")) a.cfg.eval_tokens = from_file.cfg.eval_tokens;
        if (!sub.count("--seq-len")) a.cfg.seq_len = from_file.cfg.seq_len;
        if (!sub.count("--init-sigma")) a.cfg.init_sigma = from_file.cfg.init_sigma;
        const auto flags = a.cfg.train;
        a.cfg.train = from_file.cfg.train;
        if (sub.count("--lr")) a.cfg.train.lr = flags.lr;
        if (sub.count("--steps")) a.cfg.train.max_steps = flags.max_steps;
        if (sub.count("--batch-size")) a.cfg.train.batch_size = flags.batch_size;
    }
    if (g.seed) a.cfg.train.seed = *g.seed;
    const auto donor = desk_donor_lm(a.n_layers);
    const auto dir = out_dir(g, ".");
    fs::create_directories(dir);
    std::ofstream history(dir / "pretrain_history.jsonl", std::ios::binary | std::ios::trunc);
    const auto t0 = std::chrono::steady_clock::now();
    const auto r = pretrain_donor(donor, a.cfg, &history);
    const auto path = dir / "donor.pifa";
    ckpt::save_archive(r.archive, path);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    err << "pretrained " << a.n_layers << " layers in " << std::fixed << std::setprecision(1) << secs << " s"
        << std::defaultfloat << "\n";
    out << json{{"archive", path.string()},
                {"n_layers", a.n_layers},
                {"steps", r.history.steps},
                {"initial_ce", r.initial_ce},
                {"final_ce", r.final_ce},
                {"unigram_entropy", r.unigram_entropy}}
               .dump(2)
        << "\n";
    return 0;
}

// ---- extract-layer / inspect ----------------------------------------------

int run_extract(const Globals& g, const std::string& archive_path, const std::vector<std::size_t>& layers,
                const std::string& output, std::ostream& out) {
    reject_config(g, "extract-layer");
    const auto src = ckpt::load_archive(archive_path);
    const auto stores = ckpt::extract_donor_layers(src, layers);
    ckpt::TensorArchive dst;
    if (src.contains("embed.tok")) dst.add("embed.tok", src.at("embed.tok"));
    for (std::size_t k = 0; k < stores.size(); ++k)
        for (const auto& [name, p] : stores[k]) dst.add("layers." + std::to_string(k) + "." + name, p.value);
    dst.metadata = src.metadata;
    if (dst.metadata.count("n_layers")) dst.metadata["n_layers"] = std::to_string(layers.size());
    std::string picked;
    for (auto i : layers) picked += (picked.empty() ? "" : ",") + std::to_string(i);
    dst.metadata["extracted_layers"] = picked;
    const fs::path path = output.empty() ? out_dir(g, ".") / "extracted.pifa" : fs::path(output);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    ckpt::save_archive(dst, path);
    out << "wrote " << path.string() << ": layers " << picked << " of " << ckpt::archive_layer_count(src)
        << " renumbered from 0\n";
    return 0;
}

int run_inspect(const Globals& g, const std::string& archive_path, std::ostream& out) {
    reject_config(g, "inspect");
    const auto text = read_text(archive_path);
    const std::vector<std::uint8_t> bytes(text.begin(), text.end());
    out << ckpt::manifest_json(bytes) << "\n";
    return 0;
}

// ---- gen-data -------------------------------------------------------------

int run_gen_data(const Globals& g, const std::string& task_name, const std::string& domain_name, std::size_t n,
                 std::ostream& out) {
    reject_config(g, "gen-data");
    const auto task = task_from_string(task_name);
    const std::uint64_t seed = g.seed.value_or(1);
    if (domain_name.size() != 1) throw ConfigError("--domain must be one of A, B, C");
    const char dom = domain_name[0];
    const auto& vocab = data::synthetic_vocab();
    const auto dir = out_dir(g, ".");
    std::string stem = task_name;
    json sidecar = {{"task", task_name}, {"n", n}, {"seed", seed}, {"vocab_size", vocab.size()}, {"code_version", kCodeVersion}};
    fs::path path;
    if (task == Task::sentiment) {
        stem += "_" + std::string(1, dom);
        sidecar["domain"] = std::string(1, dom);
        path = dir / (stem + ".tsv");
        fs::create_directories(dir);
        data::save_tsv(data::gen_sentiment(data::domain(dom), n, seed), vocab, path);
    } else if (task == Task::acceptability) {
        path = dir / (stem + ".tsv");
        fs::create_directories(dir);
        data::save_tsv(data::gen_acceptability(n, seed), vocab, path);
    } else {
        path = dir / (stem + ".tsv");
        fs::create_directories(dir);
        data::save_tsv(data::gen_seq2seq(data::seq2seq_kind_from_string(task_name), n, seed), vocab, path);
    }
    write_text(dir / (stem + ".json"), sidecar.dump(2) + "\n");
    out << "wrote " << path.string() << " (" << n << " examples, seed " << seed << ")\n";
    return 0;
}

// ---- train / evaluate -----------------------------------------------------

ExperimentSpec spec_from(const Globals& g, const std::string& task_name) {
    if (!g.config.empty()) return ExperimentSpec::from_json(load_json_file(g.config));
    return ExperimentSpec::desk(task_from_string(task_name.empty() ? "sentiment" : task_name));
}

int run_train(const Globals& g, const std::string& task_name, const std::string& variant_name, std::ostream& out,
              std::ostream& err) {
    auto spec = spec_from(g, task_name);
    if (!variant_name.empty()) spec.variants = {variant_from_string(variant_name)};
    if (spec.sweep != SweepAxis::none) throw ConfigError("train runs a single cell; use `experiment` for sweeps");
    const std::uint64_t seed = g.seed.value_or(spec.seeds.front());
    spec.seeds = {seed};
    spec.validate();
    const auto cell = expand_cells(spec).front();

    const auto td = make_task_data(spec, cell, seed);
    const bool generation = is_generation(spec.task);
    auto m = build_cell_model(spec, cell, seed, generation ? 0 : td.train.n_classes());
    train::TrainConfig cfg = spec.train;
    cfg.seed = splitmix64(seed) ^ fnv1a64("train/order");
    const auto dir = out_dir(g, ".");
    fs::create_directories(dir);
    std::ofstream history(dir / "history.jsonl", std::ios::binary | std::ios::trunc);
    const auto& vocab = data::synthetic_vocab();
    const auto t0 = std::chrono::steady_clock::now();
    const auto result = generation ? train::train_seq2seq(m, td.train_s2s, nullptr, vocab, cfg, &history)
                                   : train::train_classifier(m, td.train, nullptr, cfg, &history);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    err << cell.label << " seed " << seed << ": " << result.steps << " steps in " << std::fixed << std::setprecision(1)
        << secs << " s" << std::defaultfloat << "\n";

    json evals = json::object();
    if (generation) {
        for (const auto& [name, set] : td.eval_s2s) {
            const auto rep = train::evaluate_generation(m, set, vocab, 64, cfg.max_len);
            print_metrics(out, name, rep.metrics);
            evals[name] = rep.metrics;
        }
    } else {
        for (const auto& [name, set] : td.eval) {
            const auto rep = train::evaluate_classification(m, set, 64, cfg.max_len);
            print_metrics(out, name, rep.metrics);
            evals[name] = rep.metrics;
        }
    }
    save_model({m, to_string(spec.task), generation ? std::vector<std::string>{} : td.train.label_names},
               dir / "model.pifa");
    write_text(dir / "eval.json", json{{"spec", spec.to_json()}, {"cell", cell.label}, {"seed", seed}, {"metrics", evals}}.dump(2) + "\n");
    out << "wrote " << (dir / "model.pifa").string() << "\n";
    return 0;
}

int run_evaluate(const Globals& g, const std::string& model_path, const std::string& data_path, std::size_t max_len,
                 bool as_json, std::ostream& out) {
    reject_config(g, "evaluate");
    const auto saved = load_model(model_path);
    const auto& vocab = data::synthetic_vocab();
    train::EvalReport rep;
    if (is_generation(task_from_string(saved.task))) {
        rep = train::evaluate_generation(saved.model, data::load_seq2seq_tsv(data_path, vocab), vocab, 64, max_len);
    } else {
        auto set = data::load_labeled_tsv(data_path, vocab, saved.label_names);
        set.validate(saved.model.slm_cfg.vocab_size);
        rep = train::evaluate_classification(saved.model, set, 64, max_len);
    }
    if (as_json) {
        out << json{{"task", saved.task}, {"n_examples", rep.n_examples}, {"metrics", rep.metrics}}.dump() << "\n";
    } else {
        print_metrics(out, fs::path(data_path).filename().string(), rep.metrics);
    }
    return 0;
}

// ---- experiment / report --------------------------------------------------

std::vector<std::pair<std::string, std::string>> parse_contrasts(const std::vector<std::string>& raw) {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& s : raw) {
        const auto colon = s.find(':');
        if (colon == std::string::npos || colon == 0 || colon + 1 == s.size())
            throw ConfigError("--contrast expects A:B cell labels, got '" + s + "'");
        out.emplace_back(s.substr(0, colon), s.substr(colon + 1));
    }
    return out;
}

ReportTable report_from_dirs(const std::vector<std::string>& dirs, std::vector<std::pair<std::string, std::string>> contrasts) {
    std::vector<json> records, specs;
    for (const auto& d : dirs) {
        const fs::path dir(d);
        if (!fs::exists(dir / "records.jsonl")) throw ConfigError(d + " holds no records.jsonl");
        for (auto& r : load_records(dir / "records.jsonl")) records.push_back(std::move(r));
        if (fs::exists(dir / "spec.json")) specs.push_back(load_json_file((dir / "spec.json").string()));
    }
    if (contrasts.empty()) {
        for (const auto& s : specs)
            if (s.contains("contrasts"))
                for (const auto& c : s.at("contrasts")) {
                    std::pair<std::string, std::string> p{c.at(0).get<std::string>(), c.at(1).get<std::string>()};
                    if (std::find(contrasts.begin(), contrasts.end(), p) == contrasts.end()) contrasts.push_back(p);
                }
    }
    return aggregate_records(records, contrasts, specs);
}

int run_experiment_cmd(const Globals& g, std::ostream& out, std::ostream& err) {
    if (g.config.empty()) throw ConfigError("experiment requires --config <spec.json>");
    const auto spec = ExperimentSpec::from_json(load_json_file(g.config));
    if (g.seed) throw ConfigError("experiment takes its seeds from the config; drop --seed");
    const auto dir = out_dir(g, spec.name);
    const auto summary = run_experiment(spec, dir, &err);
    const auto table = report_from_dirs({dir.string()}, spec.contrasts);
    write_text(dir / "report.md", render_markdown(table));
    write_text(dir / "report.csv", render_csv(table));
    out << summary.runs << " runs (" << summary.trained << " trained, " << summary.skipped << " already recorded); report in "
        << (dir / "report.md").string() << "\n";
    return 0;
}

int run_report(const Globals& g, const std::vector<std::string>& dirs, const std::string& format,
               const std::vector<std::string>& raw_contrasts, std::ostream& out) {
    reject_config(g, "report");
    const auto table = report_from_dirs(dirs, parse_contrasts(raw_contrasts));
    const bool md = format == "markdown";
    const auto text = md ? render_markdown(table) : render_csv(table);
    if (g.out.empty()) {
        out << text;
    } else {
        const auto path = fs::path(g.out) / (md ? "report.md" : "report.csv");
        write_text(path, text);
        out << "wrote " << path.string() << "\n";
    }
    return 0;
}

// ---- accounting -----------------------------------------------------------

struct CountArgs {
    std::string preset;
    std::size_t layers = 1;
    std::string slm;
    std::vector<std::string> proj;
    std::vector<std::string> head;
    bool millions = false;
};

int run_count(const Globals& g, const CountArgs& a, std::ostream& out) {
    reject_config(g, "count-params");
    std::vector<std::pair<std::string, std::uint64_t>> rows;
    if (!a.preset.empty())
        rows.emplace_back("donor " + a.preset + " x" + std::to_string(a.layers),
                          nn::block_param_count(nn::shape_preset(a.preset).block()) * a.layers);
    if (!a.slm.empty()) {
        model::PiFiConfig vanilla;
        rows.emplace_back("slm " + a.slm, model::count_params(named_slm(a.slm), vanilla).slm);
    }
    for (const auto& p : a.proj) {
        const auto [in, o] = parse_pair(p, "--proj");
        rows.emplace_back("proj " + p, nn::linear_param_count(in, o, false));
    }
    for (const auto& h : a.head) {
        const auto [d, c] = parse_pair(h, "--head");
        rows.emplace_back("head " + h, layout_numel(model::head_layout(d, c)));
    }
    if (rows.empty()) throw ConfigError("count-params needs at least one of --preset, --slm, --proj, --head");
    for (const auto& [label, n] : rows) {
        const auto value = a.millions ? millions(n) : std::to_string(n);
        if (rows.size() == 1) out << value << "\n";
        else out << label << "\t" << value << "\n";
    }
    return 0;
}

struct FlopsArgs {
    std::string slm = "bert_base";
    std::string preset;
    std::size_t layers = 1;
    std::size_t seq = 128;
    std::size_t batch = 1;
    std::string pooling = "cls";
};

int run_flops(const Globals& g, const FlopsArgs& a, std::ostream& out) {
    reject_config(g, "estimate-flops");
    const auto slm = named_slm(a.slm);
    model::PiFiConfig vanilla;
    vanilla.pooling = model::pooling_from_string(a.pooling);
    const auto base = model::estimate_flops(slm, vanilla, a.seq, a.batch);
    json j = {{"slm", a.slm}, {"seq_len", a.seq}, {"batch", a.batch}, {"pooling", a.pooling},
              {"unit", "multiply-accumulates"}, {"vanilla_total", base.total()}};
    if (!a.preset.empty()) {
        model::PiFiConfig p = vanilla;
        p.donor_block = nn::shape_preset(a.preset).block();
        for (std::size_t i = 1; i <= a.layers; ++i) p.donor_layer_indices.push_back(i);
        p.validate(slm);
        const auto f = model::estimate_flops(slm, p, a.seq, a.batch);
        j["donor_preset"] = a.preset;
        j["donor_layers"] = a.layers;
        j["pifi"] = {{"slm", f.slm}, {"l_in", f.l_in}, {"donor", f.donor}, {"l_out", f.l_out}, {"head", f.head},
                     {"donor_input_len", f.donor_input_len}, {"total", f.total()}};
        j["overhead_ratio"] = static_cast<double>(f.total()) / static_cast<double>(base.total()) - 1.0;
    }
    out << j.dump(2) << "\n";
    return 0;
}

int run_gradcheck_cmd(const Globals& g, const std::string& target, std::size_t dim, std::size_t trials, std::ostream& out) {
    reject_config(g, "gradcheck");
    if (trials == 0) throw ConfigError("--trials must be positive");
    const std::uint64_t base = g.seed.value_or(0);
    double worst = 0.0;
    std::string worst_param;
    std::size_t coords = 0;
    for (std::size_t t = 0; t < trials; ++t) {
        const auto r = run_gradcheck(target, dim, base + t);
        coords += r.coords_checked;
        if (r.max_rel_error >= worst) {
            worst = r.max_rel_error;
            worst_param = r.worst_param;
        }
    }
    const bool pass = worst < 1e-4;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3e", worst);
    out << target << " dim " << dim << " trials " << trials << " coords " << coords << ": max rel error " << buf
        << " (worst " << worst_param << ") " << (pass ? "ok" : "FAILED") << "\n";
    return pass ? 0 : 2;
}

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Plug frozen donor transformer layers into small language models: training, experiments and accounting.",
                 "pifi"};
    app.set_version_flag("--version", kCodeVersion);
    app.require_subcommand(1);
    app.fallthrough();

    Globals g;
    std::uint64_t seed_value = 0;
    auto* seed_opt = app.add_option("--seed", seed_value, "Seed for data, initialization and shuffling");
    app.add_option("--config", g.config, "JSON config file");
    app.add_option("--out", g.out, "Output directory");

    PretrainArgs pre;
    auto* pretrain = app.add_subcommand("pretrain-donor", "Train a small causal donor LM on the synthetic corpus");
    pretrain->add_option("--layers", pre.n_layers, "Donor layers")->capture_default_str();
    pretrain->add_option("--tokens", pre.cfg.n_tokens, "Training stream length")->capture_default_str();
    pretrain->add_option("--eval-tokens", pre.cfg.eval_tokens, "Held-out stream length")->capture_default_str();
    pretrain->add_option("--seq-len", pre.cfg.seq_len, "Window length")->capture_default_str();
    pretrain->add_option("--steps", pre.cfg.train.max_steps, "Optimizer steps")->capture_default_str();
    pretrain->add_option("--lr", pre.cfg.train.lr, "Learning rate")->capture_default_str();
    pretrain->add_option("--batch-size", pre.cfg.train.batch_size, "Windows per batch")->capture_default_str();
    pretrain->add_option("--init-sigma", pre.cfg.init_sigma, "Init standard deviation")->capture_default_str();

    std::string archive_path, output;
    std::vector<std::size_t> layers;
    auto* extract = app.add_subcommand("extract-layer", "Copy donor layers (1-based) into a new archive, renumbered from 0");
    extract->add_option("--archive", archive_path, "Source archive")->required();
    extract->add_option("--layers", layers, "Comma-separated 1-based indices")->required()->delimiter(',');
    extract->add_option("-o,--output", output, "Output file (default <out>/extracted.pifa)");

    auto* inspect = app.add_subcommand("inspect", "Print an archive manifest as JSON");
    inspect->add_option("archive", archive_path, "Archive file")->required();

    std::string task_name, domain_name = "A";
    std::size_t n_examples = 2000;
    auto* gen = app.add_subcommand("gen-data", "Write a synthetic dataset as TSV with a JSON sidecar");
    gen->add_option("--task", task_name, "sentiment, acceptability, copy, reverse or cipher")->required();
    gen->add_option("--domain", domain_name, "Sentiment domain A, B or C")->capture_default_str();
    gen->add_option("--n", n_examples, "Examples")->capture_default_str();

    std::string variant_name;
    auto* train = app.add_subcommand("train", "Train one variant and save model.pifa, history.jsonl and eval.json");
    train->add_option("--task", task_name, "Task with desk defaults when no --config is given");
    train->add_option("--variant", variant_name, "Variant (default: the first in the config)");

    std::string model_path, data_path;
    std::size_t max_len = 64;
    bool as_json = false;
    auto* evaluate = app.add_subcommand("evaluate", "Score a saved model on a TSV dataset");
    evaluate->add_option("--model", model_path, "Saved model archive")->required();
    evaluate->add_option("--data", data_path, "TSV dataset")->required();
    evaluate->add_option("--max-len", max_len, "Token budget per row")->capture_default_str();
    evaluate->add_flag("--json", as_json, "Print metrics as one JSON line");

    auto* experiment = app.add_subcommand("experiment", "Run every cell and seed of an experiment config, then write the report");

    std::vector<std::string> in_dirs, contrasts;
    std::string format = "markdown";
    auto* report = app.add_subcommand("report", "Aggregate experiment records into a report");
    report->add_option("--in", in_dirs, "Experiment directories")->required();
    report->add_option("--format", format, "markdown or csv")->check(CLI::IsMember({"markdown", "csv"}))->capture_default_str();
    report->add_option("--contrast", contrasts, "A:B cell labels to compare (repeatable)");

    CountArgs count;
    auto* count_cmd = app.add_subcommand("count-params", "Closed-form parameter counts");
    count_cmd->add_option("--preset", count.preset, "Donor shape preset");
    count_cmd->add_option("--layers", count.layers, "Donor layers")->capture_default_str();
    count_cmd->add_option("--slm", count.slm, "SLM: bert_base or desk");
    count_cmd->add_option("--proj", count.proj, "Bias-free projection IN:OUT (repeatable)");
    count_cmd->add_option("--head", count.head, "Classification head D:CLASSES (repeatable)");
    count_cmd->add_flag("--millions", count.millions, "Print millions rounded to 0.001");

    FlopsArgs flops;
    auto* flops_cmd = app.add_subcommand("estimate-flops", "Analytic multiply-accumulate counts of one forward pass");
    flops_cmd->add_option("--slm", flops.slm, "SLM: bert_base or desk")->capture_default_str();
    flops_cmd->add_option("--preset", flops.preset, "Donor shape preset (omit for vanilla)");
    flops_cmd->add_option("--layers", flops.layers, "Donor layers")->capture_default_str();
    flops_cmd->add_option("--seq", flops.seq, "Sequence length")->capture_default_str();
    flops_cmd->add_option("--batch", flops.batch, "Batch size")->capture_default_str();
    flops_cmd->add_option("--pooling", flops.pooling, "cls, mean_all, mean_nonpad or last_nonpad")->capture_default_str();

    std::string target = "pifi-encoder";
    std::size_t dim = 16, trials = 1;
    auto* grad = app.add_subcommand("gradcheck", "Compare analytic gradients with finite differences in f64");
    std::string targets_help;
    for (const auto& t : gradcheck_targets()) targets_help += (targets_help.empty() ? "" : ", ") + t;
    grad->add_option("--target", target, targets_help)->capture_default_str();
    grad->add_option("--dim", dim, "Donor width (multiple of 4)")->capture_default_str();
    grad->add_option("--trials", trials, "Independent random trials")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e, out, err);
        err << "error: " << e.what() << "\n\n";
        const auto parsed = app.get_subcommands();
        err << (parsed.empty() ? app.help() : parsed.front()->help());
        return 1;
    }
    if (seed_opt->count()) g.seed = seed_value;

    try {
        if (pretrain->parsed()) return run_pretrain(g, pre, *pretrain, out, err);
        if (extract->parsed()) return run_extract(g, archive_path, layers, output, out);
        if (inspect->parsed()) return run_inspect(g, archive_path, out);
        if (gen->parsed()) return run_gen_data(g, task_name, domain_name, n_examples, out);
        if (train->parsed()) return run_train(g, task_name, variant_name, out, err);
        if (evaluate->parsed()) return run_evaluate(g, model_path, data_path, max_len, as_json, out);
        if (experiment->parsed()) return run_experiment_cmd(g, out, err);
        if (report->parsed()) return run_report(g, in_dirs, format, contrasts, out);
        if (count_cmd->parsed()) return run_count(g, count, out);
        if (flops_cmd->parsed()) return run_flops(g, flops, out);
        if (grad->parsed()) return run_gradcheck_cmd(g, target, dim, trials, out);
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}

}  // namespace pifi::experiment
