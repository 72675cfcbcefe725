#include "pifi/experiment/runner.hpp"

#include <chrono>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "pifi/autograd/rng.hpp"
#include "pifi/data/synthetic.hpp"
#include "pifi/errors.hpp"
#include "pifi/train/trainer.hpp"

namespace pifi::experiment {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string hex64(std::uint64_t v) {
    std::ostringstream out;
    out << std::hex << std::setw(16) << std::setfill('0') << v;
    return out.str();
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + p.string());
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::string file_hash(const std::string& path) {
    static std::map<std::string, std::string> cache;
    if (path.empty()) return "";
    auto it = cache.find(path);
    if (it == cache.end()) it = cache.emplace(path, hex64(fnv1a64(read_file(path)))).first;
    return it->second;
}

// Drops a trailing partial line left by an interrupted append.
void repair_tail(const fs::path& p) {
    if (!fs::exists(p)) return;
    const std::string text = read_file(p);
    if (text.empty() || text.back() == '\n') return;
    const auto cut = text.rfind('\n');
    fs::resize_file(p, cut == std::string::npos ? 0 : cut + 1);
}

json spec_core(const ExperimentSpec& spec) {
    json j = spec.to_json();
    for (const char* k : {"name", "variants", "seeds", "sweep", "contrasts"}) j.erase(k);
    return j;
}

}  // namespace

std::string run_key(const ExperimentSpec& spec, const Cell& cell, std::uint64_t seed) {
    const json key = {{"spec", spec_core(spec)},
                      {"cell", cell.to_json()},
                      {"seed", seed},
                      {"donor_archive_fnv", file_hash(cell.donor_archive)},
                      {"code_version", kCodeVersion}};
    return hex64(fnv1a64(key.dump()));
}

std::vector<json> load_records(const fs::path& records_path) {
    std::vector<json> out;
    if (!fs::exists(records_path)) return out;
    const std::string text = read_file(records_path);
    std::size_t start = 0;
    std::size_t line_no = 0;
    while (start < text.size()) {
        const auto end = text.find('\n', start);
        if (end == std::string::npos) break;  // unterminated final line
        ++line_no;
        const auto line = text.substr(start, end - start);
        start = end + 1;
        if (line.empty()) continue;
        try {
            out.push_back(json::parse(line));
        } catch (const json::parse_error& e) {
            throw IngestionError(records_path.string() + ": " + e.what(), line_no);
        }
    }
    return out;
}

RunSummary run_experiment(const ExperimentSpec& spec, const fs::path& out_dir, std::ostream* log) {
    spec.validate();
    const auto cells = expand_cells(spec);
    fs::create_directories(out_dir / "history");

    const auto spec_path = out_dir / "spec.json";
    const std::string spec_text = spec.to_json().dump(2) + "\n";
    if (fs::exists(spec_path)) {
        if (read_file(spec_path) != spec_text)
            throw ConfigError(out_dir.string() + " holds a different experiment (spec.json differs); use a new --out");
    } else {
        std::ofstream(spec_path, std::ios::binary) << spec_text;
    }

    const auto records_path = out_dir / "records.jsonl";
    repair_tail(records_path);
    std::set<std::string> done;
    for (const auto& r : load_records(records_path)) done.insert(r.at("run_key").get<std::string>());

    const std::string config_hash = spec.hash();
    const auto& vocab = data::synthetic_vocab();
    RunSummary summary;
    for (const auto& cell : cells) {
        for (auto seed : spec.seeds) {
            ++summary.runs;
            const auto key = run_key(spec, cell, seed);
            if (done.count(key)) {
                ++summary.skipped;
                continue;
            }
            const auto t0 = std::chrono::steady_clock::now();
            const auto td = make_task_data(spec, cell, seed);
            const bool generation = is_generation(spec.task);
            auto m = build_cell_model(spec, cell, seed, generation ? 0 : td.train.n_classes());
            const auto counts = model::count_params(m);
            const auto donor_before = params_hash(m.donor_params());

            train::TrainConfig cfg = spec.train;
            cfg.seed = splitmix64(seed) ^ fnv1a64("train/order");
            std::ofstream history(out_dir / "history" / (key + ".jsonl"), std::ios::binary | std::ios::trunc);
            train::TrainResult result;
            if (generation) {
                const auto* dev = spec.eval_each_epoch ? &td.eval_s2s.front().second : nullptr;
                result = train::train_seq2seq(m, td.train_s2s, dev, vocab, cfg, &history);
            } else {
                const auto* dev = spec.eval_each_epoch ? &td.eval.front().second : nullptr;
                result = train::train_classifier(m, td.train, dev, cfg, &history);
            }
            const auto donor_after = params_hash(m.donor_params());

            std::ostringstream lines;
            auto emit = [&](const std::string& eval_set, const train::EvalReport& rep) {
                json r;
                r["experiment"] = spec.name;
                r["config_hash"] = config_hash;
                r["code_version"] = kCodeVersion;
                r["run_key"] = key;
                r["cell"] = cell.label;
                r["variant"] = to_string(cell.variant);
                r["sweep_axis"] = to_string(spec.sweep);
                r["sweep_value"] = cell.sweep_value;
                r["task"] = to_string(spec.task);
                r["seed"] = seed;
                r["seeds_total"] = spec.seeds.size();
                r["eval_set"] = eval_set;
                r["n_train"] = generation ? td.train_s2s.examples.size() : td.train.examples.size();
                r["n_test"] = rep.n_examples;
                r["metrics"] = rep.metrics;
                r["steps"] = result.steps;
                r["final_loss"] = result.history.empty() ? 0.0 : result.history.back().loss;
                r["donor_layers"] = cell.donor_layers;
                r["donor_hash_before"] = hex64(donor_before);
                r["donor_hash_after"] = hex64(donor_after);
                r["donor_archive_fnv"] = file_hash(cell.donor_archive);
                r["params_total"] = counts.total();
                r["params_trainable"] = counts.trainable;
                lines << r.dump() << '\n';
            };
            if (generation) {
                for (const auto& [name, set] : td.eval_s2s)
                    emit(name, train::evaluate_generation(m, set, vocab, 64, cfg.max_len));
            } else {
                for (const auto& [name, set] : td.eval)
                    emit(name, train::evaluate_classification(m, set, 64, cfg.max_len));
            }
            std::ofstream out(records_path, std::ios::binary | std::ios::app);
            out << lines.str();
            out.flush();
            if (!out) throw std::runtime_error("cannot append to " + records_path.string());
            ++summary.trained;
            if (log) {
                const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
                *log << "[" << summary.runs << "/" << cells.size() * spec.seeds.size() << "] " << cell.label
                     << " seed " << seed << ": " << result.steps << " steps, " << std::fixed << std::setprecision(1)
                     << secs << " s" << std::defaultfloat << std::endl;
            }
        }
    }
    return summary;
}

}  // namespace pifi::experiment
