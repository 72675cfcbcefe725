#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "pifi/data/dataset.hpp"
#include "pifi/model/pifi_model.hpp"
#include "pifi/train/optim.hpp"

namespace pifi::experiment {

enum class Variant : std::uint8_t {
    vanilla,
    pifi,
    pifi_random,
    pifi_random_full,
    pifi_full,
    donor_only_first,
    donor_only_last,
};
std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);
bool needs_archive(Variant v);
bool is_donor_only(Variant v);

enum class Task : std::uint8_t { sentiment, acceptability, copy, reverse, cipher };
std::string to_string(Task t);
Task task_from_string(const std::string& s);
bool is_generation(Task t);

enum class SweepAxis : std::uint8_t { none, layer_position, pooling, donor_size, n_layers, data_fraction };
std::string to_string(SweepAxis a);
SweepAxis sweep_axis_from_string(const std::string& s);

// One experiment: every (variant × sweep value) cell is trained once per
// seed. A seed drives data generation, initialization and shuffling jointly.
struct ExperimentSpec {
    std::string name = "experiment";
    Task task = Task::sentiment;
    char train_domain = 'A';            // sentiment only
    std::vector<char> eval_domains;      // sentiment only; empty = {train_domain}
    std::size_t n_train = 2000;
    std::size_t n_test = 500;
    double data_fraction = 1.0;
    std::vector<Variant> variants{Variant::vanilla, Variant::pifi};
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    model::SlmConfig slm;                // vocab_size is filled from the synthetic vocabulary
    std::string donor_archive;           // path; required by archive-initialized variants
    std::string donor_preset = "desk_donor";  // block shape for random donors without an archive
    std::vector<std::size_t> donor_layers;    // 1-based; empty = the last archive layer (or {1})
    model::Pooling pooling = model::Pooling::cls;
    train::TrainConfig train;
    bool eval_each_epoch = false;        // dev metrics in the history, on the first eval set
    SweepAxis sweep = SweepAxis::none;
    nlohmann::json sweep_values = nlohmann::json::array();
    std::vector<std::pair<std::string, std::string>> contrasts;  // cell labels; empty = each cell vs the first

    // Desk defaults for `task`: desk_slm shapes, with an encoder_decoder SLM
    // for generation tasks.
    static ExperimentSpec desk(Task task);
    static ExperimentSpec from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
    // FNV-1a of the canonical JSON dump, as 16 hex digits.
    std::string hash() const;
    // Compatibility of every variant, family, pooling, task and sweep value.
    void validate() const;
};

// A concrete cell: one variant under one sweep value.
struct Cell {
    std::string label;  // "pifi" or "pifi@layer_position=2"
    Variant variant = Variant::vanilla;
    std::string donor_archive;
    std::vector<std::size_t> donor_layers;  // resolved
    model::Pooling pooling = model::Pooling::cls;
    double data_fraction = 1.0;
    nlohmann::json sweep_value;  // null without a sweep

    nlohmann::json to_json() const;
};

std::vector<Cell> expand_cells(const ExperimentSpec& spec);

// Deterministic datasets of one seed.
struct TaskData {
    data::LabeledDataset train;
    std::vector<std::pair<std::string, data::LabeledDataset>> eval;  // by eval-set name
    data::Seq2SeqDataset train_s2s;
    std::vector<std::pair<std::string, data::Seq2SeqDataset>> eval_s2s;
};
TaskData make_task_data(const ExperimentSpec& spec, const Cell& cell, std::uint64_t seed);

// Builds the model of a cell for one seed.
model::PiFiModel<float> build_cell_model(const ExperimentSpec& spec, const Cell& cell, std::uint64_t seed,
                                         std::size_t n_classes);

// Block config of the donor layers a cell uses (from the archive metadata
// when there is one, else the preset).
nn::BlockConfig cell_donor_block(const ExperimentSpec& spec, const Cell& cell);

nlohmann::json slm_to_json(const model::SlmConfig& c);
model::SlmConfig slm_from_json(const nlohmann::json& j, model::SlmConfig base);
nlohmann::json train_to_json(const train::TrainConfig& c);
train::TrainConfig train_from_json(const nlohmann::json& j, train::TrainConfig base);

// Loads a JSON file; a missing or unparsable file is a ConfigError.
nlohmann::json load_json_file(const std::string& path);

}  // namespace pifi::experiment
