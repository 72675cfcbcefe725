#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "pifi/checkpoint/archive.hpp"
#include "pifi/model/pifi_model.hpp"

namespace pifi::experiment {

nlohmann::json block_to_json(const nn::BlockConfig& b);
nn::BlockConfig block_from_json(const nlohmann::json& j);

// A trained model plus what is needed to rebuild and score it.
struct SavedModel {
    model::PiFiModel<float> model;
    std::string task;                      // task name
    std::vector<std::string> label_names;  // classification only
};

// Every parameter under its global name; metadata "pifi.model" holds the
// configuration as JSON.
ckpt::TensorArchive model_to_archive(const SavedModel& saved);
SavedModel model_from_archive(const ckpt::TensorArchive& archive);

void save_model(const SavedModel& saved, const std::filesystem::path& path);
SavedModel load_model(const std::filesystem::path& path);

}  // namespace pifi::experiment
