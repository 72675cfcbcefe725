#pragma once

#include <filesystem>
#include <ostream>
#include <vector>

#include "json.hpp"
#include "pifi/experiment/spec.hpp"

namespace pifi::experiment {

// Bumped when training or evaluation semantics change; stamped into records.
inline constexpr const char* kCodeVersion = "pifi-desk 1.0.0";

struct RunSummary {
    std::size_t runs = 0;     // cells × seeds
    std::size_t trained = 0;  // run now
    std::size_t skipped = 0;  // already recorded
};

// Trains and evaluates every cell × seed of `spec` into `out_dir`:
//   spec.json       canonical spec
//   records.jsonl   one JSON line per (cell, seed, eval set), append-only
//   history/        per-run training history, one JSON line per step
// Runs already present in records.jsonl (by run key) are skipped, so a
// finished directory is left unchanged. A directory holding a different spec
// is a ConfigError. Progress lines go to `log`.
RunSummary run_experiment(const ExperimentSpec& spec, const std::filesystem::path& out_dir, std::ostream* log = nullptr);

// Key of one (cell, seed) run: hash of everything that affects its outcome.
std::string run_key(const ExperimentSpec& spec, const Cell& cell, std::uint64_t seed);

// Parses records.jsonl, ignoring an unterminated final line.
std::vector<nlohmann::json> load_records(const std::filesystem::path& records_path);

}  // namespace pifi::experiment
