#pragma once

#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace pifi::experiment {

// Mean and sample standard deviation of one metric of one cell on one column
// (an eval set, prefixed by the task when records span several tasks).
struct Aggregate {
    std::string cell;
    std::string column;
    std::string metric;
    std::vector<double> values;  // in seed order; empty when parsed back from CSV
    std::size_t n = 0;
    double mean = 0.0;
    double sd = 0.0;             // n − 1 denominator; 0 for a single value
};

struct Contrast {
    std::string a;
    std::string b;
    std::string column;
    std::string metric;
    std::size_t n = 0;
    double mean_diff = 0.0;  // mean(a) − mean(b)
    double p_value = 1.0;
};

struct ReportTable {
    std::vector<std::string> cells;    // first-appearance order
    std::vector<std::string> columns;  // first-appearance order
    std::vector<Aggregate> aggregates;
    std::vector<Contrast> contrasts;
    nlohmann::json meta;  // experiments, config hashes, seeds, code version
};

inline constexpr std::size_t kReportPermutations = 10000;

// Groups raw records. Every (cell, column) must hold exactly `seeds_total`
// records, one per seed. Contrasts are cell-label pairs; an empty list
// compares every cell against the first. `specs` (spec.json contents) are
// embedded in the metadata.
ReportTable aggregate_records(const std::vector<nlohmann::json>& records,
                              const std::vector<std::pair<std::string, std::string>>& contrasts = {},
                              const std::vector<nlohmann::json>& specs = {});

std::string render_markdown(const ReportTable& table);
// kind,cell,other,column,metric,n,mean,sd,p_value with %.17g numbers.
std::string render_csv(const ReportTable& table);

// Reads back the aggregate rows of render_csv output.
std::vector<Aggregate> parse_csv_aggregates(const std::string& csv);

}  // namespace pifi::experiment
