#include "pifi/experiment/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include "pifi/autograd/rng.hpp"
#include "pifi/errors.hpp"
#include "pifi/train/metrics.hpp"

namespace pifi::experiment {

using nlohmann::json;

namespace {

std::string g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string pct(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
    return buf;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::vector<std::string> csv_split(const std::string& line) {
    std::vector<std::string> out(1);
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                out.back() += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                out.back() += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.emplace_back();
        } else {
            out.back() += c;
        }
    }
    return out;
}

bool is_classification(const json& metrics) { return metrics.contains("accuracy"); }

std::pair<std::string, std::string> headline_metrics(bool classification) {
    return classification ? std::make_pair(std::string("accuracy"), std::string("macro_f1"))
                          : std::make_pair(std::string("exact_match"), std::string("token_f1"));
}

template <typename T>
void push_unique(std::vector<T>& v, const T& x) {
    if (std::find(v.begin(), v.end(), x) == v.end()) v.push_back(x);
}

}  // namespace

ReportTable aggregate_records(const std::vector<json>& records, const std::vector<std::pair<std::string, std::string>>& contrasts,
                              const std::vector<json>& specs) {
    if (records.empty()) throw ContractError("report: no records");
    std::set<std::string> tasks;
    for (const auto& r : records) tasks.insert(r.at("task").get<std::string>());
    const bool multi_task = tasks.size() > 1;

    ReportTable t;
    // (cell, column) → seed → record
    std::map<std::pair<std::string, std::string>, std::map<std::uint64_t, const json*>> groups;
    std::map<std::string, bool> column_is_classification;
    std::set<std::uint64_t> seeds;
    std::vector<std::string> experiments, hashes, versions;
    for (const auto& r : records) {
        const auto cell = r.at("cell").get<std::string>();
        const auto task = r.at("task").get<std::string>();
        const auto eval_set = r.at("eval_set").get<std::string>();
        const auto column = multi_task ? task + "/" + eval_set : eval_set;
        const auto seed = r.at("seed").get<std::uint64_t>();
        push_unique(t.cells, cell);
        push_unique(t.columns, column);
        push_unique(experiments, r.at("experiment").get<std::string>());
        push_unique(hashes, r.at("config_hash").get<std::string>());
        push_unique(versions, r.at("code_version").get<std::string>());
        seeds.insert(seed);
        column_is_classification[column] = is_classification(r.at("metrics"));
        if (!groups[{cell, column}].emplace(seed, &r).second)
            throw ContractError("report: duplicate record for " + cell + " / " + column + " seed " + std::to_string(seed));
    }
    for (const auto& [key, by_seed] : groups) {
        const auto expected = by_seed.begin()->second->at("seeds_total").get<std::size_t>();
        if (by_seed.size() != expected)
            throw ContractError("report: " + key.first + " / " + key.second + " has " + std::to_string(by_seed.size()) +
                                " results, expected " + std::to_string(expected) + " (experiment incomplete?)");
    }

    for (const auto& cell : t.cells) {
        for (const auto& column : t.columns) {
            const auto it = groups.find({cell, column});
            if (it == groups.end()) continue;
            std::map<std::string, Aggregate> by_metric;
            for (const auto& [seed, rec] : it->second) {
                for (const auto& [metric, value] : rec->at("metrics").items()) {
                    auto& a = by_metric[metric];
                    a.values.push_back(value.get<double>());
                }
            }
            for (auto& [metric, a] : by_metric) {
                a.cell = cell;
                a.column = column;
                a.metric = metric;
                a.n = a.values.size();
                double s = 0.0;
                for (double v : a.values) s += v;
                a.mean = s / static_cast<double>(a.values.size());
                double ss = 0.0;
                for (double v : a.values) ss += (v - a.mean) * (v - a.mean);
                a.sd = a.values.size() > 1 ? std::sqrt(ss / static_cast<double>(a.values.size() - 1)) : 0.0;
                t.aggregates.push_back(std::move(a));
            }
        }
    }

    auto pairs = contrasts;
    if (pairs.empty())
        for (std::size_t i = 1; i < t.cells.size(); ++i) pairs.emplace_back(t.cells[i], t.cells[0]);
    auto find = [&](const std::string& cell, const std::string& column, const std::string& metric) -> const Aggregate* {
        for (const auto& a : t.aggregates)
            if (a.cell == cell && a.column == column && a.metric == metric) return &a;
        return nullptr;
    };
    for (const auto& [a, b] : pairs) {
        if (std::find(t.cells.begin(), t.cells.end(), a) == t.cells.end() ||
            std::find(t.cells.begin(), t.cells.end(), b) == t.cells.end())
            throw ConfigError("report: contrast " + a + " vs " + b + " names a cell without records");
        for (const auto& column : t.columns) {
            const auto [m1, m2] = headline_metrics(column_is_classification[column]);
            for (const auto& metric : {m1, m2}) {
                const auto* x = find(a, column, metric);
                const auto* y = find(b, column, metric);
                if (!x || !y) continue;
                Contrast c{a, b, column, metric, x->values.size(), x->mean - y->mean, 1.0};
                c.p_value = train::permutation_test(x->values, y->values, kReportPermutations,
                                                    fnv1a64(a + "|" + b + "|" + column + "|" + metric));
                t.contrasts.push_back(c);
            }
        }
    }

    t.meta["experiments"] = experiments;
    t.meta["config_hashes"] = hashes;
    t.meta["code_versions"] = versions;
    t.meta["seeds"] = std::vector<std::uint64_t>(seeds.begin(), seeds.end());
    t.meta["seed_policy"] = "each seed drives data generation, model initialization and batch order jointly";
    t.meta["n_permutations"] = kReportPermutations;
    t.meta["specs"] = specs;
    return t;
}

std::string render_markdown(const ReportTable& t) {
    std::ostringstream md;
    const auto& m = t.meta;
    md << "# Experiment report\n\n";
    auto join = [](const json& arr) {
        std::string s;
        for (const auto& v : arr) s += (s.empty() ? "" : ", ") + (v.is_string() ? v.get<std::string>() : v.dump());
        return s;
    };
    md << "- experiments: " << join(m.at("experiments")) << "\n";
    md << "- config hash: " << join(m.at("config_hashes")) << "\n";
    md << "- code version: " << join(m.at("code_versions")) << "\n";
    md << "- seeds: " << join(m.at("seeds")) << " (" << m.at("seed_policy").get<std::string>() << ")\n\n";

    std::map<std::string, bool> classification;
    for (const auto& a : t.aggregates)
        if (a.metric == "accuracy") classification[a.column] = true;
    auto find = [&](const std::string& cell, const std::string& column, const std::string& metric) -> const Aggregate* {
        for (const auto& a : t.aggregates)
            if (a.cell == cell && a.column == column && a.metric == metric) return &a;
        return nullptr;
    };

    md << "## Results\n\n";
    md << "Upper row: accuracy (classification) or exact match (generation). Lower row: macro-F1 or token-F1. "
          "Values are percentages, mean ± sample standard deviation over seeds.\n\n";
    md << "| cell |";
    for (const auto& c : t.columns) md << " " << c << " |";
    md << "\n|---|";
    for (std::size_t i = 0; i < t.columns.size(); ++i) md << "---|";
    md << "\n";
    for (const auto& cell : t.cells) {
        for (int row = 0; row < 2; ++row) {
            md << "| " << (row == 0 ? cell : "") << " |";
            for (const auto& column : t.columns) {
                const auto [m1, m2] = headline_metrics(classification[column]);
                const auto* a = find(cell, column, row == 0 ? m1 : m2);
                md << " " << (a ? pct(a->mean) + " ± " + pct(a->sd) : std::string("n/a")) << " |";
            }
            md << "\n";
        }
    }

    if (!t.contrasts.empty()) {
        md << "\n## Significance\n\n";
        md << "Two-sided permutation test on the difference of per-seed means (exhaustive when the number of "
              "splits is at most "
           << m.at("n_permutations").get<std::size_t>() << ").\n\n";
        md << "| contrast | column | metric | Δ mean (pp) | p-value |\n|---|---|---|---|---|\n";
        for (const auto& c : t.contrasts) {
            char p[32];
            std::snprintf(p, sizeof p, "%.4f", c.p_value);
            md << "| " << c.a << " vs " << c.b << " | " << c.column << " | " << c.metric << " | " << pct(c.mean_diff)
               << " | " << p << " |\n";
        }
    }

    md << "\n## All metrics\n\n| cell | column | metric | n | mean | sd |\n|---|---|---|---|---|---|\n";
    for (const auto& a : t.aggregates) {
        char buf[96];
        std::snprintf(buf, sizeof buf, "%.6f | %.6f", a.mean, a.sd);
        md << "| " << a.cell << " | " << a.column << " | " << a.metric << " | " << a.n << " | " << buf << " |\n";
    }

    if (!m.at("specs").empty()) {
        md << "\n## Configuration\n\n";
        for (const auto& s : m.at("specs")) md << "```json\n" << s.dump(2) << "\n```\n";
    }
    return md.str();
}

std::string render_csv(const ReportTable& t) {
    std::ostringstream csv;
    csv << "kind,cell,other,column,metric,n,mean,sd,p_value\n";
    for (const auto& a : t.aggregates)
        csv << "aggregate," << csv_field(a.cell) << ",," << csv_field(a.column) << "," << csv_field(a.metric) << ","
            << a.n << "," << g17(a.mean) << "," << g17(a.sd) << ",\n";
    for (const auto& c : t.contrasts)
        csv << "contrast," << csv_field(c.a) << "," << csv_field(c.b) << "," << csv_field(c.column) << ","
            << csv_field(c.metric) << "," << c.n << "," << g17(c.mean_diff) << ",," << g17(c.p_value) << "\n";
    return csv.str();
}

std::vector<Aggregate> parse_csv_aggregates(const std::string& csv) {
    std::vector<Aggregate> out;
    std::istringstream in(csv);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line_no == 1 || line.empty()) continue;
        const auto f = csv_split(line);
        if (f.size() != 9) throw IngestionError("report CSV: expected 9 fields", line_no);
        if (f[0] != "aggregate") continue;
        Aggregate a;
        a.cell = f[1];
        a.column = f[3];
        a.metric = f[4];
        a.n = std::stoull(f[5]);
        a.mean = std::stod(f[6]);
        a.sd = std::stod(f[7]);
        out.push_back(std::move(a));
    }
    return out;
}

}  // namespace pifi::experiment
