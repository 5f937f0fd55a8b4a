#include "docsynth/evalstats.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

namespace docsynth {

using nlohmann::json;

// ---------------------------------------------------------------------------
// ScoreTable

std::size_t ScoreTable::model_index(std::string_view name) const {
    auto it = std::find(models.begin(), models.end(), name);
    if (it == models.end()) throw Error(ErrorCode::UnknownModel, "no model '" + std::string(name) + "'");
    return static_cast<std::size_t>(it - models.begin());
}

std::size_t ScoreTable::benchmark_index(std::string_view name) const {
    auto it = std::find(benchmarks.begin(), benchmarks.end(), name);
    if (it == benchmarks.end()) throw Error(ErrorCode::UnknownBenchmark, "no benchmark '" + std::string(name) + "'");
    return static_cast<std::size_t>(it - benchmarks.begin());
}

std::optional<double> ScoreTable::get(std::string_view model, std::string_view benchmark) const {
    return scores[model_index(model)][benchmark_index(benchmark)];
}

void ScoreTable::validate() const {
    if (scores.size() != models.size()) throw Error(ErrorCode::MalformedTable, "row count does not match models");
    for (const auto& row : scores) {
        if (row.size() != benchmarks.size()) throw Error(ErrorCode::MalformedTable, "ragged score row");
        for (const auto& cell : row) {
            if (cell && !std::isfinite(*cell)) throw Error(ErrorCode::MalformedTable, "non-finite score");
        }
    }
    if (std::set<std::string>(models.begin(), models.end()).size() != models.size()) {
        throw Error(ErrorCode::MalformedTable, "duplicate model name");
    }
    if (std::set<std::string>(benchmarks.begin(), benchmarks.end()).size() != benchmarks.size()) {
        throw Error(ErrorCode::MalformedTable, "duplicate benchmark name");
    }
}

namespace {

std::vector<std::vector<std::string>> parse_csv_rows(std::string_view text) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string field;
    bool quoted = false;
    bool any = false;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field += c;
            }
            continue;
        }
        if (c == '"') {
            quoted = true;
            any = true;
        } else if (c == ',') {
            row.push_back(std::move(field));
            field.clear();
            any = true;
        } else if (c == '\n' || c == '\r') {
            if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
            if (any || !field.empty()) {
                row.push_back(std::move(field));
                rows.push_back(std::move(row));
            }
            row.clear();
            field.clear();
            any = false;
        } else {
            field += c;
            any = true;
        }
    }
    if (quoted) throw Error(ErrorCode::MalformedTable, "unterminated quote");
    if (any || !field.empty()) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    return "\"" + replace_all(s, "\"", "\"\"") + "\"";
}

std::string fixed(double v, int decimals) {
    std::ostringstream out;
    out << std::fixed << std::setprecision(decimals) << v;
    return out.str();
}

}  // namespace

ScoreTable parse_score_csv(std::string_view text) {
    const auto rows = parse_csv_rows(text);
    if (rows.empty()) throw Error(ErrorCode::MalformedTable, "empty CSV");
    ScoreTable table;
    for (std::size_t c = 1; c < rows[0].size(); ++c) table.benchmarks.push_back(trim(rows[0][c]));
    if (table.benchmarks.empty()) throw Error(ErrorCode::MalformedTable, "header has no benchmark columns");
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& row = rows[r];
        if (row.size() != rows[0].size()) {
            throw Error(ErrorCode::MalformedTable, "row " + std::to_string(r + 1) + " has " +
                                                       std::to_string(row.size()) + " cells, header has " +
                                                       std::to_string(rows[0].size()));
        }
        table.models.push_back(trim(row[0]));
        std::vector<std::optional<double>> cells;
        for (std::size_t c = 1; c < row.size(); ++c) {
            const std::string cell = trim(row[c]);
            if (cell.empty()) {
                cells.emplace_back();
                continue;
            }
            double v = 0.0;
            const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
            if (ec != std::errc{} || ptr != cell.data() + cell.size()) {
                throw Error(ErrorCode::MalformedTable, "row " + std::to_string(r + 1) + ": '" + cell +
                                                           "' is not a number");
            }
            cells.emplace_back(v);
        }
        table.scores.push_back(std::move(cells));
    }
    table.validate();
    return table;
}

ScoreTable load_score_csv(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_score_csv(buf.str());
}

std::string to_csv(const ScoreTable& table) {
    std::string out = "model";
    for (const auto& b : table.benchmarks) out += "," + csv_escape(b);
    out += "\n";
    for (std::size_t m = 0; m < table.models.size(); ++m) {
        out += csv_escape(table.models[m]);
        for (const auto& cell : table.scores[m]) {
            out += ",";
            if (cell) {
                std::ostringstream v;
                v << std::setprecision(10) << *cell;
                out += v.str();
            }
        }
        out += "\n";
    }
    return out;
}

// ---------------------------------------------------------------------------
// Aggregation

std::string_view to_string(MmlbCombine mode) noexcept { return mode == MmlbCombine::averaged ? "averaged" : "separate"; }

MmlbCombine parse_mmlb_combine(std::string_view text) {
    if (text == "separate") return MmlbCombine::separate;
    if (text == "averaged") return MmlbCombine::averaged;
    throw Error(ErrorCode::InvalidType, "mmlb_combine must be 'separate' or 'averaged'");
}

AggregateConfig default_aggregate_config() {
    AggregateConfig cfg;
    cfg.va_benchmarks = {"MMLBD", "MMLBD-C", "MMLB 128K", "MMLB 32K", "SlideVQA", "DUDE"};
    cfg.lca_benchmarks = cfg.va_benchmarks;
    cfg.lca_benchmarks.insert(cfg.lca_benchmarks.end(), {"Helmet", "LongBench v2"});
    cfg.mmlb_combine = MmlbCombine::separate;
    cfg.mmlb_columns = {"MMLB 128K", "MMLB 32K"};
    cfg.mmlb_combined_name = "MMLB";
    return cfg;
}

AggregateConfig aggregate_config_from_json(const json& j) {
    AggregateConfig cfg = default_aggregate_config();
    if (!j.is_object()) throw Error(ErrorCode::InvalidType, "aggregate config must be an object");
    for (const auto& [key, value] : j.items()) {
        try {
            if (key == "va_benchmarks") cfg.va_benchmarks = value.get<std::vector<std::string>>();
            else if (key == "lca_benchmarks") cfg.lca_benchmarks = value.get<std::vector<std::string>>();
            else if (key == "normalization_models") cfg.normalization_models = value.get<std::vector<std::string>>();
            else if (key == "mmlb_combine") cfg.mmlb_combine = parse_mmlb_combine(value.get<std::string>());
            else if (key == "mmlb_columns") cfg.mmlb_columns = value.get<std::vector<std::string>>();
            else if (key == "mmlb_combined_name") cfg.mmlb_combined_name = value.get<std::string>();
            else throw Error(ErrorCode::UnknownKey, "unknown aggregate config key '" + key + "'");
        } catch (const json::exception& e) {
            throw Error(ErrorCode::InvalidType, key + ": " + e.what());
        }
    }
    for (const auto& b : cfg.va_benchmarks) {
        if (std::find(cfg.lca_benchmarks.begin(), cfg.lca_benchmarks.end(), b) == cfg.lca_benchmarks.end()) {
            throw Error(ErrorCode::InconsistentBounds, "VA benchmark '" + b + "' missing from the LCA set");
        }
    }
    return cfg;
}

json to_json(const AggregateConfig& cfg) {
    return json{{"va_benchmarks", cfg.va_benchmarks},
                {"lca_benchmarks", cfg.lca_benchmarks},
                {"normalization_models", cfg.normalization_models},
                {"mmlb_combine", to_string(cfg.mmlb_combine)},
                {"mmlb_columns", cfg.mmlb_columns},
                {"mmlb_combined_name", cfg.mmlb_combined_name}};
}

namespace {

/// Benchmark list with the MMLongBench columns collapsed when averaging.
std::vector<std::string> effective_set(const std::vector<std::string>& set, const AggregateConfig& cfg) {
    if (cfg.mmlb_combine == MmlbCombine::separate) return set;
    std::vector<std::string> out;
    bool placed = false;
    for (const auto& b : set) {
        if (std::find(cfg.mmlb_columns.begin(), cfg.mmlb_columns.end(), b) != cfg.mmlb_columns.end()) {
            if (!placed) out.push_back(cfg.mmlb_combined_name);
            placed = true;
        } else {
            out.push_back(b);
        }
    }
    return out;
}

}  // namespace

ScoreTable combine_columns(const ScoreTable& table, const AggregateConfig& cfg) {
    if (cfg.mmlb_combine == MmlbCombine::separate || cfg.mmlb_columns.empty()) return table;
    std::vector<std::size_t> cols;
    for (const auto& name : cfg.mmlb_columns) cols.push_back(table.benchmark_index(name));

    ScoreTable out;
    out.models = table.models;
    bool placed = false;
    std::vector<int> source;  // column index, or -1 for the combined column
    for (std::size_t b = 0; b < table.benchmarks.size(); ++b) {
        if (std::find(cols.begin(), cols.end(), b) != cols.end()) {
            if (!placed) {
                out.benchmarks.push_back(cfg.mmlb_combined_name);
                source.push_back(-1);
                placed = true;
            }
        } else {
            out.benchmarks.push_back(table.benchmarks[b]);
            source.push_back(static_cast<int>(b));
        }
    }
    for (const auto& row : table.scores) {
        std::vector<std::optional<double>> cells;
        for (int s : source) {
            if (s >= 0) {
                cells.push_back(row[static_cast<std::size_t>(s)]);
                continue;
            }
            double sum = 0.0;
            bool complete = true;
            for (auto c : cols) {
                if (!row[c]) complete = false;
                else sum += *row[c];
            }
            cells.push_back(complete ? std::optional<double>(sum / static_cast<double>(cols.size())) : std::nullopt);
        }
        out.scores.push_back(std::move(cells));
    }
    return out;
}

ScoreTable normalize_scores(const ScoreTable& table, const AggregateConfig& cfg) {
    std::vector<std::size_t> norm_rows;
    if (cfg.normalization_models.empty()) {
        norm_rows.resize(table.models.size());
        std::iota(norm_rows.begin(), norm_rows.end(), std::size_t{0});
    } else {
        for (const auto& m : cfg.normalization_models) norm_rows.push_back(table.model_index(m));
    }

    ScoreTable out = table;
    for (std::size_t b = 0; b < table.benchmarks.size(); ++b) {
        std::optional<double> max;
        for (auto r : norm_rows) {
            const auto& cell = table.scores[r][b];
            if (cell && (!max || *cell > *max)) max = cell;
        }
        if (!max) throw Error(ErrorCode::EmptyColumn, "no normalization score for '" + table.benchmarks[b] + "'");
        if (*max <= 0.0) throw Error(ErrorCode::NonPositiveMax, "maximum of '" + table.benchmarks[b] + "' is not positive");
        for (auto& row : out.scores) {
            if (row[b]) row[b] = 100.0 * *row[b] / *max;
        }
    }
    return out;
}

std::vector<ModelAggregate> aggregate(const ScoreTable& table, const AggregateConfig& cfg) {
    const ScoreTable combined = combine_columns(table, cfg);
    const auto va_set = effective_set(cfg.va_benchmarks, cfg);
    const auto lca_set = effective_set(cfg.lca_benchmarks, cfg);

    // Only the columns in use are normalized; unrelated columns may be empty.
    std::vector<std::string> used = lca_set;
    for (const auto& b : va_set) {
        if (std::find(used.begin(), used.end(), b) == used.end()) used.push_back(b);
    }
    ScoreTable subset;
    subset.models = combined.models;
    std::vector<std::size_t> cols;
    for (const auto& b : used) cols.push_back(combined.benchmark_index(b));
    subset.benchmarks = used;
    for (const auto& row : combined.scores) {
        std::vector<std::optional<double>> cells;
        for (auto c : cols) cells.push_back(row[c]);
        subset.scores.push_back(std::move(cells));
    }
    const ScoreTable norm = normalize_scores(subset, cfg);

    auto mean_over = [&](std::size_t m, const std::vector<std::string>& set) {
        if (set.empty()) return 0.0;
        double sum = 0.0;
        for (const auto& b : set) {
            const auto& cell = norm.scores[m][norm.benchmark_index(b)];
            if (!cell) throw Error(ErrorCode::MissingScore, norm.models[m] + " has no score for '" + b + "'");
            sum += *cell;
        }
        return sum / static_cast<double>(set.size());
    };

    std::vector<ModelAggregate> out;
    for (std::size_t m = 0; m < norm.models.size(); ++m) {
        out.push_back({norm.models[m], mean_over(m, va_set), mean_over(m, lca_set)});
    }
    return out;
}

DeltaReport deltas(const ScoreTable& table, std::string_view base_model, const std::optional<AggregateConfig>& cfg) {
    auto it = std::find(table.models.begin(), table.models.end(), base_model);
    if (it == table.models.end()) throw Error(ErrorCode::UnknownBase, "no base model '" + std::string(base_model) + "'");
    const auto base = static_cast<std::size_t>(it - table.models.begin());

    DeltaReport report;
    report.base_model = std::string(base_model);
    report.deltas = table;
    for (auto& row : report.deltas.scores) {
        for (std::size_t b = 0; b < row.size(); ++b) {
            const auto& ref = table.scores[base][b];
            row[b] = (row[b] && ref) ? std::optional<double>(*row[b] - *ref) : std::nullopt;
        }
    }
    if (cfg) {
        try {
            const auto aggs = aggregate(table, *cfg);
            for (const auto& a : aggs) {
                report.aggregate_deltas.push_back({a.model, a.va - aggs[base].va, a.lca - aggs[base].lca});
            }
        } catch (const Error&) {
            report.aggregate_deltas.clear();
        }
    }
    return report;
}

double population_stddev(std::span<const double> values) {
    if (values.empty()) return 0.0;
    const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    return std::sqrt(ss / static_cast<double>(values.size()));
}

double VarianceReport::sigma_of(std::string_view model, std::string_view benchmark) const {
    auto mi = std::find(models.begin(), models.end(), model);
    auto bi = std::find(benchmarks.begin(), benchmarks.end(), benchmark);
    if (mi == models.end()) throw Error(ErrorCode::UnknownModel, "no model '" + std::string(model) + "'");
    if (bi == benchmarks.end()) throw Error(ErrorCode::UnknownBenchmark, "no column '" + std::string(benchmark) + "'");
    const auto& cell = sigma[static_cast<std::size_t>(mi - models.begin())][static_cast<std::size_t>(bi - benchmarks.begin())];
    if (!cell) throw Error(ErrorCode::MissingScore, "sigma undefined for a column with missing runs");
    return *cell;
}

VarianceReport run_variance(std::span<const ScoreTable> runs) {
    if (runs.size() < 2) throw Error(ErrorCode::InsufficientRuns, "run_variance needs at least two runs");
    for (std::size_t r = 1; r < runs.size(); ++r) {
        if (runs[r].models != runs[0].models || runs[r].benchmarks != runs[0].benchmarks) {
            throw Error(ErrorCode::AxisMismatch, "run " + std::to_string(r) + " has different models or columns");
        }
    }
    VarianceReport report;
    report.models = runs[0].models;
    report.benchmarks = runs[0].benchmarks;
    report.runs = runs.size();
    for (std::size_t m = 0; m < report.models.size(); ++m) {
        std::vector<std::optional<double>> row;
        for (std::size_t b = 0; b < report.benchmarks.size(); ++b) {
            std::vector<double> values;
            for (const auto& run : runs) {
                if (run.scores[m][b]) values.push_back(*run.scores[m][b]);
            }
            row.push_back(values.size() == runs.size() ? std::optional<double>(population_stddev(values))
                                                       : std::nullopt);
        }
        report.sigma.push_back(std::move(row));
    }
    return report;
}

// ---------------------------------------------------------------------------
// Response lengths

bool has_think_block(std::string_view text) {
    const auto open = text.find("<think>");
    if (open == std::string_view::npos) return false;
    return text.find("</think>", open + 7) != std::string_view::npos;
}

std::vector<double> default_length_edges() { return {0, 128, 256, 512, 1024, 2048, 4096, 8192, 16384}; }

LengthStats length_stats(std::span<const ResponseSample> responses, std::vector<double> edges) {
    if (edges.empty() || !std::is_sorted(edges.begin(), edges.end()) ||
        std::adjacent_find(edges.begin(), edges.end()) != edges.end()) {
        throw Error(ErrorCode::InvalidRange, "histogram edges must be strictly increasing");
    }
    LengthStats stats;
    stats.count = responses.size();
    stats.edges = std::move(edges);
    stats.counts.assign(stats.edges.size(), 0);
    if (responses.empty()) return stats;

    std::vector<double> tokens;
    std::size_t thinking = 0;
    for (const auto& r : responses) {
        tokens.push_back(r.tokens);
        if (has_think_block(r.text)) ++thinking;
        // upper_bound - 1: the last edge <= value; values below edges[0] land in bin 0.
        auto it = std::upper_bound(stats.edges.begin(), stats.edges.end(), r.tokens);
        const std::size_t bin = it == stats.edges.begin() ? 0 : static_cast<std::size_t>(it - stats.edges.begin()) - 1;
        ++stats.counts[bin];
    }
    const auto n = static_cast<double>(tokens.size());
    stats.mean_tokens = std::accumulate(tokens.begin(), tokens.end(), 0.0) / n;
    std::sort(tokens.begin(), tokens.end());
    const std::size_t k = tokens.size();
    stats.median = k % 2 == 1 ? tokens[k / 2] : (tokens[k / 2 - 1] + tokens[k / 2]) / 2.0;
    stats.think_fraction = static_cast<double>(thinking) / n;
    return stats;
}

double length_ratio(double mean_a, double mean_b) {
    if (!(mean_b > 0.0)) throw Error(ErrorCode::InvalidRange, "denominator mean must be positive");
    return mean_a / mean_b;
}

std::vector<ResponseSample> load_responses(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
    std::vector<ResponseSample> out;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (trim(line).empty()) continue;
        try {
            const json j = json::parse(line);
            ResponseSample s;
            if (j.contains("text")) s.text = j["text"].get<std::string>();
            else if (j.contains("response")) s.text = j["response"].get<std::string>();
            else throw Error(ErrorCode::InvalidType, "no 'text' field");
            if (j.contains("tokens")) s.tokens = j["tokens"].get<double>();
            else if (j.contains("completion_tokens")) s.tokens = j["completion_tokens"].get<double>();
            else throw Error(ErrorCode::InvalidType, "no 'tokens' field");
            if (!std::isfinite(s.tokens) || s.tokens < 0) throw Error(ErrorCode::InvalidRange, "bad token count");
            out.push_back(std::move(s));
        } catch (const json::exception& e) {
            throw MalformedLineError(n, e.what());
        } catch (const Error& e) {
            throw MalformedLineError(n, e.what());
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reports

json to_json(const ScoreTable& table) {
    json rows = json::object();
    for (std::size_t m = 0; m < table.models.size(); ++m) {
        json row = json::object();
        for (std::size_t b = 0; b < table.benchmarks.size(); ++b) {
            const auto& cell = table.scores[m][b];
            row[table.benchmarks[b]] = cell ? json(*cell) : json(nullptr);
        }
        rows[table.models[m]] = std::move(row);
    }
    return json{{"models", table.models}, {"benchmarks", table.benchmarks}, {"scores", std::move(rows)}};
}

json to_json(std::span<const ModelAggregate> aggregates) {
    json out = json::array();
    for (const auto& a : aggregates) out.push_back({{"model", a.model}, {"va", a.va}, {"lca", a.lca}});
    return out;
}

json to_json(const DeltaReport& report) {
    json j{{"base", report.base_model}, {"deltas", to_json(report.deltas)}};
    if (!report.aggregate_deltas.empty()) j["aggregate_deltas"] = to_json(std::span(report.aggregate_deltas));
    return j;
}

json to_json(const VarianceReport& report) {
    json rows = json::object();
    for (std::size_t m = 0; m < report.models.size(); ++m) {
        json row = json::object();
        for (std::size_t b = 0; b < report.benchmarks.size(); ++b) {
            const auto& cell = report.sigma[m][b];
            row[report.benchmarks[b]] = cell ? json(*cell) : json(nullptr);
        }
        rows[report.models[m]] = std::move(row);
    }
    return json{{"runs", report.runs}, {"sigma", std::move(rows)}};
}

json to_json(const LengthStats& s) {
    json bins = json::array();
    for (std::size_t i = 0; i < s.edges.size(); ++i) {
        bins.push_back({{"lo", s.edges[i]},
                        {"hi", i + 1 < s.edges.size() ? json(s.edges[i + 1]) : json(nullptr)},
                        {"count", s.counts[i]}});
    }
    return json{{"count", s.count},
                {"mean_tokens", s.mean_tokens},
                {"median_tokens", s.median},
                {"think_fraction", s.think_fraction},
                {"histogram", std::move(bins)}};
}

std::string render_table(const ScoreTable& table, int decimals) {
    std::vector<std::vector<std::string>> cells;
    cells.push_back({"model"});
    cells[0].insert(cells[0].end(), table.benchmarks.begin(), table.benchmarks.end());
    for (std::size_t m = 0; m < table.models.size(); ++m) {
        std::vector<std::string> row{table.models[m]};
        for (const auto& c : table.scores[m]) row.push_back(c ? fixed(*c, decimals) : "");
        cells.push_back(std::move(row));
    }
    std::vector<std::size_t> width(cells[0].size(), 0);
    for (const auto& row : cells) {
        for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
    }
    std::ostringstream out;
    for (const auto& row : cells) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i == 0) out << std::left << std::setw(static_cast<int>(width[i])) << row[i];
            else out << "  " << std::right << std::setw(static_cast<int>(width[i])) << row[i];
        }
        out << "\n";
    }
    return out.str();
}

std::string render_aggregates(std::span<const ModelAggregate> aggregates) {
    ScoreTable t;
    t.benchmarks = {"VA", "LCA"};
    for (const auto& a : aggregates) {
        t.models.push_back(a.model);
        t.scores.push_back({a.va, a.lca});
    }
    return render_table(t, 2);
}

std::string histogram_csv(const LengthStats& s) {
    std::ostringstream out;
    out << "lo,hi,count\n";
    for (std::size_t i = 0; i < s.edges.size(); ++i) {
        out << s.edges[i] << ",";
        if (i + 1 < s.edges.size()) out << s.edges[i + 1];
        out << "," << s.counts[i] << "\n";
    }
    return out.str();
}

}  // namespace docsynth
