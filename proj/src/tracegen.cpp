#include "docsynth/tracegen.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "docsynth/text.hpp"

namespace docsynth {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Examples

std::size_t count_user_images(const TrainingExample& example) {
    return static_cast<std::size_t>(std::count_if(example.user.begin(), example.user.end(), [](const UserPart& p) {
        return std::holds_alternative<UserImage>(p);
    }));
}

void validate_example(const TrainingExample& ex) {
    const bool system_gated = ex.system.find(kCotToken) != std::string::npos;
    if (ex.has_cot != system_gated) {
        throw Error(ErrorCode::InvariantViolation, "has_cot disagrees with the <cot> token in the system prompt");
    }
    if (ex.has_cot) {
        if (!ex.assistant.starts_with(kThinkOpen) || count_occurrences(ex.assistant, kThinkClose) != 1) {
            throw Error(ErrorCode::InvariantViolation,
                        "gated assistant turn must open with <think> and close it exactly once");
        }
    } else if (ex.assistant.find(kThinkOpen) != std::string::npos) {
        throw Error(ErrorCode::InvariantViolation, "ungated assistant turn contains <think>");
    }
}

// ---------------------------------------------------------------------------
// Traces

namespace {

std::string wrap_think(const std::string& body) {
    std::string out(kThinkOpen);
    out += '\n';
    out += body;
    out += '\n';
    out += kThinkClose;
    return out;
}

}  // namespace

std::string render_trace_v2(const RankedEvidence& ranked) {
    if (ranked.empty()) return wrap_think(std::string(kNoEvidenceSentinel));
    return wrap_think(render_evidence_lines(ranked));
}

std::string render_trace_v1(std::span<const EvidenceRecord> records, double threshold) {
    std::string body;
    for (const auto& r : records) {
        if (!body.empty()) body += '\n';
        body += page_marker(r.page_index);
        body += ' ';
        body += r.score >= threshold ? single_line(r.snippet) : "irrelevant";
    }
    return wrap_think(body);
}

std::vector<std::string> trace_lines(std::string_view assistant) {
    std::vector<std::string> lines;
    if (!assistant.starts_with(kThinkOpen)) return lines;
    const auto close = assistant.find(kThinkClose);
    if (close == std::string_view::npos) return lines;
    std::string_view body = assistant.substr(kThinkOpen.size(), close - kThinkOpen.size());
    if (body.starts_with('\n')) body.remove_prefix(1);
    if (body.ends_with('\n')) body.remove_suffix(1);
    if (body.empty()) return lines;
    std::size_t start = 0;
    while (true) {
        const auto nl = body.find('\n', start);
        lines.emplace_back(body.substr(start, nl == std::string_view::npos ? std::string_view::npos : nl - start));
        if (nl == std::string_view::npos) break;
        start = nl + 1;
    }
    return lines;
}

// ---------------------------------------------------------------------------
// Assembly

TrainingExample assemble_example_gated(const DocumentRef& doc, const Question& question,
                                       std::span<const EvidenceRecord> records, const RankedEvidence& ranked,
                                       const AnswerRecord& answer, const PipelineConfig& cfg, bool gated) {
    if (trim(answer.text).empty()) {
        throw Error(ErrorCode::EmptyGeneration, "cannot assemble an example without an answer");
    }

    TrainingExample ex;
    ex.system = cfg.system_prompt;
    for (const auto& page : doc.pages()) {
        ex.user.emplace_back(UserText{page_marker(page.index)});
        ex.user.emplace_back(UserImage{page.index, relative_page_path(doc, page)});
    }
    ex.user.emplace_back(UserText{question.text});
    ex.branch = answer.branch;
    ex.meta = ExampleMeta{doc.doc_id(), question.question_type, std::string(to_string(question.source_mode)),
                          std::vector<int>(question.source_pages.begin(), question.source_pages.end()),
                          answer.teacher_model};

    if (gated) {
        const std::string trace = cfg.trace_format == TraceFormat::v1
                                      ? render_trace_v1(records, cfg.relevance_threshold)
                                      : render_trace_v2(ranked);
        if (!ex.system.empty()) ex.system += '\n';
        ex.system += kCotToken;
        ex.assistant = trace + "\n" + answer.text;
        ex.has_cot = true;
        ex.trace_format = cfg.trace_format == TraceFormat::v1 ? TraceFormat::v1 : TraceFormat::v2;
    } else {
        ex.assistant = answer.text;
        ex.has_cot = false;
        ex.trace_format = TraceFormat::none;
    }
    validate_example(ex);
    return ex;
}

TrainingExample assemble_example(const DocumentRef& doc, const Question& question,
                                 std::span<const EvidenceRecord> records, const RankedEvidence& ranked,
                                 const AnswerRecord& answer, const PipelineConfig& cfg, Rng& rng) {
    const bool gated = rng.bernoulli(cfg.cot_probability);
    return assemble_example_gated(doc, question, records, ranked, answer, cfg, gated);
}

TrainingExample strip_think(const TrainingExample& example) {
    TrainingExample out = example;
    const auto open = out.assistant.find(kThinkOpen);
    if (open != std::string::npos) {
        const auto close = out.assistant.find(kThinkClose, open);
        if (close == std::string::npos) {
            throw Error(ErrorCode::MalformedThinkBlock, "<think> without </think>");
        }
        out.assistant = trim(std::string_view(out.assistant).substr(close + kThinkClose.size()));
    } else if (out.assistant.find(kThinkClose) != std::string::npos) {
        throw Error(ErrorCode::MalformedThinkBlock, "</think> without <think>");
    }

    const std::string suffix = "\n" + std::string(kCotToken);
    if (out.system.ends_with(suffix)) {
        out.system.erase(out.system.size() - suffix.size());
    } else if (out.system.find(kCotToken) != std::string::npos) {
        out.system = trim(replace_all(out.system, kCotToken, ""));
    }
    out.has_cot = false;
    out.trace_format = TraceFormat::none;
    return out;
}

// ---------------------------------------------------------------------------
// JSONL

json to_json(const TrainingExample& ex) {
    json user = json::array();
    for (const auto& part : ex.user) {
        if (const auto* t = std::get_if<UserText>(&part)) {
            user.push_back({{"type", "text"}, {"text", t->text}});
        } else {
            const auto& img = std::get<UserImage>(part);
            user.push_back({{"type", "image"}, {"page", img.page_index}, {"path", img.path}});
        }
    }
    return json{{"system", ex.system},
                {"user", std::move(user)},
                {"assistant", ex.assistant},
                {"has_cot", ex.has_cot},
                {"branch", to_string(ex.branch)},
                {"trace_format", to_string(ex.trace_format)},
                {"meta",
                 {{"doc_id", ex.meta.doc_id},
                  {"question_type", ex.meta.question_type},
                  {"source_mode", ex.meta.source_mode},
                  {"source_pages", ex.meta.source_pages},
                  {"teacher_model", ex.meta.teacher_model}}}};
}

TrainingExample example_from_json(const json& j) {
    try {
        TrainingExample ex;
        ex.system = j.at("system").get<std::string>();
        for (const auto& part : j.at("user")) {
            const std::string type = part.at("type").get<std::string>();
            if (type == "text") {
                ex.user.emplace_back(UserText{part.at("text").get<std::string>()});
            } else if (type == "image") {
                ex.user.emplace_back(UserImage{part.at("page").get<int>(), part.at("path").get<std::string>()});
            } else {
                throw Error(ErrorCode::InvalidType, "unknown user part type '" + type + "'");
            }
        }
        ex.assistant = j.at("assistant").get<std::string>();
        ex.has_cot = j.at("has_cot").get<bool>();
        ex.branch = parse_branch(j.at("branch").get<std::string>());
        ex.trace_format = parse_trace_format(j.at("trace_format").get<std::string>());
        if (j.contains("meta")) {
            const json& m = j["meta"];
            ex.meta.doc_id = m.value("doc_id", "");
            ex.meta.question_type = m.value("question_type", "");
            ex.meta.source_mode = m.value("source_mode", "");
            ex.meta.source_pages = m.value("source_pages", std::vector<int>{});
            ex.meta.teacher_model = m.value("teacher_model", "");
        }
        return ex;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::InvalidType, std::string("training example schema: ") + e.what());
    }
}

JsonlWriter::JsonlWriter(const fs::path& path, bool append)
    : out_(path, append ? std::ios::app | std::ios::binary : std::ios::trunc | std::ios::binary) {
    if (!out_) throw Error(ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");
}

void JsonlWriter::write(const TrainingExample& example) { write_raw(to_json(example).dump()); }

void JsonlWriter::write_raw(std::string_view line) {
    out_ << line << '\n';
    out_.flush();
    if (!out_) throw Error(ErrorCode::IoFailure, "write failed");
    ++written_;
}

void write_jsonl(const fs::path& path, std::span<const TrainingExample> examples) {
    JsonlWriter writer(path);
    for (const auto& ex : examples) writer.write(ex);
}

std::vector<TrainingExample> read_jsonl(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
    std::vector<TrainingExample> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        try {
            out.push_back(example_from_json(json::parse(line)));
        } catch (const json::exception& e) {
            throw MalformedLineError(line_no, e.what());
        } catch (const Error& e) {
            throw MalformedLineError(line_no, e.what());
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Mixing

namespace {

std::vector<std::pair<std::string, double>> normalized(std::vector<std::pair<std::string, double>> table) {
    double sum = 0.0;
    for (const auto& [name, p] : table) sum += p;
    for (auto& [name, p] : table) p /= sum;
    return table;
}

}  // namespace

std::vector<std::pair<std::string, double>> luth_composition() {
    return normalized({{"Scholar", 30.0},
                       {"Smoltalk2", 30.0},
                       {"Aya Dataset", 10.0},
                       {"Tulu3 Persona Math", 10.0},
                       {"Tulu3 Persona Instruct", 10.0},
                       {"OpenHermes", 10.0}});
}

std::vector<std::pair<std::string, double>> smoltalk2_composition() {
    // Listed percentages sum to 99.9; normalized here.
    return normalized({{"LongAlign 64K", 18.0},
                       {"Mixture of Thoughts (Science)", 18.0},
                       {"OpenThoughts3 1.2M", 18.0},
                       {"TableGPT", 18.0},
                       {"Tulu3 SFT Personas Instruction Following", 9.0},
                       {"Smoltalk Multilingual (8 languages)", 3.6},
                       {"Smoltalk Smol Magpie Ultra", 3.6},
                       {"Smoltalk Smol Summarize", 3.6},
                       {"Multifaceted Collection", 3.6},
                       {"OpenHermes 2.5", 1.8},
                       {"EverythingLM-data-V3", 1.8},
                       {"Smoltalk Everyday Conversations", 0.9}});
}

namespace {

fs::path resolve_path(const fs::path& base, const std::string& text) {
    fs::path p(text);
    return (p.is_absolute() || base.empty()) ? p : (base / p).lexically_normal();
}

MixSource source_from_json(const json& j, const fs::path& base) {
    if (!j.is_object()) throw Error(ErrorCode::InvalidMixSpec, "mix source must be an object");
    MixSource s;
    s.name = j.value("name", "");
    if (s.name.empty()) throw Error(ErrorCode::InvalidMixSpec, "mix source without a name");
    if (j.contains("path")) s.path = resolve_path(base, j["path"].get<std::string>());
    if (j.contains("count")) {
        if (!j["count"].is_number_integer() || j["count"].get<std::int64_t>() < 0) {
            throw Error(ErrorCode::InvalidMixSpec, s.name + ": count must be a non-negative integer");
        }
        s.count = j["count"].get<std::size_t>();
    }
    if (j.contains("proportion")) s.proportion = j["proportion"].get<double>();

    if (j.contains("preset")) {
        const std::string preset = j["preset"].get<std::string>();
        std::vector<std::pair<std::string, double>> table;
        if (preset == "luth") table = luth_composition();
        else if (preset == "smoltalk2") table = smoltalk2_composition();
        else throw Error(ErrorCode::InvalidMixSpec, "unknown preset '" + preset + "'");
        const json paths = j.value("paths", json::object());
        for (const auto& [part_name, p] : table) {
            if (!paths.contains(part_name)) {
                throw Error(ErrorCode::InvalidMixSpec, s.name + ": preset part '" + part_name + "' has no path");
            }
            MixSource part;
            part.name = part_name;
            part.path = resolve_path(base, paths[part_name].get<std::string>());
            part.proportion = p;
            s.parts.push_back(std::move(part));
        }
    }
    if (j.contains("parts")) {
        for (const auto& part : j["parts"]) s.parts.push_back(source_from_json(part, base));
    }
    return s;
}

constexpr double kProportionTolerance = 1e-9;

/// Resolves every node's count top-down.
void resolve_counts(std::vector<MixSource>& nodes, std::optional<std::size_t> parent_count,
                    const std::string& where) {
    if (nodes.empty()) throw Error(ErrorCode::InvalidMixSpec, where + ": no sources");
    const bool any_count = std::any_of(nodes.begin(), nodes.end(), [](const MixSource& s) { return s.count.has_value(); });
    const bool any_prop =
        std::any_of(nodes.begin(), nodes.end(), [](const MixSource& s) { return s.proportion.has_value(); });
    if (any_count && any_prop) {
        throw Error(ErrorCode::InvalidMixSpec, where + ": siblings mix counts and proportions");
    }
    if (any_prop) {
        if (!parent_count) throw Error(ErrorCode::InvalidMixSpec, where + ": proportions need a total");
        std::vector<double> props;
        for (const auto& s : nodes) {
            if (!s.proportion) throw Error(ErrorCode::InvalidMixSpec, where + ": '" + s.name + "' lacks a proportion");
            if (*s.proportion < 0.0) throw Error(ErrorCode::InvalidMixSpec, s.name + ": negative proportion");
            props.push_back(*s.proportion);
        }
        const double sum = std::accumulate(props.begin(), props.end(), 0.0);
        if (std::abs(sum - 1.0) > kProportionTolerance) {
            throw Error(ErrorCode::InvalidMixSpec, where + ": proportions sum to " + std::to_string(sum));
        }
        const auto counts = allocate_counts(props, *parent_count);
        for (std::size_t i = 0; i < nodes.size(); ++i) nodes[i].count = counts[i];
    } else {
        std::size_t sum = 0;
        for (const auto& s : nodes) {
            if (!s.count) throw Error(ErrorCode::InvalidMixSpec, where + ": '" + s.name + "' has no count");
            sum += *s.count;
        }
        if (parent_count && sum != *parent_count) {
            throw Error(ErrorCode::InvalidMixSpec, where + ": counts sum to " + std::to_string(sum) + ", expected " +
                                                       std::to_string(*parent_count));
        }
    }
    for (auto& s : nodes) {
        const bool leaf = s.parts.empty();
        if (leaf && s.path.empty()) throw Error(ErrorCode::InvalidMixSpec, s.name + ": leaf source needs a path");
        if (!leaf && !s.path.empty()) throw Error(ErrorCode::InvalidMixSpec, s.name + ": has both path and parts");
        if (!leaf) resolve_counts(s.parts, s.count, where + "/" + s.name);
    }
}

/// Non-blank lines of a JSONL file, with their 1-based line numbers.
std::vector<std::pair<std::size_t, std::string>> read_lines(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoFailure, "cannot open mix source " + path.string());
    std::vector<std::pair<std::size_t, std::string>> lines;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!trim(line).empty()) lines.emplace_back(n, std::move(line));
    }
    return lines;
}

void draw_leaves(const std::vector<MixSource>& nodes, const std::string& prefix, std::uint64_t seed,
                 std::vector<std::uint64_t>& path, MixResult& result) {
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        const auto& s = nodes[i];
        const std::string name = prefix.empty() ? s.name : prefix + "/" + s.name;
        path.push_back(i);
        if (!s.parts.empty()) {
            draw_leaves(s.parts, name, seed, path, result);
            path.pop_back();
            continue;
        }
        auto lines = read_lines(s.path);
        const std::size_t want = *s.count;
        if (want > lines.size()) {
            throw Error(ErrorCode::SourceTooSmall, name + ": requested " + std::to_string(want) + " of " +
                                                       std::to_string(lines.size()) + " available examples");
        }
        // Selection sampling (Knuth's algorithm S): uniform subset, file order kept.
        std::uint64_t h = 0;
        for (auto p : path) h = h * 1'000'003ULL + p + 1;
        Rng rng = Rng::derive(seed, {0x6d6978ULL, h});
        std::size_t needed = want;
        for (std::size_t k = 0; k < lines.size() && needed > 0; ++k) {
            const std::size_t remaining = lines.size() - k;
            if (rng.below(remaining) < needed) {
                const auto& [line_no, text] = lines[k];
                try {
                    if (!json::parse(text).is_object()) throw Error(ErrorCode::InvalidType, "not a JSON object");
                } catch (const json::exception& e) {
                    throw MalformedLineError(line_no, s.path.string() + ": " + e.what());
                } catch (const Error& e) {
                    throw MalformedLineError(line_no, s.path.string() + ": " + e.what());
                }
                result.lines.push_back(std::move(lines[k].second));
                --needed;
            }
        }
        result.draws.push_back({name, want, lines.size()});
        path.pop_back();
    }
}

}  // namespace

MixSpec mix_spec_from_json(const json& j, const fs::path& base_dir) {
    if (!j.is_object() || !j.contains("sources") || !j["sources"].is_array()) {
        throw Error(ErrorCode::InvalidMixSpec, "mix spec needs a 'sources' list");
    }
    MixSpec spec;
    for (const auto& s : j["sources"]) spec.sources.push_back(source_from_json(s, base_dir));
    if (j.contains("total")) spec.total = j["total"].get<std::size_t>();
    spec.rng_seed = j.value("seed", std::uint64_t{0});
    return spec;
}

std::vector<std::size_t> allocate_counts(std::span<const double> proportions, std::size_t total) {
    std::vector<std::size_t> counts(proportions.size(), 0);
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < proportions.size(); ++i) {
        const double exact = proportions[i] * static_cast<double>(total);
        // Guard against 0.3*10000 = 2999.9999999999995.
        const double floored = std::floor(exact + 1e-9);
        counts[i] = static_cast<std::size_t>(floored);
        assigned += counts[i];
        remainders.emplace_back(exact - floored, i);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t k = 0; assigned < total && k < remainders.size(); ++k, ++assigned) {
        ++counts[remainders[k].second];
    }
    while (assigned > total) {
        // Only reachable through the epsilon guard; take back from the largest.
        auto it = std::max_element(counts.begin(), counts.end());
        --*it;
        --assigned;
    }
    return counts;
}

MixResult mix_datasets(const MixSpec& spec) {
    std::vector<MixSource> sources = spec.sources;
    resolve_counts(sources, spec.total, "mix");
    MixResult result;
    std::vector<std::uint64_t> path;
    draw_leaves(sources, "", spec.rng_seed, path, result);
    Rng shuffle_rng = Rng::derive(spec.rng_seed, {0x73687566ULL});
    shuffle_rng.shuffle(std::span<std::string>(result.lines));
    return result;
}

// ---------------------------------------------------------------------------
// Reporting

double mean_of(std::span<const double> values) {
    if (values.empty()) return 0.0;
    return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

double median_of(std::vector<double> values) {
    if (values.empty()) return 0.0;
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    return n % 2 == 1 ? values[n / 2] : (values[n / 2 - 1] + values[n / 2]) / 2.0;
}

DatasetReport dataset_report(std::span<const TrainingExample> examples) {
    DatasetReport report;
    report.count = examples.size();
    static constexpr double edges[] = {0, 1, 2, 4, 8, 16, 25, 32, 64, 128, 256};
    for (std::size_t i = 0; i < std::size(edges); ++i) {
        const double hi = i + 1 < std::size(edges) ? edges[i + 1] : std::numeric_limits<double>::infinity();
        report.trace_lines_histogram.push_back({edges[i], hi, 0});
    }
    if (examples.empty()) return report;

    std::vector<double> pages;
    std::size_t cot = 0;
    std::size_t text = 0;
    for (const auto& ex : examples) {
        pages.push_back(static_cast<double>(count_user_images(ex)));
        if (ex.branch == Branch::text) ++text;
        if (!ex.has_cot) continue;
        ++cot;
        const auto n = static_cast<double>(trace_lines(ex.assistant).size());
        for (auto& bin : report.trace_lines_histogram) {
            if (n >= bin.lo && n < bin.hi) {
                ++bin.count;
                break;
            }
        }
    }
    const auto total = static_cast<double>(examples.size());
    report.pages_mean = mean_of(pages);
    report.pages_median = median_of(std::move(pages));
    report.cot_fraction = static_cast<double>(cot) / total;
    report.text_fraction = static_cast<double>(text) / total;
    report.visual_fraction = 1.0 - report.text_fraction;
    return report;
}

json to_json(const DatasetReport& r) {
    json bins = json::array();
    for (const auto& b : r.trace_lines_histogram) {
        bins.push_back({{"lo", b.lo}, {"hi", std::isinf(b.hi) ? json(nullptr) : json(b.hi)}, {"count", b.count}});
    }
    return json{{"count", r.count},
                {"pages_mean", r.pages_mean},
                {"pages_median", r.pages_median},
                {"cot_fraction", r.cot_fraction},
                {"branch_fractions", {{"visual", r.visual_fraction}, {"text", r.text_fraction}}},
                {"trace_lines_histogram", std::move(bins)}};
}

}  // namespace docsynth
