#include "docsynth/commands.hpp"

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <fstream>
#include <iostream>
#include <mutex>
#include <thread>

#include <CLI11.hpp>

#include "docsynth/answer.hpp"
#include "docsynth/evalstats.hpp"
#include "docsynth/extract.hpp"
#include "docsynth/merge.hpp"
#include "docsynth/prompts.hpp"
#include "docsynth/qgen.hpp"

namespace docsynth {

using nlohmann::json;

double GenerationRun::failure_rate() const noexcept {
    if (counts.backend_calls == 0) return 0.0;
    return static_cast<double>(counts.failed_calls) / static_cast<double>(counts.backend_calls);
}

namespace {

struct DocumentResult {
    std::vector<TrainingExample> examples;
    std::vector<json> log;
    GenerationCounts counts;
    std::vector<StageFailure> failures;
};

DocumentResult process_document(std::size_t doc_idx, const DocumentRef& doc, const PipelineConfig& cfg,
                                 ChatBackend& backend, const RetryPolicy& policy, const PromptTemplates& prompts) {
    DocumentResult res;
    res.counts.documents = 1;
    res.counts.pages = static_cast<std::size_t>(doc.page_count());

    for (int q = 0; q < cfg.questions_per_document; ++q) {
        Rng rng = Rng::derive(cfg.rng_seed, {doc_idx, static_cast<std::uint64_t>(q)});
        ++res.counts.questions_attempted;
        auto fail = [&](std::string stage, const Error& e) {
            res.failures.push_back({doc.doc_id(), q, std::move(stage), e.what()});
            logger().log(LogLevel::warn, "stage_failed",
                         {{"doc_id", doc.doc_id()}, {"question", q}, {"stage", res.failures.back().stage},
                          {"error", e.what()}});
        };

        const QuestionSpec spec = draw_question_spec(doc.page_count(), cfg, rng);
        const std::set<int> pages = sample_source_pages(doc.page_count(), spec, rng);

        Question question;
        ++res.counts.backend_calls;
        try {
            question = generate_question(doc, pages, spec, backend, policy, cfg, prompts);
        } catch (const Error& e) {
            ++res.counts.failed_calls;
            fail("question", e);
            continue;
        }
        ++res.counts.questions;

        const DocumentExtraction extraction = extract_document(doc, question, cfg, backend, policy, prompts);
        res.counts.extractions += extraction.records.size();
        res.counts.degraded_pages += extraction.degraded_pages;
        res.counts.backend_calls += extraction.backend_calls;
        res.counts.failed_calls += extraction.failed_calls;
        for (const auto& event : extraction.events) {
            json line = to_json(event);
            line["doc_id"] = doc.doc_id();
            line["question"] = q;
            res.log.push_back(std::move(line));
        }

        const RankedEvidence ranked = rank_and_select(extraction.records, cfg);
        const Branch branch = choose_branch(rng, cfg.text_branch_ratio);

        AnswerRecord answer;
        ++res.counts.backend_calls;
        try {
            answer = generate_answer(branch, doc, ranked, question, backend, policy, cfg, prompts);
        } catch (const Error& e) {
            ++res.counts.failed_calls;
            fail("answer", e);
            continue;
        }
        ++res.counts.answers;

        try {
            TrainingExample ex = assemble_example(doc, question, extraction.records, ranked, answer, cfg, rng);
            if (ex.has_cot) ++res.counts.gated_examples;
            res.examples.push_back(std::move(ex));
            ++res.counts.examples;
        } catch (const Error& e) {
            fail("assemble", e);
        }
    }
    return res;
}

void add_counts(GenerationCounts& into, const GenerationCounts& c) {
    into.documents += c.documents;
    into.pages += c.pages;
    into.questions_attempted += c.questions_attempted;
    into.questions += c.questions;
    into.extractions += c.extractions;
    into.degraded_pages += c.degraded_pages;
    into.answers += c.answers;
    into.examples += c.examples;
    into.gated_examples += c.gated_examples;
    into.backend_calls += c.backend_calls;
    into.failed_calls += c.failed_calls;
}

json to_json(const GenerationCounts& c) {
    return json{{"documents", c.documents},
                {"pages", c.pages},
                {"questions_attempted", c.questions_attempted},
                {"questions", c.questions},
                {"extractions", c.extractions},
                {"degraded_pages", c.degraded_pages},
                {"answers", c.answers},
                {"examples", c.examples},
                {"gated_examples", c.gated_examples},
                {"backend_calls", c.backend_calls},
                {"failed_calls", c.failed_calls}};
}

}  // namespace

GenerationRun generate_dataset(const std::vector<DocumentRef>& corpus, const PipelineConfig& cfg,
                               ChatBackend& backend, const DocumentSink& sink) {
    const RetryPolicy policy = retry_policy(cfg);
    const PromptTemplates prompts = cfg.prompt_dir.empty() ? PromptTemplates{} : PromptTemplates::load(cfg.prompt_dir);

    std::vector<std::optional<DocumentResult>> results(corpus.size());
    GenerationRun run;
    std::mutex mu;
    std::size_t flushed = 0;

    // Emits the finished prefix in document order.
    auto flush_ready = [&] {
        while (flushed < results.size() && results[flushed]) {
            auto& r = *results[flushed];
            if (sink) sink(corpus[flushed], r.examples, r.log);
            add_counts(run.counts, r.counts);
            run.failures.insert(run.failures.end(), r.failures.begin(), r.failures.end());
            std::move(r.examples.begin(), r.examples.end(), std::back_inserter(run.examples));
            results[flushed]->examples.clear();
            results[flushed]->log.clear();
            ++flushed;
        }
    };

    const auto workers = static_cast<std::size_t>(std::max(1, cfg.document_workers));
    if (workers == 1 || corpus.size() <= 1) {
        for (std::size_t i = 0; i < corpus.size(); ++i) {
            results[i] = process_document(i, corpus[i], cfg, backend, policy, prompts);
            flush_ready();
        }
        return run;
    }

    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < std::min(workers, corpus.size()); ++w) {
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < corpus.size(); i = next++) {
                    try {
                        auto r = process_document(i, corpus[i], cfg, backend, policy, prompts);
                        std::lock_guard lock(mu);
                        results[i] = std::move(r);
                        flush_ready();
                    } catch (...) {
                        std::lock_guard lock(mu);
                        if (!failure) failure = std::current_exception();
                        next = corpus.size();
                    }
                }
            });
        }
    }
    if (failure) std::rethrow_exception(failure);
    return run;
}

// ---------------------------------------------------------------------------
// generate

namespace {

fs::path guess_manifest_path(const fs::path& config_path) {
    try {
        std::ifstream in(config_path);
        const json raw = json::parse(in);
        if (raw.contains("output") && raw["output"].is_string()) {
            fs::path out = raw["output"].get<std::string>();
            if (out.is_relative()) out = config_path.parent_path() / out;
            return fs::path(out.string() + ".manifest.json");
        }
    } catch (...) {
    }
    return fs::path(config_path.string() + ".manifest.json");
}

void write_json_file(const fs::path& path, const json& j) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    out << j.dump(2) << '\n';
    if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
}

}  // namespace

GenerateOutcome cmd_generate(const fs::path& config_path, ChatBackend* backend_override) {
    const auto t0 = std::chrono::steady_clock::now();
    GenerateOutcome outcome;
    json& manifest = outcome.manifest;
    manifest["command"] = "generate";
    manifest["config_path"] = config_path.string();

    auto finish = [&](int code, std::string status) {
        outcome.exit_code = code;
        manifest["status"] = std::move(status);
        manifest["exit_code"] = code;
        manifest["wall_time_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        try {
            write_json_file(outcome.manifest_path, manifest);
        } catch (const std::exception& e) {
            logger().log(LogLevel::error, "manifest_write_failed", {{"error", e.what()}});
        }
        return outcome;
    };

    PipelineConfig cfg;
    try {
        cfg = load_config(config_path);
        if (cfg.output.empty()) throw Error(ErrorCode::InvalidType, "config needs 'output'");
        if (cfg.documents_dir.empty()) throw Error(ErrorCode::InvalidType, "config needs 'documents_dir'");
    } catch (const Error& e) {
        outcome.manifest_path = guess_manifest_path(config_path);
        manifest["error"] = e.what();
        logger().log(LogLevel::error, "config_error", {{"error", e.what()}});
        return finish(kExitUsage, "config_error");
    }

    outcome.manifest_path = fs::path(cfg.output.string() + ".manifest.json");
    const fs::path log_dir =
        cfg.extraction_log_dir.empty() ? fs::path(cfg.output.string() + ".logs") : cfg.extraction_log_dir;
    manifest["config"] = to_json(cfg);
    manifest["rng_seed"] = cfg.rng_seed;
    manifest["outputs"] = {{"jsonl", cfg.output.string()},
                           {"manifest", outcome.manifest_path.string()},
                           {"extraction_logs", log_dir.string()}};

    std::vector<DocumentRef> corpus;
    std::unique_ptr<ChatBackend> owned;
    try {
        corpus = load_corpus(cfg.documents_dir);
        if (!backend_override) owned = make_backend(cfg);
    } catch (const Error& e) {
        manifest["error"] = e.what();
        logger().log(LogLevel::error, "input_error", {{"error", e.what()}});
        return finish(kExitUsage, "input_error");
    }
    ChatBackend& backend = backend_override ? *backend_override : *owned;

    GenerationRun run;
    try {
        if (cfg.output.has_parent_path()) fs::create_directories(cfg.output.parent_path());
        fs::create_directories(log_dir);
        JsonlWriter writer(cfg.output);
        auto sink = [&](const DocumentRef& doc, std::span<const TrainingExample> examples,
                        std::span<const json> log) {
            for (const auto& ex : examples) writer.write(ex);
            std::ofstream out(log_dir / (doc.doc_id() + ".jsonl"), std::ios::binary | std::ios::trunc);
            for (const auto& line : log) out << line.dump() << '\n';
            logger().log(LogLevel::info, "document_done",
                         {{"doc_id", doc.doc_id()}, {"examples", examples.size()}});
        };
        run = generate_dataset(corpus, cfg, backend, sink);
    } catch (const std::exception& e) {
        manifest["error"] = e.what();
        logger().log(LogLevel::error, "runtime_error", {{"error", e.what()}});
        return finish(kExitRuntime, "runtime_error");
    }

    manifest["counts"] = to_json(run.counts);
    manifest["failure_rate"] = run.failure_rate();
    manifest["failure_rate_ceiling"] = cfg.failure_rate_ceiling;
    json failures = json::array();
    for (const auto& f : run.failures) {
        failures.push_back({{"doc_id", f.doc_id}, {"question", f.question}, {"stage", f.stage}, {"error", f.error}});
    }
    manifest["failures"] = std::move(failures);

    if (run.failure_rate() > cfg.failure_rate_ceiling) {
        return finish(kExitRuntime, "failure_rate_exceeded");
    }
    return finish(kExitOk, "ok");
}

// ---------------------------------------------------------------------------
// CLI

namespace {

struct BuildDatasetArgs {
    std::string mix;
    std::string out;
    std::string report;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> total;
    bool strip = false;
    bool json_out = false;
};

int run_build_dataset(const BuildDatasetArgs& a, std::ostream& out) {
    std::ifstream in(a.mix);
    if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + a.mix);
    json raw;
    try {
        raw = json::parse(in);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::InvalidMixSpec, e.what());
    }
    MixSpec spec = mix_spec_from_json(raw, fs::path(a.mix).parent_path());
    if (a.seed) spec.rng_seed = *a.seed;
    if (a.total) spec.total = *a.total;
    MixResult mix = mix_datasets(spec);

    // Lines in the synthetic schema feed the report; external lines pass through.
    std::vector<TrainingExample> synthetic;
    std::size_t external = 0;
    for (auto& line : mix.lines) {
        try {
            TrainingExample ex = example_from_json(json::parse(line));
            if (a.strip) {
                ex = strip_think(ex);
                line = to_json(ex).dump();
            }
            synthetic.push_back(std::move(ex));
        } catch (const Error&) {
            ++external;
        } catch (const json::exception&) {
            ++external;
        }
    }

    const fs::path out_path(a.out);
    if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
    JsonlWriter writer(out_path);
    for (const auto& line : mix.lines) writer.write_raw(line);

    json report{{"total", mix.lines.size()}, {"synthetic", synthetic.size()}, {"external", external}};
    json draws = json::array();
    for (const auto& d : mix.draws) draws.push_back({{"source", d.name}, {"count", d.count}, {"available", d.available}});
    report["draws"] = std::move(draws);
    report["synthetic_report"] = to_json(dataset_report(synthetic));
    if (!a.report.empty()) write_json_file(a.report, report);

    if (a.json_out) {
        out << report.dump(2) << '\n';
    } else {
        out << "wrote " << mix.lines.size() << " lines to " << a.out << "\n";
        for (const auto& d : mix.draws) out << "  " << d.name << ": " << d.count << " of " << d.available << "\n";
        const auto r = dataset_report(synthetic);
        out << "synthetic examples: " << r.count << ", <cot> fraction " << r.cot_fraction << ", mean pages "
            << r.pages_mean << "\n";
    }
    return kExitOk;
}

struct MergeArgs {
    std::string base;
    std::vector<std::string> tuned;
    std::vector<double> alpha;
    std::string out;
    std::string accum = "auto";
    int workers = 1;
    std::size_t chunk_elements = std::size_t{1} << 20;
    bool json_out = false;
};

int run_merge(const MergeArgs& a, std::ostream& out, std::ostream& err) {
    if (a.tuned.size() != a.alpha.size()) {
        err << "merge: give one --alpha per --tuned (" << a.tuned.size() << " vs " << a.alpha.size() << ")\n";
        return kExitUsage;
    }
    MergeOptions options;
    options.accum = parse_accum_dtype(a.accum);
    options.workers = a.workers;
    options.chunk_elements = a.chunk_elements;
    std::vector<PlanStep> plan;
    for (std::size_t i = 0; i < a.tuned.size(); ++i) plan.push_back({a.tuned[i], a.alpha[i]});
    const TensorStore result = apply_merge_plan(a.base, plan, a.out, options);

    json j{{"out", a.out}, {"tensors", result.total_tensors()}, {"shards", result.shards().size()}};
    json steps = json::array();
    for (const auto& s : plan) steps.push_back({{"tuned", s.tuned.string()}, {"alpha", s.alpha}});
    j["steps"] = std::move(steps);
    if (a.json_out) out << j.dump(2) << '\n';
    else out << "merged " << result.total_tensors() << " tensors in " << plan.size() << " step(s) into " << a.out << "\n";
    return kExitOk;
}

struct EvalAggArgs {
    std::string scores;
    std::string config;
    std::string base;
    std::vector<std::string> runs;
    std::string mmlb_combine;
    std::vector<std::string> normalize_over;
    bool json_out = false;
};

int run_eval_agg(const EvalAggArgs& a, std::ostream& out, std::ostream& err) {
    if (a.scores.empty() && a.runs.empty()) {
        err << "eval-agg: need --scores and/or --runs\n";
        return kExitUsage;
    }
    AggregateConfig cfg = default_aggregate_config();
    if (!a.config.empty()) {
        std::ifstream in(a.config);
        if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + a.config);
        cfg = aggregate_config_from_json(json::parse(in));
    }
    if (!a.mmlb_combine.empty()) cfg.mmlb_combine = parse_mmlb_combine(a.mmlb_combine);
    if (!a.normalize_over.empty()) cfg.normalization_models = a.normalize_over;

    json j{{"config", to_json(cfg)}};
    std::ostringstream text;
    if (!a.scores.empty()) {
        const ScoreTable table = load_score_csv(a.scores);
        const auto aggs = aggregate(table, cfg);
        j["aggregates"] = to_json(std::span(aggs));
        text << render_aggregates(aggs);
        if (!a.base.empty()) {
            const DeltaReport d = deltas(table, a.base, cfg);
            j["deltas"] = to_json(d);
            text << "\ndeltas vs " << a.base << "\n" << render_table(d.deltas);
        }
    }
    if (!a.runs.empty()) {
        std::vector<ScoreTable> runs;
        for (const auto& r : a.runs) runs.push_back(load_score_csv(r));
        const VarianceReport v = run_variance(runs);
        j["run_variance"] = to_json(v);
        ScoreTable sigma;
        sigma.models = v.models;
        sigma.benchmarks = v.benchmarks;
        sigma.scores = v.sigma;
        text << "\npopulation sigma over " << v.runs << " runs\n" << render_table(sigma, 3);
    }
    if (a.json_out) out << j.dump(2) << '\n';
    else out << text.str();
    return kExitOk;
}

struct StatsArgs {
    std::string responses;
    std::string compare;
    std::string dataset;
    std::vector<double> edges;
    std::string histogram_csv_path;
    bool json_out = false;
};

int run_stats(const StatsArgs& a, std::ostream& out, std::ostream& err) {
    if (a.responses.empty() && a.dataset.empty()) {
        err << "stats: need --responses or --dataset\n";
        return kExitUsage;
    }
    json j = json::object();
    std::ostringstream text;
    const auto edges = a.edges.empty() ? default_length_edges() : a.edges;
    if (!a.responses.empty()) {
        const auto samples = load_responses(a.responses);
        const LengthStats s = length_stats(samples, edges);
        j["responses"] = to_json(s);
        text << "responses: " << s.count << "  mean tokens " << s.mean_tokens << "  median " << s.median
             << "  think fraction " << s.think_fraction << "\n";
        if (!a.histogram_csv_path.empty()) {
            std::ofstream h(a.histogram_csv_path);
            h << histogram_csv(s);
        }
        if (!a.compare.empty()) {
            const LengthStats c = length_stats(load_responses(a.compare), edges);
            const double ratio = length_ratio(c.mean_tokens, s.mean_tokens);
            j["compare"] = to_json(c);
            j["mean_ratio"] = ratio;
            text << "compare: mean tokens " << c.mean_tokens << "  ratio compare/responses " << ratio << "\n";
        }
    }
    if (!a.dataset.empty()) {
        const auto examples = read_jsonl(a.dataset);
        const DatasetReport r = dataset_report(examples);
        j["dataset"] = to_json(r);
        text << "dataset: " << r.count << " examples  <cot> fraction " << r.cot_fraction << "  mean pages "
             << r.pages_mean << "  median pages " << r.pages_median << "  text branch " << r.text_fraction << "\n";
    }
    if (a.json_out) out << j.dump(2) << '\n';
    else out << text.str();
    return kExitOk;
}

LogLevel parse_log_level(const std::string& s) {
    if (s == "debug") return LogLevel::debug;
    if (s == "info") return LogLevel::info;
    if (s == "warn") return LogLevel::warn;
    if (s == "error") return LogLevel::error;
    throw Error(ErrorCode::InvalidType, "log level must be debug, info, warn or error");
}

}  // namespace

int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Synthetic document-reasoning data pipeline and model tooling", "docsynth"};
    app.require_subcommand(1);

    std::string log_level = "info";
    std::string log_file;
    app.add_option("--log-level", log_level, "debug|info|warn|error")->capture_default_str();
    app.add_option("--log-file", log_file, "JSONL log destination (default stderr)");

    std::string config_path;
    auto* gen = app.add_subcommand("generate", "Run the synthetic data pipeline over a document corpus");
    gen->add_option("-c,--config,config", config_path, "Pipeline config JSON")->required();
    bool gen_json = false;
    gen->add_flag("--json", gen_json, "Print the run manifest as JSON");

    BuildDatasetArgs bd;
    auto* build = app.add_subcommand("build-dataset", "Mix JSONL sources into a training corpus");
    build->add_option("--mix", bd.mix, "Mix spec JSON")->required();
    build->add_option("-o,--out", bd.out, "Output JSONL")->required();
    build->add_option("--report", bd.report, "Write the report JSON here");
    build->add_option("--seed", bd.seed, "Override the spec's seed");
    build->add_option("--total", bd.total, "Override the spec's total");
    build->add_flag("--strip-think", bd.strip, "Emit the no-think variant of synthetic examples");
    build->add_flag("--json", bd.json_out);

    MergeArgs ma;
    auto* merge = app.add_subcommand("merge", "Task-arithmetic merge of safetensors checkpoints");
    merge->add_option("--base", ma.base, "Base checkpoint (directory or .safetensors)")->required();
    merge->add_option("--tuned", ma.tuned, "Tuned checkpoint; repeat for a multi-step plan")->required();
    merge->add_option("--alpha", ma.alpha, "Merge strength; one per --tuned")->required();
    merge->add_option("-o,--out", ma.out, "Output directory")->required();
    merge->add_option("--accum-dtype", ma.accum, "auto|f32|f64")->capture_default_str();
    merge->add_option("--workers", ma.workers, "Shards merged concurrently")->capture_default_str();
    merge->add_option("--chunk-elements", ma.chunk_elements, "Elements per streaming chunk")->capture_default_str();
    merge->add_flag("--json", ma.json_out);

    EvalAggArgs ea;
    auto* eval = app.add_subcommand("eval-agg", "Normalize benchmark scores and compute VA/LCA, deltas, run variance");
    eval->add_option("--scores", ea.scores, "Score table CSV");
    eval->add_option("--config", ea.config, "Aggregate config JSON");
    eval->add_option("--base", ea.base, "Base model for deltas");
    eval->add_option("--runs", ea.runs, "Repeated-run CSVs for run variance");
    eval->add_option("--mmlb-combine", ea.mmlb_combine, "separate|averaged");
    eval->add_option("--normalize-over", ea.normalize_over, "Models defining per-benchmark maxima");
    eval->add_flag("--json", ea.json_out);

    StatsArgs sa;
    auto* stats = app.add_subcommand("stats", "Response length and think-usage statistics");
    stats->add_option("--responses", sa.responses, "Response JSONL ({text, tokens})");
    stats->add_option("--compare", sa.compare, "Second response JSONL; reports the mean ratio");
    stats->add_option("--dataset", sa.dataset, "Training JSONL for a dataset report");
    stats->add_option("--edges", sa.edges, "Histogram bin edges");
    stats->add_option("--histogram-csv", sa.histogram_csv_path, "Write histogram bins as CSV");
    stats->add_flag("--json", sa.json_out);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    std::ofstream log_stream;
    try {
        logger().set_level(parse_log_level(log_level));
        if (!log_file.empty()) {
            log_stream.open(log_file, std::ios::app);
            if (!log_stream) throw Error(ErrorCode::IoFailure, "cannot open log file " + log_file);
            logger().set_sink(&log_stream);
        } else {
            logger().set_sink(&err);
        }
    } catch (const Error& e) {
        err << e.what() << "\n";
        return kExitUsage;
    }
    struct SinkReset {
        ~SinkReset() { logger().set_sink(nullptr); }
    } reset;

    try {
        if (*gen) {
            const auto outcome = cmd_generate(config_path);
            if (gen_json) {
                out << outcome.manifest.dump(2) << '\n';
            } else {
                out << "status " << outcome.manifest.value("status", "") << ", manifest "
                    << outcome.manifest_path.string() << "\n";
            }
            return outcome.exit_code;
        }
        if (*build) return run_build_dataset(bd, out);
        if (*merge) return run_merge(ma, out, err);
        if (*eval) return run_eval_agg(ea, out, err);
        if (*stats) return run_stats(sa, out, err);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}

}  // namespace docsynth
