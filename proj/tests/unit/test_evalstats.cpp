#include <gtest/gtest.h>

#include <algorithm>
#include <functional>

#include "docsynth/evalstats.hpp"
#include "support.hpp"

using namespace docsynth;
using docsynth::testing::kFixtureDir;
using docsynth::testing::TempDir;
using docsynth::testing::write_text;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "expected an Error";
    return ErrorCode::InvariantViolation;
}

const ModelAggregate& find(const std::vector<ModelAggregate>& aggs, const std::string& model) {
    return *std::find_if(aggs.begin(), aggs.end(), [&](const auto& a) { return a.model == model; });
}

AggregateConfig simple_config(std::vector<std::string> va, std::vector<std::string> lca) {
    AggregateConfig cfg = default_aggregate_config();
    cfg.va_benchmarks = std::move(va);
    cfg.lca_benchmarks = std::move(lca);
    return cfg;
}

}  // namespace

TEST(ScoreCsv, ParseAndRoundTrip) {
    const auto t = parse_score_csv("model,A,\"B, quoted\"\nm1,50,\nm2,25.5,10\n");
    EXPECT_EQ(t.benchmarks, (std::vector<std::string>{"A", "B, quoted"}));
    EXPECT_FALSE(t.get("m1", "B, quoted").has_value());
    EXPECT_DOUBLE_EQ(*t.get("m2", "A"), 25.5);
    const auto again = parse_score_csv(to_csv(t));
    EXPECT_EQ(again.scores, t.scores);
    EXPECT_EQ(code_of([] { parse_score_csv("model,A\nm1,abc\n"); }), ErrorCode::MalformedTable);
}

TEST(Normalize, TwoByTwo) {
    const auto t = parse_score_csv("model,A,B\nm1,50,20\nm2,25,40\n");
    const auto cfg = simple_config({"A", "B"}, {"A", "B"});
    const auto n = normalize_scores(t, cfg);
    EXPECT_DOUBLE_EQ(*n.get("m1", "A"), 100.0);
    EXPECT_DOUBLE_EQ(*n.get("m1", "B"), 50.0);
    EXPECT_DOUBLE_EQ(*n.get("m2", "A"), 50.0);
    EXPECT_DOUBLE_EQ(*n.get("m2", "B"), 100.0);
    const auto aggs = aggregate(t, cfg);
    EXPECT_DOUBLE_EQ(find(aggs, "m1").va, 75.0);
    EXPECT_DOUBLE_EQ(find(aggs, "m2").va, 75.0);
}

TEST(Normalize, SingleModelAndZeroColumn) {
    const auto cfg = simple_config({"A"}, {"A"});
    EXPECT_DOUBLE_EQ(find(aggregate(parse_score_csv("model,A\nonly,37\n"), cfg), "only").va, 100.0);
    EXPECT_EQ(code_of([&] { normalize_scores(parse_score_csv("model,A\nm1,0\nm2,0\n"), cfg); }),
              ErrorCode::NonPositiveMax);
}

TEST(Normalize, RestrictedNormalizationSet) {
    auto cfg = simple_config({"A"}, {"A"});
    cfg.normalization_models = {"ref"};
    const auto n = normalize_scores(parse_score_csv("model,A\nref,40\nbetter,60\n"), cfg);
    EXPECT_DOUBLE_EQ(*n.get("better", "A"), 150.0);
}

TEST(Aggregate, ReproducesReferenceVisualAverages) {
    const auto table = load_score_csv(kFixtureDir / "scores.csv");
    const auto aggs = aggregate(table, default_aggregate_config());
    EXPECT_NEAR(find(aggs, "Qwen3-VL-235B-A22B-Instruct").va, 98.4, 0.2);
    EXPECT_NEAR(find(aggs, "Qwen3-VL-32B Synthetic Reasoning").va, 95.0, 0.2);
    EXPECT_NEAR(find(aggs, "Qwen3-VL-32B-Instruct").va, 93.7, 0.2);
}

TEST(Aggregate, AveragedMmlbVariant) {
    auto cfg = default_aggregate_config();
    cfg.mmlb_combine = MmlbCombine::averaged;
    const auto table = load_score_csv(kFixtureDir / "scores.csv");
    const auto combined = combine_columns(table, cfg);
    EXPECT_NEAR(*combined.get("Qwen3-VL-32B-Instruct", "MMLB"), (70.4 + 78.9) / 2, 1e-9);
    EXPECT_NO_THROW(aggregate(table, cfg));
}

TEST(Aggregate, MissingScore) {
    auto table = load_score_csv(kFixtureDir / "scores.csv");
    table.scores[0][table.benchmark_index("DUDE")] = std::nullopt;
    EXPECT_EQ(code_of([&] { aggregate(table, default_aggregate_config()); }), ErrorCode::MissingScore);
}

TEST(Aggregate, ScaleAndPermutationInvariance) {
    const auto table = load_score_csv(kFixtureDir / "scores.csv");
    const auto cfg = default_aggregate_config();
    const auto ref = aggregate(table, cfg);

    auto scaled = table;
    const auto col = scaled.benchmark_index("SlideVQA");
    for (auto& row : scaled.scores) row[col] = *row[col] * 0.37;
    auto permuted_cfg = cfg;
    std::reverse(permuted_cfg.va_benchmarks.begin(), permuted_cfg.va_benchmarks.end());
    std::rotate(permuted_cfg.lca_benchmarks.begin(), permuted_cfg.lca_benchmarks.begin() + 3,
                permuted_cfg.lca_benchmarks.end());
    const auto a = aggregate(scaled, cfg);
    const auto b = aggregate(table, permuted_cfg);
    for (std::size_t i = 0; i < ref.size(); ++i) {
        EXPECT_NEAR(a[i].va, ref[i].va, 1e-9);
        EXPECT_NEAR(a[i].lca, ref[i].lca, 1e-9);
        EXPECT_NEAR(b[i].va, ref[i].va, 1e-9);
        EXPECT_NEAR(b[i].lca, ref[i].lca, 1e-9);
    }
}

TEST(Deltas, ReferenceImprovement) {
    const auto table = load_score_csv(kFixtureDir / "scores.csv");
    const auto report = deltas(table, "Mistral-Small-3.1-24B");
    EXPECT_NEAR(*report.deltas.get("Mistral Synthetic Reasoning", "MMLBD-C"), 7.9, 1e-9);
    for (const auto& v : report.deltas.scores[report.deltas.model_index("Mistral-Small-3.1-24B")]) {
        EXPECT_EQ(*v, 0.0);
    }
    const auto swapped = deltas(table, "Mistral Synthetic Reasoning");
    EXPECT_NEAR(*swapped.deltas.get("Mistral-Small-3.1-24B", "MMLBD-C"), -7.9, 1e-9);
    EXPECT_EQ(code_of([&] { deltas(table, "nobody"); }), ErrorCode::UnknownBase);
}

TEST(RunVariance, PopulationSigma) {
    std::vector<ScoreTable> runs;
    for (const char* f : {"repeat_run1.csv", "repeat_run2.csv", "repeat_run3.csv"}) {
        runs.push_back(load_score_csv(kFixtureDir / f));
    }
    const auto report = run_variance(runs);
    EXPECT_EQ(report.runs, 3u);
    EXPECT_NEAR(report.sigma_of("Qwen3-VL-32B Synthetic Reasoning", "VA"), 0.33, 0.01);
    EXPECT_NEAR(report.sigma_of("Qwen3-VL-32B Synthetic Reasoning", "LCA"), 0.29, 0.01);
    EXPECT_DOUBLE_EQ(report.sigma_of("Qwen3-VL-32B Synthetic Reasoning", "TableVQA"),
                     population_stddev(std::vector<double>{80.7, 80.7, 80.5}));

    const std::vector<ScoreTable> same{runs[0], runs[0]};
    EXPECT_DOUBLE_EQ(run_variance(same).sigma_of("Qwen3-VL-32B Synthetic Reasoning", "VA"), 0.0);
    const std::vector<ScoreTable> one{runs[0]};
    EXPECT_EQ(code_of([&] { run_variance(one); }), ErrorCode::InsufficientRuns);
    auto other = runs[1];
    other.benchmarks[0] = "Renamed";
    const std::vector<ScoreTable> mismatched{runs[0], other};
    EXPECT_EQ(code_of([&] { run_variance(mismatched); }), ErrorCode::AxisMismatch);
}

TEST(LengthStats, MeansAndThinkFraction) {
    std::vector<ResponseSample> samples{{"a", 10}, {"b", 20}, {"c", 30}};
    auto stats = length_stats(samples);
    EXPECT_DOUBLE_EQ(stats.mean_tokens, 20.0);
    EXPECT_DOUBLE_EQ(stats.median, 20.0);
    EXPECT_EQ(stats.counts[0], 3u);

    samples.clear();
    for (int i = 0; i < 100; ++i) samples.push_back({i < 77 ? "<think>x</think>y" : "y", 100.0 * i});
    stats = length_stats(samples);
    EXPECT_DOUBLE_EQ(stats.think_fraction, 0.77);
    std::size_t total = 0;
    for (auto c : stats.counts) total += c;
    EXPECT_EQ(total, 100u);
    EXPECT_NEAR(length_ratio(1637, 132), 12.40, 0.005);
}

TEST(LengthStats, ThinkDetection) {
    EXPECT_TRUE(has_think_block("<think>a</think>b"));
    EXPECT_FALSE(has_think_block("</think><think>"));
    EXPECT_FALSE(has_think_block("<think> unclosed"));
}

TEST(LengthStats, LoadResponses) {
    TempDir tmp;
    write_text(tmp / "r.jsonl", "{\"text\":\"a\",\"tokens\":5}\n\n{\"response\":\"b\",\"completion_tokens\":7}\n");
    const auto r = load_responses(tmp / "r.jsonl");
    ASSERT_EQ(r.size(), 2u);
    EXPECT_EQ(r[1].text, "b");
    EXPECT_DOUBLE_EQ(r[1].tokens, 7.0);
    write_text(tmp / "bad.jsonl", "{\"text\":\"a\",\"tokens\":5}\n{\"text\":1}\n");
    try {
        load_responses(tmp / "bad.jsonl");
        FAIL();
    } catch (const MalformedLineError& e) {
        EXPECT_EQ(e.line(), 2u);
    }
}
