#include <gtest/gtest.h>

#include "docsynth/answer.hpp"
#include "support.hpp"

using namespace docsynth;
using docsynth::testing::TempDir;

namespace {

RankedEvidence ranked_4_1() {
    return RankedEvidence({{4, "A", 8.2, false, false}, {1, "B", 5.0, false, false}}, 24, 1.0);
}

}  // namespace

TEST(ChooseBranch, HalfRatioIsBalanced) {
    Rng rng(11);
    int text = 0;
    for (int i = 0; i < 10'000; ++i) text += choose_branch(rng, 0.5) == Branch::text;
    EXPECT_GE(text / 10'000.0, 0.485);
    EXPECT_LE(text / 10'000.0, 0.515);
}

TEST(ChooseBranch, Boundaries) {
    Rng rng(1);
    for (int i = 0; i < 1000; ++i) EXPECT_EQ(choose_branch(rng, 0.0), Branch::visual);
    for (int i = 0; i < 1000; ++i) EXPECT_EQ(choose_branch(rng, 1.0), Branch::text);
    int text = 0;
    for (int i = 0; i < 10'000; ++i) text += choose_branch(rng, 0.4) == Branch::text;
    EXPECT_NEAR(text / 10'000.0, 0.4, 0.015);
    EXPECT_THROW(choose_branch(rng, 1.5), Error);
}

TEST(VisualBranch, PagesInAscendingOrderWithMarkers) {
    TempDir tmp;
    const DocumentRef doc = load_document(docsynth::testing::make_document(tmp.path(), "d", 5));
    const Question q{"Why?", {4}, SourceMode::single, "reasoning"};
    const auto req = build_visual_branch_request(doc, ranked_4_1(), q, PipelineConfig{});
    EXPECT_EQ(image_page_indices(req), (std::vector<int>{1, 4}));
    const auto& parts = req.messages.front().parts;
    EXPECT_EQ(std::get<TextPart>(parts[0]).text, "Page 1:");
    EXPECT_EQ(std::get<TextPart>(parts[2]).text, "Page 4:");
    const std::string text = request_text(req);
    EXPECT_EQ(text.find(": A"), std::string::npos);
    EXPECT_EQ(text.find(": B"), std::string::npos);
    EXPECT_EQ(req.model_id, PipelineConfig{}.visual_teacher_model);
}

TEST(VisualBranch, EmptyRankingFallsBackToSourcePages) {
    TempDir tmp;
    const DocumentRef doc = load_document(docsynth::testing::make_document(tmp.path(), "d", 5));
    const Question q{"Why?", {3}, SourceMode::single, "reasoning"};
    const auto req = build_visual_branch_request(doc, RankedEvidence({}, 24, 1.0), q, PipelineConfig{});
    EXPECT_EQ(image_page_indices(req), (std::vector<int>{3}));
}

TEST(TextBranch, RendersEvidenceInRankedOrder) {
    const Question q{"Why?", {4}, SourceMode::single, "reasoning"};
    const auto req = build_text_branch_request(ranked_4_1(), q, PipelineConfig{});
    EXPECT_EQ(count_image_parts(req), 0u);
    EXPECT_EQ(std::get<TextPart>(req.messages.front().parts.front()).text, "Page 4: A\nPage 1: B");
    EXPECT_EQ(req.model_id, PipelineConfig{}.text_teacher_model);
}

TEST(TextBranch, EmptyRankingIsNoEvidence) {
    const Question q{"Why?", {4}, SourceMode::single, "reasoning"};
    try {
        build_text_branch_request(RankedEvidence({}, 24, 1.0), q, PipelineConfig{});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::NoEvidence);
    }
}

TEST(TextBranch, IgnoresPagesOutsideTheRanking) {
    // The text request depends on the ranking and question only.
    const Question q{"Why?", {4}, SourceMode::single, "reasoning"};
    const auto a = build_text_branch_request(ranked_4_1(), q, PipelineConfig{});
    const auto b = build_text_branch_request(ranked_4_1(), q, PipelineConfig{});
    EXPECT_EQ(fingerprint(a), fingerprint(b));
}

TEST(GenerateAnswer, EmptyRankingForcesVisual) {
    TempDir tmp;
    const DocumentRef doc = load_document(docsynth::testing::make_document(tmp.path(), "d", 3));
    const auto backend = ScriptedBackend::from_fixture_json({{"default", "forty-two"}});
    const Question q{"Why?", {2}, SourceMode::single, "reasoning"};
    const auto a = generate_answer(Branch::text, doc, RankedEvidence({}, 24, 1.0), q, *backend, RetryPolicy{},
                                   PipelineConfig{});
    EXPECT_EQ(a.branch, Branch::visual);
    EXPECT_EQ(a.text, "forty-two");
    EXPECT_EQ(a.input_page_indices, (std::vector<int>{2}));
}

TEST(GenerateAnswer, BlankAnswerIsEmptyGeneration) {
    TempDir tmp;
    const DocumentRef doc = load_document(docsynth::testing::make_document(tmp.path(), "d", 3));
    const auto backend = ScriptedBackend::from_fixture_json({{"default", "   "}});
    const Question q{"Why?", {2}, SourceMode::single, "reasoning"};
    try {
        generate_answer(Branch::text, doc, ranked_4_1(), q, *backend, RetryPolicy{}, PipelineConfig{});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::EmptyGeneration);
    }
}
