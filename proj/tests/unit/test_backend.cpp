#include <gtest/gtest.h>

#include <atomic>
#include <thread>

#include "docsynth/backend.hpp"
#include "support.hpp"

using namespace docsynth;
using namespace std::chrono_literals;

namespace {

ChatRequest text_request(const std::string& text, const std::string& model = "m") {
    ChatRequest r;
    r.model_id = model;
    r.messages.push_back({Role::user, {TextPart{text}}});
    r.max_tokens = 16;
    return r;
}

RetryPolicy fast_policy(int parallel = 8) {
    RetryPolicy p;
    p.base_backoff = 0ms;
    p.max_parallel = parallel;
    return p;
}

}  // namespace

TEST(Fingerprint, DependsOnContent) {
    EXPECT_EQ(fingerprint(text_request("a")), fingerprint(text_request("a")));
    EXPECT_NE(fingerprint(text_request("a")), fingerprint(text_request("b")));
    EXPECT_NE(fingerprint(text_request("a", "m1")), fingerprint(text_request("a", "m2")));
    EXPECT_EQ(fingerprint(text_request("a")).size(), 16u);
}

TEST(ScriptedBackend, EchoesFingerprintMapping) {
    const auto req = text_request("extract this");
    const auto backend = ScriptedBackend::from_fixture_json(
        {{"responses", {{fingerprint(req), "RELEVANCE: 7.0\nEVIDENCE: x"}}}});
    const ChatResponse r = complete(*backend, req, fast_policy());
    EXPECT_EQ(r.text, "RELEVANCE: 7.0\nEVIDENCE: x");
    EXPECT_EQ(r.finish_reason, FinishReason::stop);
}

TEST(ScriptedBackend, MissIsNotRetried) {
    const auto backend = ScriptedBackend::from_fixture_json(nlohmann::json::object());
    try {
        complete(*backend, text_request("x"), fast_policy());
        FAIL();
    } catch (const ExhaustedRetriesError& e) {
        EXPECT_EQ(e.attempts(), 1);
    }
}

TEST(Complete, TransientFailuresAreRetried) {
    const auto backend = ScriptedBackend::from_fixture_json(
        {{"rules", {{{"contains", "x"}, {"text", "ok"}, {"fail_times", 2}, {"status", 429}}}}});
    EXPECT_EQ(complete(*backend, text_request("x"), fast_policy()).text, "ok");
    EXPECT_EQ(backend->calls(), 3u);
}

TEST(Complete, GivesUpAfterMaxAttempts) {
    const auto backend = ScriptedBackend::from_fixture_json(
        {{"rules", {{{"contains", "x"}, {"text", "ok"}, {"fail_times", 10}, {"status", 503}}}}});
    try {
        complete(*backend, text_request("x"), fast_policy());
        FAIL();
    } catch (const ExhaustedRetriesError& e) {
        EXPECT_EQ(e.attempts(), 4);
        EXPECT_EQ(e.last_code(), ErrorCode::HttpStatus);
    }
}

TEST(Complete, FatalFailureStopsImmediately) {
    const auto backend = ScriptedBackend::from_fixture_json(
        {{"rules", {{{"contains", "x"}, {"error", "fatal"}, {"status", 400}}}}});
    try {
        complete(*backend, text_request("x"), fast_policy());
        FAIL();
    } catch (const ExhaustedRetriesError& e) {
        EXPECT_EQ(e.attempts(), 1);
    }
    EXPECT_EQ(backend->calls(), 1u);
}

TEST(Complete, LengthFinishIsReturned) {
    const auto backend = ScriptedBackend::from_fixture_json(
        {{"default", {{"text", "trunc"}, {"finish_reason", "length"}}}});
    const auto r = complete(*backend, text_request("x"), fast_policy());
    EXPECT_EQ(r.finish_reason, FinishReason::length);
    EXPECT_EQ(r.completion_tokens, 16);
}

TEST(CompleteBatch, PreservesOrder) {
    const auto backend = ScriptedBackend::from_fixture_json({{"default", "echo {fp}"}, {"latency_us", 200}});
    std::vector<ChatRequest> reqs;
    for (int i = 0; i < 100; ++i) reqs.push_back(text_request("req " + std::to_string(i)));
    const auto out = complete_batch(*backend, reqs, fast_policy(8));
    ASSERT_EQ(out.size(), 100u);
    for (int i = 0; i < 100; ++i) {
        ASSERT_TRUE(std::holds_alternative<ChatResponse>(out[i]));
        EXPECT_EQ(std::get<ChatResponse>(out[i]).text, "echo " + fingerprint(reqs[i]));
    }
    EXPECT_LE(backend->max_in_flight(), 8);
}

TEST(CompleteBatch, IsolatesFailures) {
    const auto backend = ScriptedBackend::from_fixture_json(
        {{"rules", {{{"contains", "req 5."}, {"error", "fatal"}}}}, {"default", "fine"}});
    std::vector<ChatRequest> reqs;
    for (int i = 0; i < 100; ++i) reqs.push_back(text_request("req " + std::to_string(i) + "."));
    const auto out = complete_batch(*backend, reqs, fast_policy(8));
    int ok = 0;
    for (int i = 0; i < 100; ++i) {
        if (i == 5) EXPECT_TRUE(std::holds_alternative<BatchFailure>(out[i]));
        else ok += std::holds_alternative<ChatResponse>(out[i]);
    }
    EXPECT_EQ(ok, 99);
}

TEST(CompleteBatch, SingleSlotIsSequential) {
    const auto backend = ScriptedBackend::from_fixture_json({{"default", "x"}, {"latency_us", 300}});
    std::vector<ChatRequest> reqs;
    for (int i = 0; i < 20; ++i) reqs.push_back(text_request(std::to_string(i)));
    complete_batch(*backend, reqs, fast_policy(1));
    auto iv = backend->intervals();
    ASSERT_EQ(iv.size(), 20u);
    std::sort(iv.begin(), iv.end(), [](const auto& a, const auto& b) { return a.start < b.start; });
    for (std::size_t i = 1; i < iv.size(); ++i) EXPECT_GE(iv[i].start, iv[i - 1].end);
    EXPECT_EQ(backend->max_in_flight(), 1);
}

TEST(CompleteBatch, InFlightNeverExceedsBound) {
    for (int parallel : {2, 3, 8}) {
        const auto backend = ScriptedBackend::from_fixture_json({{"default", "x"}, {"latency_us", 500}});
        std::vector<ChatRequest> reqs;
        for (int i = 0; i < 40; ++i) reqs.push_back(text_request(std::to_string(i)));
        complete_batch(*backend, reqs, fast_policy(parallel));
        EXPECT_LE(backend->max_in_flight(), parallel);
    }
}

TEST(CompleteBatch, DeterministicAcrossRuns) {
    auto run = [] {
        const auto backend = ScriptedBackend::from_fixture_json({{"default", "RELEVANCE: {score}"}});
        std::vector<ChatRequest> reqs;
        for (int i = 0; i < 50; ++i) reqs.push_back(text_request(std::to_string(i)));
        std::string all;
        for (const auto& r : complete_batch(*backend, reqs, fast_policy(8))) all += std::get<ChatResponse>(r).text + "|";
        return all;
    };
    EXPECT_EQ(run(), run());
}

TEST(WireFormat, ImagesBecomeDataUrls) {
    docsynth::testing::TempDir tmp;
    docsynth::testing::write_text(tmp / "page_0001.png", "abc");
    ChatRequest r;
    r.model_id = "vlm";
    r.messages.push_back({Role::system, {TextPart{"sys"}}});
    r.messages.push_back({Role::user, {TextPart{"Page 1:"}, ImagePart{PageImage{1, tmp / "page_0001.png", 3}}}});
    const auto j = to_wire_json(r);
    EXPECT_EQ(j["model"], "vlm");
    EXPECT_EQ(j["messages"][0]["content"], "sys");
    const auto& parts = j["messages"][1]["content"];
    ASSERT_EQ(parts.size(), 2u);
    EXPECT_EQ(parts[1]["type"], "image_url");
    EXPECT_EQ(parts[1]["image_url"]["url"], "data:image/png;base64,YWJj");
}

TEST(WireFormat, MalformedPayloadIsRejected) {
    const auto req = text_request("x");
    try {
        parse_wire_response(nlohmann::json{{"nope", 1}}, req);
        FAIL();
    } catch (const BackendError& e) {
        EXPECT_EQ(e.code(), ErrorCode::MalformedResponse);
        EXPECT_FALSE(e.transient());
    }
    const auto ok = parse_wire_response(
        {{"choices", {{{"message", {{"content", "hi"}}}, {"finish_reason", "stop"}}}}, {"usage", {{"completion_tokens", 3}}}},
        req);
    EXPECT_EQ(ok.text, "hi");
    EXPECT_EQ(ok.completion_tokens, 3);
}

TEST(Base64, KnownVectors) {
    auto enc = [](std::string s) {
        return base64_encode(std::span(reinterpret_cast<const unsigned char*>(s.data()), s.size()));
    };
    EXPECT_EQ(enc(""), "");
    EXPECT_EQ(enc("f"), "Zg==");
    EXPECT_EQ(enc("fo"), "Zm8=");
    EXPECT_EQ(enc("foobar"), "Zm9vYmFy");
}
