#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "docsynth/core.hpp"

namespace docsynth {

// ---------------------------------------------------------------------------
// Chat wire types

struct TextPart {
    std::string text;
    bool operator==(const TextPart&) const = default;
};

struct ImagePart {
    PageImage page;
    bool operator==(const ImagePart&) const = default;
};

using Part = std::variant<TextPart, ImagePart>;

enum class Role { system, user, assistant };

std::string_view to_string(Role role) noexcept;

struct ChatMessage {
    Role role = Role::user;
    std::vector<Part> parts;
    bool operator==(const ChatMessage&) const = default;
};

struct ChatRequest {
    std::string model_id;
    std::vector<ChatMessage> messages;
    int max_tokens = 1024;
    double temperature = 0.0;
    bool operator==(const ChatRequest&) const = default;
};

/// Throws InvariantViolation for empty messages/parts or images outside user turns.
void validate_request(const ChatRequest& request);

/// Concatenation of every text part, in order, separated by newlines.
std::string request_text(const ChatRequest& request);
std::size_t count_image_parts(const ChatRequest& request);
std::vector<int> image_page_indices(const ChatRequest& request);

/// Stable 64-bit digest (hex) over model, sampling params, text and image
/// *contents*. Two requests that differ only in image file location match.
std::string fingerprint(const ChatRequest& request);

enum class FinishReason { stop, length, error };

std::string_view to_string(FinishReason reason) noexcept;

struct ChatResponse {
    std::string text;
    int completion_tokens = 0;
    FinishReason finish_reason = FinishReason::stop;
    bool operator==(const ChatResponse&) const = default;
};

// ---------------------------------------------------------------------------
// OpenAI-compatible /chat/completions JSON

nlohmann::json to_wire_json(const ChatRequest& request);
/// Throws MalformedResponse when the payload does not follow the schema.
ChatResponse parse_wire_response(const nlohmann::json& payload, const ChatRequest& request);

std::string base64_encode(std::span<const unsigned char> bytes);
std::string image_data_url(const PageImage& page);

// ---------------------------------------------------------------------------
// Backends

/// One attempt against a model server. Implementations throw BackendError and
/// must tolerate up to max_parallel concurrent calls.
class ChatBackend {
public:
    virtual ~ChatBackend() = default;
    virtual ChatResponse send(const ChatRequest& request) = 0;
};

struct RetryPolicy {
    int max_attempts = 4;
    std::chrono::milliseconds base_backoff{500};
    std::chrono::milliseconds max_backoff{60'000};
    int max_parallel = 8;
};

/// Sends with retries: transient failures back off exponentially with full
/// jitter; other failures stop immediately. Throws ExhaustedRetriesError or,
/// for a non-conforming payload, the MalformedResponse error itself.
ChatResponse complete(ChatBackend& backend, const ChatRequest& request, const RetryPolicy& policy);

struct BatchFailure {
    ErrorCode code = ErrorCode::BackendFailure;
    std::string message;
};

using BatchResult = std::variant<ChatResponse, BatchFailure>;

/// Runs every request with at most policy.max_parallel in flight. Output
/// order matches input order; per-item failures stay per-item.
std::vector<BatchResult> complete_batch(ChatBackend& backend, std::span<const ChatRequest> requests,
                                        const RetryPolicy& policy);

// ---------------------------------------------------------------------------
// Scripted backend

/// Reply produced by a script: either a response or a simulated failure.
struct ScriptedReply {
    std::optional<ChatResponse> response;
    bool transient_failure = false;
    int http_status = 0;
    std::string error_message;
};

using ScriptHandler = std::function<ScriptedReply(const ChatRequest&, int attempt)>;

/// Deterministic in-process backend for tests and offline runs.
///
/// Replies come from a handler; `attempt` counts prior sends of the same
/// fingerprint (0 on first call), which lets fixtures fail N times then succeed.
/// Also acts as a concurrency probe: it tracks in-flight calls and the
/// [start, end) interval of every send.
class ScriptedBackend : public ChatBackend {
public:
    explicit ScriptedBackend(ScriptHandler handler, std::chrono::microseconds latency = {});

    /// Loads a fixture file (see README "Scripted backend fixtures").
    static std::unique_ptr<ScriptedBackend> from_fixture(const fs::path& path);
    static std::unique_ptr<ScriptedBackend> from_fixture_json(const nlohmann::json& fixture);

    ChatResponse send(const ChatRequest& request) override;

    int max_in_flight() const noexcept { return max_in_flight_.load(); }
    std::uint64_t calls() const noexcept { return calls_.load(); }

    struct Interval {
        std::chrono::steady_clock::time_point start;
        std::chrono::steady_clock::time_point end;
    };
    std::vector<Interval> intervals() const;

private:
    ScriptHandler handler_;
    std::chrono::microseconds latency_;
    std::atomic<int> in_flight_{0};
    std::atomic<int> max_in_flight_{0};
    std::atomic<std::uint64_t> calls_{0};
    mutable std::mutex mutex_;
    std::map<std::string, int> attempts_;
    std::vector<Interval> intervals_;
};

/// Wraps a backend and keeps a copy of every request it forwards.
class RecordingBackend : public ChatBackend {
public:
    explicit RecordingBackend(ChatBackend& inner) : inner_(inner) {}
    ChatResponse send(const ChatRequest& request) override;
    std::vector<ChatRequest> requests() const;

private:
    ChatBackend& inner_;
    mutable std::mutex mutex_;
    std::vector<ChatRequest> requests_;
};

// ---------------------------------------------------------------------------
// HTTP backend

struct HttpBackendOptions {
    std::string endpoint;  // e.g. http://localhost:8000/v1
    std::string api_key;   // sent as a Bearer token when non-empty
    std::chrono::seconds timeout{300};
};

class HttpBackend : public ChatBackend {
public:
    explicit HttpBackend(HttpBackendOptions options);
    ~HttpBackend() override;
    ChatResponse send(const ChatRequest& request) override;

private:
    HttpBackendOptions options_;
    std::string scheme_host_port_;
    std::string path_prefix_;
};

/// Builds the backend a config asks for (scripted fixture or HTTP endpoint).
std::unique_ptr<ChatBackend> make_backend(const PipelineConfig& cfg);
RetryPolicy retry_policy(const PipelineConfig& cfg);

}  // namespace docsynth
