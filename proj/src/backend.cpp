#include "docsynth/backend.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <random>
#include <regex>
#include <sstream>
#include <thread>

#include <httplib.h>

#include "docsynth/rng.hpp"

namespace docsynth {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Request helpers

std::string_view to_string(Role role) noexcept {
    switch (role) {
        case Role::system: return "system";
        case Role::user: return "user";
        case Role::assistant: return "assistant";
    }
    return "user";
}

std::string_view to_string(FinishReason reason) noexcept {
    switch (reason) {
        case FinishReason::stop: return "stop";
        case FinishReason::length: return "length";
        case FinishReason::error: return "error";
    }
    return "error";
}

void validate_request(const ChatRequest& request) {
    if (request.messages.empty()) {
        throw Error(ErrorCode::InvariantViolation, "chat request has no messages");
    }
    if (request.max_tokens < 1) {
        throw Error(ErrorCode::InvariantViolation, "max_tokens must be positive");
    }
    if (!(request.temperature >= 0.0)) {
        throw Error(ErrorCode::InvariantViolation, "temperature must be >= 0");
    }
    for (const auto& msg : request.messages) {
        if (msg.parts.empty()) {
            throw Error(ErrorCode::InvariantViolation, "chat message has no parts");
        }
        if (msg.role != Role::user) {
            for (const auto& part : msg.parts) {
                if (std::holds_alternative<ImagePart>(part)) {
                    throw Error(ErrorCode::InvariantViolation, "image parts are only allowed in user messages");
                }
            }
        }
    }
}

std::string request_text(const ChatRequest& request) {
    std::string out;
    for (const auto& msg : request.messages) {
        for (const auto& part : msg.parts) {
            if (const auto* t = std::get_if<TextPart>(&part)) {
                if (!out.empty()) out += '\n';
                out += t->text;
            }
        }
    }
    return out;
}

std::size_t count_image_parts(const ChatRequest& request) {
    std::size_t n = 0;
    for (const auto& msg : request.messages) {
        n += static_cast<std::size_t>(std::count_if(msg.parts.begin(), msg.parts.end(), [](const Part& p) {
            return std::holds_alternative<ImagePart>(p);
        }));
    }
    return n;
}

std::vector<int> image_page_indices(const ChatRequest& request) {
    std::vector<int> out;
    for (const auto& msg : request.messages) {
        for (const auto& part : msg.parts) {
            if (const auto* img = std::get_if<ImagePart>(&part)) out.push_back(img->page.index);
        }
    }
    return out;
}

namespace {

constexpr std::uint64_t fnv_offset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t fnv_prime = 0x100000001b3ULL;

void fnv1a(std::uint64_t& h, std::string_view bytes) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= fnv_prime;
    }
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoFailure, "cannot read " + path.string());
    return std::string(std::istreambuf_iterator<char>(in), {});
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace

std::string fingerprint(const ChatRequest& request) {
    std::uint64_t h = fnv_offset;
    char num[64];
    fnv1a(h, request.model_id);
    std::snprintf(num, sizeof num, "|%d|%.9g|", request.max_tokens, request.temperature);
    fnv1a(h, num);
    for (const auto& msg : request.messages) {
        fnv1a(h, to_string(msg.role));
        for (const auto& part : msg.parts) {
            if (const auto* t = std::get_if<TextPart>(&part)) {
                std::snprintf(num, sizeof num, "|T%zu:", t->text.size());
                fnv1a(h, num);
                fnv1a(h, t->text);
            } else {
                const auto& img = std::get<ImagePart>(part);
                std::uint64_t content = fnv_offset;
                fnv1a(content, read_file(img.page.image_path));
                fnv1a(h, "|I:" + hex64(content));
            }
        }
    }
    return hex64(h);
}

// ---------------------------------------------------------------------------
// Wire format

std::string base64_encode(std::span<const unsigned char> bytes) {
    static constexpr char table[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 2 < bytes.size(); i += 3) {
        const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
        out += table[(v >> 18) & 63];
        out += table[(v >> 12) & 63];
        out += table[(v >> 6) & 63];
        out += table[v & 63];
    }
    if (const std::size_t rest = bytes.size() - i; rest > 0) {
        std::uint32_t v = bytes[i] << 16;
        if (rest == 2) v |= bytes[i + 1] << 8;
        out += table[(v >> 18) & 63];
        out += table[(v >> 12) & 63];
        out += rest == 2 ? table[(v >> 6) & 63] : '=';
        out += '=';
    }
    return out;
}

std::string image_data_url(const PageImage& page) {
    std::string ext = page.image_path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    std::string mime = "application/octet-stream";
    if (ext == ".png") mime = "image/png";
    else if (ext == ".jpg" || ext == ".jpeg") mime = "image/jpeg";
    else if (ext == ".webp") mime = "image/webp";
    else if (ext == ".gif") mime = "image/gif";

    const std::string bytes = read_file(page.image_path);
    const auto* data = reinterpret_cast<const unsigned char*>(bytes.data());
    return "data:" + mime + ";base64," + base64_encode({data, bytes.size()});
}

json to_wire_json(const ChatRequest& request) {
    json messages = json::array();
    for (const auto& msg : request.messages) {
        json content = json::array();
        for (const auto& part : msg.parts) {
            if (const auto* t = std::get_if<TextPart>(&part)) {
                content.push_back({{"type", "text"}, {"text", t->text}});
            } else {
                const auto& img = std::get<ImagePart>(part);
                content.push_back({{"type", "image_url"}, {"image_url", {{"url", image_data_url(img.page)}}}});
            }
        }
        // Servers without multimodal support reject array content on
        // system/assistant turns, so plain text goes out as a string.
        if (msg.role != Role::user && content.size() == 1) {
            messages.push_back({{"role", to_string(msg.role)}, {"content", content[0]["text"]}});
        } else {
            messages.push_back({{"role", to_string(msg.role)}, {"content", std::move(content)}});
        }
    }
    return json{{"model", request.model_id},
                {"messages", std::move(messages)},
                {"max_tokens", request.max_tokens},
                {"temperature", request.temperature}};
}

ChatResponse parse_wire_response(const json& payload, const ChatRequest& request) {
    auto malformed = [](const std::string& why) {
        return BackendError(ErrorCode::MalformedResponse, why, /*transient=*/false);
    };
    if (!payload.is_object() || !payload.contains("choices") || !payload["choices"].is_array() ||
        payload["choices"].empty()) {
        throw malformed("missing choices[]");
    }
    const json& choice = payload["choices"][0];
    if (!choice.is_object() || !choice.contains("message") || !choice["message"].is_object()) {
        throw malformed("choices[0].message missing");
    }
    const json& content = choice["message"].value("content", json());
    ChatResponse response;
    if (content.is_string()) {
        response.text = content.get<std::string>();
    } else if (content.is_array()) {
        for (const auto& part : content) {
            if (part.is_object() && part.value("type", "") == "text" && part.contains("text") &&
                part["text"].is_string()) {
                response.text += part["text"].get<std::string>();
            }
        }
    } else if (!content.is_null()) {
        throw malformed("message.content has unexpected type");
    }

    const json& finish = choice.value("finish_reason", json());
    if (finish.is_null() || finish == "stop" || finish == "eos" || finish == "end_turn") {
        response.finish_reason = FinishReason::stop;
    } else if (finish == "length" || finish == "max_tokens") {
        response.finish_reason = FinishReason::length;
    } else if (finish.is_string()) {
        response.finish_reason = FinishReason::error;
    } else {
        throw malformed("finish_reason has unexpected type");
    }

    if (payload.contains("usage") && payload["usage"].is_object()) {
        const json& tokens = payload["usage"].value("completion_tokens", json());
        if (tokens.is_number_integer()) response.completion_tokens = tokens.get<int>();
    }
    if (response.finish_reason == FinishReason::length) {
        response.completion_tokens = request.max_tokens;
    }
    return response;
}

// ---------------------------------------------------------------------------
// Retry and batching

namespace {

std::chrono::milliseconds backoff_delay(const RetryPolicy& policy, int failed_attempts) {
    thread_local std::mt19937_64 jitter{std::random_device{}()};
    const double base = static_cast<double>(policy.base_backoff.count());
    const double cap = static_cast<double>(policy.max_backoff.count());
    const double ceiling = std::min(cap, base * std::ldexp(1.0, failed_attempts - 1));
    if (ceiling <= 0.0) return std::chrono::milliseconds{0};
    std::uniform_real_distribution<double> dist(0.0, ceiling);
    return std::chrono::milliseconds{static_cast<long long>(dist(jitter))};
}

}  // namespace

ChatResponse complete(ChatBackend& backend, const ChatRequest& request, const RetryPolicy& policy) {
    validate_request(request);
    const int max_attempts = std::max(1, policy.max_attempts);
    ErrorCode last_code = ErrorCode::BackendFailure;
    std::string last_message;
    for (int attempt = 1; attempt <= max_attempts; ++attempt) {
        try {
            return backend.send(request);
        } catch (const BackendError& e) {
            if (e.code() == ErrorCode::MalformedResponse) throw;
            last_code = e.code();
            last_message = e.what();
            if (!e.transient()) {
                throw ExhaustedRetriesError(attempt, last_code, last_message);
            }
            logger().log(LogLevel::debug, "backend_retry",
                         {{"attempt", attempt}, {"model", request.model_id}, {"error", last_message}});
        } catch (const Error& e) {
            throw ExhaustedRetriesError(attempt, e.code(), e.what());
        }
        if (attempt < max_attempts) {
            std::this_thread::sleep_for(backoff_delay(policy, attempt));
        }
    }
    throw ExhaustedRetriesError(max_attempts, last_code, last_message);
}

std::vector<BatchResult> complete_batch(ChatBackend& backend, std::span<const ChatRequest> requests,
                                        const RetryPolicy& policy) {
    std::vector<BatchResult> results(requests.size(), BatchFailure{ErrorCode::BackendFailure, "not run"});

    auto run_one = [&](std::size_t i) {
        try {
            results[i] = complete(backend, requests[i], policy);
        } catch (const Error& e) {
            results[i] = BatchFailure{e.code(), e.what()};
        } catch (const std::exception& e) {
            results[i] = BatchFailure{ErrorCode::BackendFailure, e.what()};
        }
    };

    const std::size_t workers =
        std::min<std::size_t>(static_cast<std::size_t>(std::max(1, policy.max_parallel)), requests.size());
    if (workers <= 1) {
        for (std::size_t i = 0; i < requests.size(); ++i) run_one(i);
        return results;
    }

    std::atomic<std::size_t> next{0};
    {
        std::vector<std::jthread> pool;
        pool.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (std::size_t i = next.fetch_add(1); i < requests.size(); i = next.fetch_add(1)) {
                    run_one(i);
                }
            });
        }
    }
    return results;
}

// ---------------------------------------------------------------------------
// Scripted backend

ScriptedBackend::ScriptedBackend(ScriptHandler handler, std::chrono::microseconds latency)
    : handler_(std::move(handler)), latency_(latency) {}

ChatResponse ScriptedBackend::send(const ChatRequest& request) {
    const auto start = std::chrono::steady_clock::now();
    const int now_in_flight = ++in_flight_;
    int seen = max_in_flight_.load();
    while (now_in_flight > seen && !max_in_flight_.compare_exchange_weak(seen, now_in_flight)) {
    }
    ++calls_;

    const std::string fp = fingerprint(request);
    int attempt = 0;
    {
        std::lock_guard lock(mutex_);
        attempt = attempts_[fp]++;
    }
    if (latency_.count() > 0) std::this_thread::sleep_for(latency_);

    ScriptedReply reply;
    try {
        reply = handler_(request, attempt);
    } catch (...) {
        --in_flight_;
        throw;
    }

    --in_flight_;
    {
        std::lock_guard lock(mutex_);
        intervals_.push_back({start, std::chrono::steady_clock::now()});
    }
    if (!reply.response) {
        const ErrorCode code = reply.http_status != 0 ? ErrorCode::HttpStatus : ErrorCode::Transport;
        throw BackendError(code, reply.error_message.empty() ? "scripted failure" : reply.error_message,
                           reply.transient_failure, reply.http_status);
    }
    return *reply.response;
}

std::vector<ScriptedBackend::Interval> ScriptedBackend::intervals() const {
    std::lock_guard lock(mutex_);
    return intervals_;
}

namespace {

struct FixtureRule {
    std::vector<std::string> contains;
    std::string model;
    json reply;
};

std::uint64_t fp_value(const std::string& fp) { return std::stoull(fp, nullptr, 16); }

/// Placeholders: {fp}, {page}, {pages}, {n_images}, {score}, {score:LO:HI}.
std::string expand_template(const std::string& text, const ChatRequest& request, const std::string& fp) {
    static const std::regex score_re(R"(\{score(?::([0-9.]+):([0-9.]+))?\})");
    const std::vector<int> pages = image_page_indices(request);
    std::string pages_joined;
    for (int p : pages) {
        if (!pages_joined.empty()) pages_joined += ',';
        pages_joined += std::to_string(p);
    }
    std::string out = replace_all(text, "{fp}", fp);
    out = replace_all(out, "{page}", pages.empty() ? "0" : std::to_string(pages.front()));
    out = replace_all(out, "{pages}", pages_joined);
    out = replace_all(out, "{n_images}", std::to_string(pages.size()));

    std::string expanded;
    auto begin = std::sregex_iterator(out.begin(), out.end(), score_re);
    std::size_t last = 0;
    std::uint64_t salt = 0;
    for (auto it = begin; it != std::sregex_iterator(); ++it, ++salt) {
        const auto& m = *it;
        const double lo = m[1].matched ? std::stod(m[1].str()) : 0.0;
        const double hi = m[2].matched ? std::stod(m[2].str()) : 10.0;
        auto rng = Rng::derive(fp_value(fp), {salt});
        const auto steps = static_cast<std::int64_t>(std::llround((hi - lo) * 10.0));
        const double score = lo + static_cast<double>(rng.uniform_int(0, std::max<std::int64_t>(0, steps))) / 10.0;
        expanded.append(out, last, static_cast<std::size_t>(m.position()) - last);
        expanded += format_score(score);
        last = static_cast<std::size_t>(m.position() + m.length());
    }
    expanded.append(out, last);
    return expanded;
}

ScriptedReply make_reply(const json& spec, const ChatRequest& request, const std::string& fp, int attempt) {
    ScriptedReply reply;
    json s = spec.is_string() ? json{{"text", spec}} : spec;

    const int fail_times = s.value("fail_times", 0);
    const double fail_fraction = s.value("fail_fraction", 0.0);
    const bool permanently_failing =
        fail_fraction > 0.0 && static_cast<double>(fp_value(fp) % 1'000'000) < fail_fraction * 1'000'000.0;
    const std::string error_kind = s.value("error", "");
    if (attempt < fail_times || permanently_failing || (!error_kind.empty() && fail_times == 0 && fail_fraction == 0.0)) {
        reply.http_status = s.value("status", 0);
        const std::string kind = error_kind.empty() ? "transient" : error_kind;
        reply.transient_failure = kind == "transient";
        reply.error_message = "scripted " + kind + " failure";
        return reply;
    }

    ChatResponse response;
    response.text = expand_template(s.value("text", ""), request, fp);
    response.finish_reason = s.value("finish_reason", "stop") == "length" ? FinishReason::length : FinishReason::stop;
    response.completion_tokens = s.value("completion_tokens", static_cast<int>(response.text.size() / 4));
    if (response.finish_reason == FinishReason::length) response.completion_tokens = request.max_tokens;
    reply.response = std::move(response);
    return reply;
}

}  // namespace

std::unique_ptr<ScriptedBackend> ScriptedBackend::from_fixture_json(const json& fixture) {
    if (!fixture.is_object()) {
        throw Error(ErrorCode::InvalidType, "scripted fixture must be a JSON object");
    }
    std::map<std::string, json> exact;
    if (fixture.contains("responses")) {
        for (const auto& [fp, spec] : fixture["responses"].items()) exact[fp] = spec;
    }
    std::vector<FixtureRule> rules;
    if (fixture.contains("rules")) {
        for (const auto& r : fixture["rules"]) {
            FixtureRule rule;
            if (r.contains("contains")) {
                if (r["contains"].is_string()) rule.contains.push_back(r["contains"].get<std::string>());
                else rule.contains = r["contains"].get<std::vector<std::string>>();
            }
            rule.model = r.value("model", "");
            rule.reply = r;
            rules.push_back(std::move(rule));
        }
    }
    std::optional<json> fallback;
    if (fixture.contains("default")) fallback = fixture["default"];
    const auto latency = std::chrono::microseconds{fixture.value("latency_us", 0)};

    auto handler = [exact = std::move(exact), rules = std::move(rules), fallback](const ChatRequest& request,
                                                                                  int attempt) {
        const std::string fp = fingerprint(request);
        if (auto it = exact.find(fp); it != exact.end()) return make_reply(it->second, request, fp, attempt);
        const std::string text = request_text(request);
        for (const auto& rule : rules) {
            if (!rule.model.empty() && rule.model != request.model_id) continue;
            const bool all = std::all_of(rule.contains.begin(), rule.contains.end(),
                                         [&](const std::string& needle) { return text.find(needle) != std::string::npos; });
            if (all) return make_reply(rule.reply, request, fp, attempt);
        }
        if (fallback) return make_reply(*fallback, request, fp, attempt);
        ScriptedReply miss;
        miss.error_message = "no scripted response for fingerprint " + fp;
        return miss;
    };
    return std::make_unique<ScriptedBackend>(std::move(handler), latency);
}

std::unique_ptr<ScriptedBackend> ScriptedBackend::from_fixture(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoFailure, "cannot open scripted fixture " + path.string());
    try {
        return from_fixture_json(json::parse(in));
    } catch (const json::exception& e) {
        throw Error(ErrorCode::InvalidType, "bad scripted fixture " + path.string() + ": " + e.what());
    }
}

ChatResponse RecordingBackend::send(const ChatRequest& request) {
    {
        std::lock_guard lock(mutex_);
        requests_.push_back(request);
    }
    return inner_.send(request);
}

std::vector<ChatRequest> RecordingBackend::requests() const {
    std::lock_guard lock(mutex_);
    return requests_;
}

// ---------------------------------------------------------------------------
// HTTP backend

HttpBackend::HttpBackend(HttpBackendOptions options) : options_(std::move(options)) {
    static const std::regex url_re(R"((https?://[^/]+)(/.*)?)");
    std::smatch m;
    if (!std::regex_match(options_.endpoint, m, url_re)) {
        throw Error(ErrorCode::InvalidRange, "endpoint must look like http(s)://host[:port][/path]: '" +
                                                 options_.endpoint + "'");
    }
    scheme_host_port_ = m[1].str();
    path_prefix_ = m[2].matched ? m[2].str() : "";
    while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
}

HttpBackend::~HttpBackend() = default;

ChatResponse HttpBackend::send(const ChatRequest& request) {
    // httplib::Client is not safe for concurrent use; one per call.
    httplib::Client client(scheme_host_port_);
    client.set_connection_timeout(std::chrono::seconds{30});
    client.set_read_timeout(options_.timeout);
    client.set_write_timeout(options_.timeout);

    httplib::Headers headers;
    if (!options_.api_key.empty()) headers.emplace("Authorization", "Bearer " + options_.api_key);

    const std::string body = to_wire_json(request).dump();
    auto res = client.Post(path_prefix_ + "/chat/completions", headers, body, "application/json");
    if (!res) {
        throw BackendError(ErrorCode::Transport, "request failed: " + httplib::to_string(res.error()),
                           /*transient=*/true);
    }
    const int status = res->status;
    if (status != 200) {
        const bool transient = status == 408 || status == 429 || status >= 500;
        throw BackendError(ErrorCode::HttpStatus,
                           "HTTP " + std::to_string(status) + ": " + res->body.substr(0, 200), transient, status);
    }
    json payload;
    try {
        payload = json::parse(res->body);
    } catch (const json::parse_error& e) {
        throw BackendError(ErrorCode::MalformedResponse, std::string("response is not JSON: ") + e.what(), false);
    }
    return parse_wire_response(payload, request);
}

std::unique_ptr<ChatBackend> make_backend(const PipelineConfig& cfg) {
    if (cfg.backend == "scripted") {
        if (cfg.script.empty()) throw Error(ErrorCode::InvalidRange, "scripted backend needs 'script'");
        return ScriptedBackend::from_fixture(cfg.script);
    }
    HttpBackendOptions options;
    options.endpoint = cfg.endpoint;
    if (const char* key = std::getenv(cfg.api_key_env.c_str())) options.api_key = key;
    options.timeout = std::chrono::seconds{cfg.request_timeout_s};
    return std::make_unique<HttpBackend>(std::move(options));
}

RetryPolicy retry_policy(const PipelineConfig& cfg) {
    RetryPolicy policy;
    policy.max_attempts = cfg.max_attempts;
    policy.base_backoff = std::chrono::milliseconds{cfg.base_backoff_ms};
    policy.max_parallel = cfg.max_parallel;
    return policy;
}

}  // namespace docsynth
