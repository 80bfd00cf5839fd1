#pragma once

#include <chrono>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace normagent {

enum class Role { System, User, Assistant };

const char* role_name(Role role);
std::optional<Role> role_from_string(std::string_view name);

struct ChatMessage {
    Role role = Role::User;
    std::string content;
};

/// One chat-completion request. `tag` names the pipeline stage that issued it
/// ("norm", "panas", ...) and never affects the request fingerprint.
struct ChatRequest {
    std::string model;
    std::vector<ChatMessage> messages;
    double temperature = 0.0;
    std::optional<int> max_tokens;
    std::string tag;

    void validate() const;  // throws InvalidRequest
};

struct ChatResponse {
    std::string content;  // verbatim model output, untrimmed
    std::string backend_id;
    std::int64_t latency_ms = 0;
    bool from_replay = false;
};

struct GatewayError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct InvalidRequest : GatewayError {
    using GatewayError::GatewayError;
};
struct AuthError : GatewayError {
    using GatewayError::GatewayError;
};
struct BackendUnavailable : GatewayError {
    using GatewayError::GatewayError;
};
struct ReplayMiss : GatewayError {
    explicit ReplayMiss(std::string fp);
    std::string fingerprint;
};

/// Stable digest over (model, ordered messages, temperature). Excludes tag and
/// max_tokens, so cassettes survive limit tuning and stage renames.
std::string fingerprint(const ChatRequest& request);

enum class CassetteMode { Record, Replay, Passthrough };

const char* cassette_mode_name(CassetteMode mode);
std::optional<CassetteMode> cassette_mode_from_string(std::string_view name);

/// Record/replay log of completions, persisted as JSON Lines:
///   {"fp": <hex digest>, "request": <request json>, "response": <text>}
/// Replay lookups are read-only and lock-free after load; recording appends
/// under a mutex and skips fingerprints already present.
class Cassette {
public:
    Cassette(std::filesystem::path path, CassetteMode mode);

    CassetteMode mode() const { return mode_; }
    const std::filesystem::path& path() const { return path_; }
    std::size_t size() const;

    std::optional<std::string> lookup(const std::string& fp) const;
    void record(const std::string& fp, const ChatRequest& request, const std::string& response);

private:
    std::filesystem::path path_;
    CassetteMode mode_;
    std::unordered_map<std::string, std::string> entries_;  // fp -> first response
    mutable std::mutex write_mutex_;
};

struct TransportReply {
    int status = 0;  // 0 = transport-level failure (connect/timeout)
    std::string body;
    std::string error;
};

/// Wire-level POST of a chat-completion body. Implementations must be safe to
/// call from multiple threads.
class Transport {
public:
    virtual ~Transport() = default;
    virtual TransportReply post_chat(const std::string& body, const std::string& bearer) = 0;
    virtual std::string id() const = 0;
};

/// OpenAI-compatible HTTP transport; POSTs to <base_url>/chat/completions.
std::unique_ptr<Transport> make_http_transport(const std::string& base_url);

enum class Stage { Story, Norm, Context, Panas };

struct StageSettings {
    std::string model;
    double temperature = 0.0;
};

struct GatewayConfig {
    std::string base_url = "https://api.openai.com/v1";
    std::string api_key_env = "OPENAI_API_KEY";
    StageSettings story{"gpt-4", 0.7};
    StageSettings norm{"gpt-4", 0.0};
    StageSettings context{"gpt-4", 0.0};
    StageSettings panas{"gpt-3.5-turbo", 0.0};
    int max_retries = 3;             // retries after the first attempt
    int requests_per_minute = 60;    // 0 = unlimited
    std::int64_t initial_backoff_ms = 250;
    std::string cassette_path;
    CassetteMode cassette_mode = CassetteMode::Passthrough;

    const StageSettings& stage(Stage stage) const;
};

struct GatewayStats {
    std::uint64_t completions = 0;   // successful complete() calls
    std::uint64_t live_calls = 0;    // transport posts, including retries
    std::uint64_t retries = 0;
    std::uint64_t replay_hits = 0;
    std::vector<std::string> fingerprints_used;  // sorted, unique
};

/// Uniform access to a chat-completion backend with retry, rate limiting and
/// cassette record/replay. Shareable across concurrent story runs: the rate
/// limiter is one shared budget and cassette appends are serialized.
///
/// In replay mode no transport is ever constructed, so replay performs zero
/// network activity by construction.
class Gateway {
public:
    using Sleeper = std::function<void(std::chrono::milliseconds)>;
    using ClockFn = std::function<std::chrono::steady_clock::time_point()>;

    explicit Gateway(GatewayConfig config, std::unique_ptr<Transport> transport = nullptr);

    ChatResponse complete(const ChatRequest& request);

    const GatewayConfig& config() const { return config_; }
    const Cassette* cassette() const { return cassette_.get(); }
    GatewayStats stats() const;

    // Test hooks; both default to the real clock / sleep.
    void set_sleeper(Sleeper sleeper);
    void set_clock(ClockFn clock);

private:
    ChatResponse live_complete(const ChatRequest& request, const std::string& fp);
    void acquire_rate_token();
    std::string resolve_api_key() const;
    void note_fingerprint(const std::string& fp);

    GatewayConfig config_;
    std::unique_ptr<Transport> transport_;
    std::unique_ptr<Cassette> cassette_;
    Sleeper sleeper_;
    ClockFn clock_;

    mutable std::mutex mutex_;
    std::deque<std::chrono::steady_clock::time_point> send_times_;
    std::uint64_t completions_ = 0;
    std::uint64_t live_calls_ = 0;
    std::uint64_t retries_ = 0;
    std::uint64_t replay_hits_ = 0;
    std::set<std::string> fingerprints_used_;
};

}  // namespace normagent
