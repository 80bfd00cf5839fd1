#include "normagent/gateway.hpp"

#include "normagent/util.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <thread>

namespace normagent {

using ojson = nlohmann::ordered_json;

const char* role_name(Role role) {
    switch (role) {
        case Role::System: return "system";
        case Role::User: return "user";
        case Role::Assistant: return "assistant";
    }
    return "user";
}

std::optional<Role> role_from_string(std::string_view name) {
    if (name == "system") return Role::System;
    if (name == "user") return Role::User;
    if (name == "assistant") return Role::Assistant;
    return std::nullopt;
}

void ChatRequest::validate() const {
    if (model.empty()) throw InvalidRequest("request model is empty");
    if (messages.empty()) throw InvalidRequest("request has no messages");
    for (const auto& m : messages) {
        if (m.content.empty()) throw InvalidRequest("request contains an empty message");
    }
    if (!std::isfinite(temperature) || temperature < 0.0) {
        throw InvalidRequest("temperature must be finite and >= 0");
    }
    if (max_tokens && *max_tokens <= 0) throw InvalidRequest("max_tokens must be positive");
}

ReplayMiss::ReplayMiss(std::string fp)
    : GatewayError("replay miss for fingerprint " + fp), fingerprint(std::move(fp)) {}

std::string fingerprint(const ChatRequest& request) {
    // nlohmann::json sorts object keys, so the dump is canonical.
    nlohmann::json canon;
    canon["model"] = request.model;
    canon["temperature"] = request.temperature;
    auto& msgs = canon["messages"] = nlohmann::json::array();
    for (const auto& m : request.messages) {
        msgs.push_back({{"role", role_name(m.role)}, {"content", m.content}});
    }
    return sha256_hex(canon.dump());
}

const char* cassette_mode_name(CassetteMode mode) {
    switch (mode) {
        case CassetteMode::Record: return "record";
        case CassetteMode::Replay: return "replay";
        case CassetteMode::Passthrough: return "passthrough";
    }
    return "passthrough";
}

std::optional<CassetteMode> cassette_mode_from_string(std::string_view name) {
    if (name == "record") return CassetteMode::Record;
    if (name == "replay") return CassetteMode::Replay;
    if (name == "passthrough") return CassetteMode::Passthrough;
    return std::nullopt;
}

Cassette::Cassette(std::filesystem::path path, CassetteMode mode)
    : path_(std::move(path)), mode_(mode) {
    std::ifstream in(path_);
    if (!in) {
        if (mode_ == CassetteMode::Replay) {
            throw GatewayError("replay cassette not found: " + path_.string());
        }
        return;
    }
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        ojson entry;
        try {
            entry = ojson::parse(line);
        } catch (const std::exception& e) {
            throw GatewayError("cassette " + path_.string() + " line " +
                               std::to_string(lineno) + ": " + e.what());
        }
        entries_.emplace(entry.at("fp").get<std::string>(),
                         entry.at("response").get<std::string>());
    }
}

std::size_t Cassette::size() const {
    std::lock_guard lock(write_mutex_);
    return entries_.size();
}

std::optional<std::string> Cassette::lookup(const std::string& fp) const {
    auto it = entries_.find(fp);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
}

void Cassette::record(const std::string& fp, const ChatRequest& request,
                      const std::string& response) {
    std::lock_guard lock(write_mutex_);
    if (entries_.count(fp)) return;

    ojson req;
    req["model"] = request.model;
    auto& msgs = req["messages"] = ojson::array();
    for (const auto& m : request.messages) {
        ojson jm;
        jm["role"] = role_name(m.role);
        jm["content"] = m.content;
        msgs.push_back(std::move(jm));
    }
    req["temperature"] = request.temperature;
    if (request.max_tokens) req["max_tokens"] = *request.max_tokens;
    req["tag"] = request.tag;

    ojson entry;
    entry["fp"] = fp;
    entry["request"] = std::move(req);
    entry["response"] = response;

    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
    std::ofstream out(path_, std::ios::app | std::ios::binary);
    if (!out) throw GatewayError("cannot append to cassette: " + path_.string());
    out << entry.dump() << '\n';
    out.flush();
    entries_.emplace(fp, response);
}

namespace {

struct ParsedUrl {
    std::string origin;  // scheme://host[:port]
    std::string prefix;  // path prefix, no trailing slash
};

ParsedUrl parse_base_url(const std::string& base_url) {
    auto scheme_end = base_url.find("://");
    if (scheme_end == std::string::npos) {
        throw GatewayError("base_url must include a scheme: " + base_url);
    }
    auto path_start = base_url.find('/', scheme_end + 3);
    ParsedUrl out;
    if (path_start == std::string::npos) {
        out.origin = base_url;
    } else {
        out.origin = base_url.substr(0, path_start);
        out.prefix = base_url.substr(path_start);
    }
    while (!out.prefix.empty() && out.prefix.back() == '/') out.prefix.pop_back();
    return out;
}

class HttpTransport : public Transport {
public:
    explicit HttpTransport(const std::string& base_url) : url_(parse_base_url(base_url)) {}

    TransportReply post_chat(const std::string& body, const std::string& bearer) override {
        // One client per call: httplib clients are not safe for concurrent
        // requests, and story runs share this transport.
        httplib::Client client(url_.origin);
        client.set_connection_timeout(30, 0);
        client.set_read_timeout(300, 0);
        httplib::Headers headers;
        if (!bearer.empty()) headers.emplace("Authorization", "Bearer " + bearer);
        auto res = client.Post(url_.prefix + "/chat/completions", headers, body,
                               "application/json");
        if (!res) {
            return TransportReply{0, "", httplib::to_string(res.error())};
        }
        return TransportReply{res->status, res->body, ""};
    }

    std::string id() const override { return url_.origin; }

private:
    ParsedUrl url_;
};

bool is_transient_status(int status) {
    return status == 429 || (status >= 500 && status < 600);
}

std::string wire_body(const ChatRequest& request) {
    ojson body;
    body["model"] = request.model;
    auto& msgs = body["messages"] = ojson::array();
    for (const auto& m : request.messages) {
        ojson jm;
        jm["role"] = role_name(m.role);
        jm["content"] = m.content;
        msgs.push_back(std::move(jm));
    }
    body["temperature"] = request.temperature;
    if (request.max_tokens) body["max_tokens"] = *request.max_tokens;
    return body.dump();
}

std::optional<std::string> extract_content(const std::string& body) {
    try {
        auto j = nlohmann::json::parse(body);
        return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

}  // namespace

std::unique_ptr<Transport> make_http_transport(const std::string& base_url) {
    return std::make_unique<HttpTransport>(base_url);
}

const StageSettings& GatewayConfig::stage(Stage s) const {
    switch (s) {
        case Stage::Story: return story;
        case Stage::Norm: return norm;
        case Stage::Context: return context;
        case Stage::Panas: return panas;
    }
    return panas;
}

Gateway::Gateway(GatewayConfig config, std::unique_ptr<Transport> transport)
    : config_(std::move(config)),
      transport_(std::move(transport)),
      sleeper_([](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); }),
      clock_([] { return std::chrono::steady_clock::now(); }) {
    if (!config_.cassette_path.empty() || config_.cassette_mode != CassetteMode::Passthrough) {
        if (config_.cassette_path.empty()) {
            throw GatewayError("cassette mode set but cassette path is empty");
        }
        cassette_ = std::make_unique<Cassette>(config_.cassette_path, config_.cassette_mode);
    }
}

void Gateway::set_sleeper(Sleeper sleeper) { sleeper_ = std::move(sleeper); }
void Gateway::set_clock(ClockFn clock) { clock_ = std::move(clock); }

GatewayStats Gateway::stats() const {
    std::lock_guard lock(mutex_);
    GatewayStats s;
    s.completions = completions_;
    s.live_calls = live_calls_;
    s.retries = retries_;
    s.replay_hits = replay_hits_;
    s.fingerprints_used.assign(fingerprints_used_.begin(), fingerprints_used_.end());
    return s;
}

void Gateway::note_fingerprint(const std::string& fp) {
    std::lock_guard lock(mutex_);
    fingerprints_used_.insert(fp);
}

ChatResponse Gateway::complete(const ChatRequest& request) {
    request.validate();
    const std::string fp = fingerprint(request);

    if (cassette_ && cassette_->mode() == CassetteMode::Replay) {
        auto hit = cassette_->lookup(fp);
        if (!hit) throw ReplayMiss(fp);
        note_fingerprint(fp);
        {
            std::lock_guard lock(mutex_);
            ++replay_hits_;
            ++completions_;
        }
        return ChatResponse{*hit, "cassette", 0, true};
    }

    ChatResponse response = live_complete(request, fp);
    if (cassette_ && cassette_->mode() == CassetteMode::Record) {
        cassette_->record(fp, request, response.content);
        note_fingerprint(fp);
    }
    {
        std::lock_guard lock(mutex_);
        ++completions_;
    }
    return response;
}

std::string Gateway::resolve_api_key() const {
    if (config_.api_key_env.empty()) return "";
    const char* value = std::getenv(config_.api_key_env.c_str());
    return value ? value : "";
}

void Gateway::acquire_rate_token() {
    if (config_.requests_per_minute <= 0) return;
    const auto window = std::chrono::seconds(60);
    for (;;) {
        std::chrono::milliseconds wait{0};
        {
            std::lock_guard lock(mutex_);
            auto now = clock_();
            while (!send_times_.empty() && now - send_times_.front() >= window) {
                send_times_.pop_front();
            }
            if (send_times_.size() <
                static_cast<std::size_t>(config_.requests_per_minute)) {
                send_times_.push_back(now);
                return;
            }
            wait = std::chrono::duration_cast<std::chrono::milliseconds>(
                       send_times_.front() + window - now) +
                   std::chrono::milliseconds(1);
        }
        sleeper_(wait);
    }
}

ChatResponse Gateway::live_complete(const ChatRequest& request, const std::string& fp) {
    (void)fp;
    {
        std::lock_guard lock(mutex_);
        if (!transport_) transport_ = make_http_transport(config_.base_url);
    }
    const std::string body = wire_body(request);
    const std::string bearer = resolve_api_key();

    std::string last_error;
    std::int64_t backoff = config_.initial_backoff_ms;
    const int attempts = config_.max_retries + 1;
    for (int attempt = 0; attempt < attempts; ++attempt) {
        if (attempt > 0) {
            sleeper_(std::chrono::milliseconds(backoff));
            backoff = std::min<std::int64_t>(backoff * 2, 30'000);
            std::lock_guard lock(mutex_);
            ++retries_;
        }
        acquire_rate_token();

        auto t0 = clock_();
        TransportReply reply;
        {
            std::lock_guard lock(mutex_);
            ++live_calls_;
        }
        reply = transport_->post_chat(body, bearer);
        auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(clock_() - t0);

        if (reply.status == 0) {
            last_error = "transport: " + reply.error;
            continue;
        }
        if (reply.status == 401 || reply.status == 403) {
            throw AuthError("backend rejected credentials (HTTP " +
                            std::to_string(reply.status) + ")");
        }
        if (is_transient_status(reply.status)) {
            last_error = "HTTP " + std::to_string(reply.status);
            continue;
        }
        if (reply.status != 200) {
            throw BackendUnavailable("backend error HTTP " + std::to_string(reply.status) +
                                     ": " + reply.body.substr(0, 200));
        }
        auto content = extract_content(reply.body);
        if (!content) {
            last_error = "malformed completion body";
            continue;
        }
        return ChatResponse{*content, transport_->id(), elapsed.count(), false};
    }
    throw BackendUnavailable("backend unavailable after " + std::to_string(attempts) +
                             " attempts; last error: " + last_error);
}

}  // namespace normagent
