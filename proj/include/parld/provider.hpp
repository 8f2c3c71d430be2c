#pragma once

#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "parld/model.hpp"

namespace parld {

enum class Role { System, User, Assistant };

std::string to_string(Role role);

struct ChatMessage {
    Role role = Role::User;
    std::string content;

    bool operator==(const ChatMessage&) const = default;
};

struct CompletionRequest {
    std::string model;
    std::vector<ChatMessage> messages;  // first message must be system
    double temperature = 0.0;
    std::optional<int> max_tokens;
    bool json_mode = false;
};

enum class ProviderKind { Http, Scripted, Replay };

std::string to_string(ProviderKind kind);

struct CompletionResponse {
    std::string content;
    int prompt_tokens = 0;
    int completion_tokens = 0;
    ProviderKind provider = ProviderKind::Scripted;
};

struct TransportError : Error {
    using Error::Error;
};

struct CassetteMissError : Error {
    std::string digest;
    explicit CassetteMissError(const std::string& digest_)
        : Error("cassette miss for request digest " + digest_), digest(digest_) {}
};

// 64-bit FNV-1a, hex-encoded. Stable across processes and platforms.
std::string fnv1a64_hex(std::string_view data);

// Digest of the canonicalized request: JSON with sorted field names and no
// insignificant whitespace, so prompt-identical requests key identically.
std::string canonical_key(const CompletionRequest& request);
std::string canonical_request_json(const CompletionRequest& request);

void validate_request(const CompletionRequest& request);

class Provider {
public:
    virtual ~Provider() = default;
    virtual CompletionResponse complete(const CompletionRequest& request) = 0;
};

// Canned-response provider for tests. Responses are either a fixed queue or
// a handler invoked per request. Records every request for call-count and
// prompt-content oracles.
class ScriptedProvider : public Provider {
public:
    using Handler = std::function<std::string(const CompletionRequest&)>;

    ScriptedProvider() = default;
    explicit ScriptedProvider(std::vector<std::string> responses);
    explicit ScriptedProvider(Handler handler);

    void push_response(std::string content);
    void set_handler(Handler handler);

    CompletionResponse complete(const CompletionRequest& request) override;

    size_t request_count() const;
    std::vector<CompletionRequest> requests() const;
    const CompletionRequest& request_at(size_t i) const;

private:
    mutable std::mutex mutex_;
    std::deque<std::string> queue_;
    Handler handler_;
    std::vector<CompletionRequest> requests_;
};

struct CassetteEntry {
    std::string key;
    nlohmann::json request;
    std::string content;
    int prompt_tokens = 0;
    int completion_tokens = 0;
};

// Ordered record of request/response pairs keyed by canonical request digest.
class Cassette {
public:
    Cassette() = default;

    static Cassette load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;

    // Errors on a duplicate key; an existing entry is never overwritten.
    void record(const CompletionRequest& request, const CompletionResponse& response);

    bool contains(const std::string& key) const;
    const CassetteEntry* find(const std::string& key) const;
    size_t size() const { return entries_.size(); }
    const std::vector<CassetteEntry>& entries() const { return entries_; }

private:
    std::vector<CassetteEntry> entries_;
    std::map<std::string, size_t> index_;
};

// Serves recorded responses; unknown requests raise CassetteMissError.
class ReplayProvider : public Provider {
public:
    explicit ReplayProvider(Cassette cassette) : cassette_(std::move(cassette)) {}

    CompletionResponse complete(const CompletionRequest& request) override;

    const Cassette& cassette() const { return cassette_; }

private:
    Cassette cassette_;
};

// Wraps a live provider and records every exchange. Duplicate requests are
// served from the cassette instead of re-hitting the inner provider, so a
// recorded run and its replay see identical responses. Writes are serialized.
class RecordingProvider : public Provider {
public:
    RecordingProvider(Provider& inner, const std::filesystem::path& cassette_path);
    ~RecordingProvider();

    CompletionResponse complete(const CompletionRequest& request) override;

    void flush();
    const Cassette& cassette() const { return cassette_; }

private:
    Provider& inner_;
    std::filesystem::path path_;
    Cassette cassette_;
    std::mutex mutex_;
};

}  // namespace parld
