#include "parld/provider.hpp"

#include <fstream>

namespace parld {

std::string to_string(Role role) {
    switch (role) {
        case Role::System: return "system";
        case Role::User: return "user";
        case Role::Assistant: return "assistant";
    }
    return "user";
}

std::string to_string(ProviderKind kind) {
    switch (kind) {
        case ProviderKind::Http: return "http";
        case ProviderKind::Scripted: return "scripted";
        case ProviderKind::Replay: return "replay";
    }
    return "scripted";
}

std::string fnv1a64_hex(std::string_view data) {
    uint64_t hash = 0xcbf29ce484222325ULL;
    for (unsigned char c : data) {
        hash ^= c;
        hash *= 0x100000001b3ULL;
    }
    char buf[17];
    snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash));
    return std::string(buf);
}

void validate_request(const CompletionRequest& request) {
    if (request.messages.empty()) throw Error("completion request has no messages");
    if (request.messages.front().role != Role::System)
        throw Error("completion request must start with a system message");
    for (const auto& m : request.messages) {
        if (m.content.empty() && m.role != Role::Assistant)
            throw Error("completion request has an empty " + to_string(m.role) + " message");
    }
}

std::string canonical_request_json(const CompletionRequest& request) {
    nlohmann::json messages = nlohmann::json::array();
    for (const auto& m : request.messages) {
        messages.push_back({{"content", m.content}, {"role", to_string(m.role)}});
    }
    nlohmann::json j{{"json_mode", request.json_mode},
                     {"messages", messages},
                     {"model", request.model},
                     {"temperature", request.temperature}};
    if (request.max_tokens) j["max_tokens"] = *request.max_tokens;
    return j.dump();
}

std::string canonical_key(const CompletionRequest& request) {
    return fnv1a64_hex(canonical_request_json(request));
}

ScriptedProvider::ScriptedProvider(std::vector<std::string> responses) {
    for (auto& r : responses) queue_.push_back(std::move(r));
}

ScriptedProvider::ScriptedProvider(Handler handler) : handler_(std::move(handler)) {}

void ScriptedProvider::push_response(std::string content) {
    std::lock_guard lock(mutex_);
    queue_.push_back(std::move(content));
}

void ScriptedProvider::set_handler(Handler handler) {
    std::lock_guard lock(mutex_);
    handler_ = std::move(handler);
}

CompletionResponse ScriptedProvider::complete(const CompletionRequest& request) {
    validate_request(request);
    std::lock_guard lock(mutex_);
    requests_.push_back(request);
    std::string content;
    if (!queue_.empty()) {
        content = std::move(queue_.front());
        queue_.pop_front();
    } else if (handler_) {
        content = handler_(request);
    } else {
        throw Error("scripted provider exhausted after " + std::to_string(requests_.size()) + " requests");
    }
    CompletionResponse response;
    response.content = std::move(content);
    response.provider = ProviderKind::Scripted;
    return response;
}

size_t ScriptedProvider::request_count() const {
    std::lock_guard lock(mutex_);
    return requests_.size();
}

std::vector<CompletionRequest> ScriptedProvider::requests() const {
    std::lock_guard lock(mutex_);
    return requests_;
}

const CompletionRequest& ScriptedProvider::request_at(size_t i) const {
    std::lock_guard lock(mutex_);
    if (i >= requests_.size()) throw Error("scripted provider: no request " + std::to_string(i));
    return requests_[i];
}

Cassette Cassette::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open cassette: " + path.string());
    Cassette cassette;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw Error(path.string() + ":" + std::to_string(line_no) + ": bad cassette line: " + e.what());
        }
        CassetteEntry entry;
        entry.key = j.at("key").get<std::string>();
        entry.request = j.at("request");
        entry.content = j.at("response").at("content").get<std::string>();
        entry.prompt_tokens = j.at("response").value("prompt_tokens", 0);
        entry.completion_tokens = j.at("response").value("completion_tokens", 0);
        if (cassette.index_.count(entry.key))
            throw Error("duplicate cassette key " + entry.key + " at line " + std::to_string(line_no));
        cassette.index_[entry.key] = cassette.entries_.size();
        cassette.entries_.push_back(std::move(entry));
    }
    return cassette;
}

void Cassette::save(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw Error("cannot write cassette: " + path.string());
    for (const auto& e : entries_) {
        nlohmann::json j{{"key", e.key},
                         {"request", e.request},
                         {"response",
                          {{"content", e.content},
                           {"prompt_tokens", e.prompt_tokens},
                           {"completion_tokens", e.completion_tokens}}}};
        out << j.dump() << "\n";
    }
}

void Cassette::record(const CompletionRequest& request, const CompletionResponse& response) {
    std::string key = canonical_key(request);
    if (index_.count(key)) throw Error("cassette already holds key " + key);
    CassetteEntry entry;
    entry.key = key;
    entry.request = nlohmann::json::parse(canonical_request_json(request));
    entry.content = response.content;
    entry.prompt_tokens = response.prompt_tokens;
    entry.completion_tokens = response.completion_tokens;
    index_[key] = entries_.size();
    entries_.push_back(std::move(entry));
}

bool Cassette::contains(const std::string& key) const {
    return index_.count(key) > 0;
}

const CassetteEntry* Cassette::find(const std::string& key) const {
    auto it = index_.find(key);
    if (it == index_.end()) return nullptr;
    return &entries_[it->second];
}

CompletionResponse ReplayProvider::complete(const CompletionRequest& request) {
    validate_request(request);
    std::string key = canonical_key(request);
    const CassetteEntry* entry = cassette_.find(key);
    if (!entry) throw CassetteMissError(key);
    CompletionResponse response;
    response.content = entry->content;
    response.prompt_tokens = entry->prompt_tokens;
    response.completion_tokens = entry->completion_tokens;
    response.provider = ProviderKind::Replay;
    return response;
}

RecordingProvider::RecordingProvider(Provider& inner, const std::filesystem::path& cassette_path)
    : inner_(inner), path_(cassette_path) {}

RecordingProvider::~RecordingProvider() {
    try {
        flush();
    } catch (...) {
    }
}

CompletionResponse RecordingProvider::complete(const CompletionRequest& request) {
    std::string key = canonical_key(request);
    {
        std::lock_guard lock(mutex_);
        if (const CassetteEntry* entry = cassette_.find(key)) {
            CompletionResponse response;
            response.content = entry->content;
            response.prompt_tokens = entry->prompt_tokens;
            response.completion_tokens = entry->completion_tokens;
            response.provider = ProviderKind::Http;
            return response;
        }
    }
    CompletionResponse response = inner_.complete(request);
    std::lock_guard lock(mutex_);
    if (!cassette_.contains(key)) cassette_.record(request, response);
    return response;
}

void RecordingProvider::flush() {
    std::lock_guard lock(mutex_);
    cassette_.save(path_);
}

}  // namespace parld
