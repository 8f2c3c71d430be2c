#include "parld/http_provider.hpp"

#include <cstdlib>
#include <thread>

#include <httplib.h>  // CPPHTTPLIB_OPENSSL_SUPPORT comes from the build, uniformly

#include <json.hpp>

namespace parld {

namespace {

std::string env_or(const char* name, const std::string& fallback) {
    const char* value = std::getenv(name);
    return value && *value ? std::string(value) : fallback;
}

bool retryable_status(int status) {
    return status == 429 || (status >= 500 && status < 600);
}

nlohmann::json build_body(const CompletionRequest& request) {
    nlohmann::json messages = nlohmann::json::array();
    for (const auto& m : request.messages) {
        messages.push_back({{"role", to_string(m.role)}, {"content", m.content}});
    }
    nlohmann::json body{{"model", request.model},
                        {"messages", messages},
                        {"temperature", request.temperature}};
    if (request.max_tokens) body["max_tokens"] = *request.max_tokens;
    if (request.json_mode) body["response_format"] = {{"type", "json_object"}};
    return body;
}

}  // namespace

HttpProvider::HttpProvider(HttpOptions options)
    : options_(std::move(options)),
      bucket_tokens_(0),
      bucket_refill_at_(std::chrono::steady_clock::now()) {
    base_url_ = options_.base_url.empty() ? env_or("PARLD_API_BASE", "https://api.openai.com")
                                          : options_.base_url;
    while (!base_url_.empty() && base_url_.back() == '/') base_url_.pop_back();
    api_key_ = options_.api_key.empty() ? env_or("PARLD_API_KEY", "") : options_.api_key;
    if (!options_.sleep) {
        options_.sleep = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
    }
    bucket_tokens_ = options_.requests_per_minute;
}

HttpProvider::~HttpProvider() = default;

void HttpProvider::acquire_rate_token() {
    if (options_.requests_per_minute <= 0) return;
    while (true) {
        std::chrono::milliseconds wait(0);
        {
            std::lock_guard lock(bucket_mutex_);
            auto now = std::chrono::steady_clock::now();
            double per_ms = options_.requests_per_minute / 60000.0;
            double elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(now - bucket_refill_at_).count();
            bucket_tokens_ = std::min<double>(options_.requests_per_minute, bucket_tokens_ + elapsed * per_ms);
            bucket_refill_at_ = now;
            if (bucket_tokens_ >= 1.0) {
                bucket_tokens_ -= 1.0;
                return;
            }
            wait = std::chrono::milliseconds(static_cast<long>((1.0 - bucket_tokens_) / per_ms) + 1);
        }
        options_.sleep(wait);
    }
}

CompletionResponse HttpProvider::complete(const CompletionRequest& request) {
    validate_request(request);
    if (api_key_.empty()) throw TransportError("no API key: set PARLD_API_KEY");
#ifndef PARLD_HTTPS
    if (base_url_.rfind("https://", 0) == 0)
        throw TransportError("built without TLS support; https base URL unusable: " + base_url_);
#endif

    const std::string body = build_body(request).dump();
    std::string last_error;
    int delay_ms = options_.backoff_initial_ms;

    for (int attempt = 0; attempt <= options_.max_retries; ++attempt) {
        if (attempt > 0) {
            options_.sleep(std::chrono::milliseconds(delay_ms));
            delay_ms = static_cast<int>(delay_ms * options_.backoff_multiplier);
        }
        acquire_rate_token();

        httplib::Client client(base_url_);
        client.set_connection_timeout(options_.timeout_seconds, 0);
        client.set_read_timeout(options_.timeout_seconds, 0);
        client.set_bearer_token_auth(api_key_);

        auto result = client.Post("/v1/chat/completions", body, "application/json");
        if (!result) {
            last_error = "connection failure: " + httplib::to_string(result.error());
            continue;
        }
        if (result->status != 200) {
            last_error = "HTTP " + std::to_string(result->status) + ": " + result->body;
            if (retryable_status(result->status)) continue;
            throw TransportError(last_error);
        }

        nlohmann::json j;
        try {
            j = nlohmann::json::parse(result->body);
        } catch (const nlohmann::json::exception& e) {
            throw TransportError(std::string("unparseable completion body: ") + e.what());
        }
        try {
            CompletionResponse response;
            response.content = j.at("choices").at(0).at("message").at("content").get<std::string>();
            if (auto usage = j.find("usage"); usage != j.end()) {
                response.prompt_tokens = usage->value("prompt_tokens", 0);
                response.completion_tokens = usage->value("completion_tokens", 0);
            }
            response.provider = ProviderKind::Http;
            return response;
        } catch (const nlohmann::json::exception& e) {
            throw TransportError(std::string("unexpected completion shape: ") + e.what());
        }
    }
    throw TransportError("request failed after " + std::to_string(options_.max_retries + 1) +
                         " attempts; last error: " + last_error);
}

}  // namespace parld
