#pragma once

#include <chrono>
#include <functional>
#include <memory>
#include <mutex>
#include <string>

#include "parld/provider.hpp"

namespace parld {

struct HttpOptions {
    std::string base_url;  // empty = PARLD_API_BASE env or the public OpenAI endpoint
    std::string api_key;   // empty = PARLD_API_KEY env
    int max_retries = 3;   // extra attempts on timeouts, 429 and 5xx
    int backoff_initial_ms = 500;
    double backoff_multiplier = 2.0;
    int requests_per_minute = 60;
    int timeout_seconds = 120;
    // Test hook; defaults to a real sleep.
    std::function<void(std::chrono::milliseconds)> sleep;
};

// OpenAI-compatible chat-completions client with exponential backoff and a
// token-bucket rate limit. Safe for concurrent use.
class HttpProvider : public Provider {
public:
    explicit HttpProvider(HttpOptions options = {});
    ~HttpProvider() override;

    CompletionResponse complete(const CompletionRequest& request) override;

    const std::string& base_url() const { return base_url_; }

private:
    void acquire_rate_token();

    HttpOptions options_;
    std::string base_url_;
    std::string api_key_;
    std::mutex bucket_mutex_;
    double bucket_tokens_;
    std::chrono::steady_clock::time_point bucket_refill_at_;
};

}  // namespace parld
