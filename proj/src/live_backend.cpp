#include <chrono>
#include <cstdlib>
#include <thread>

#include <httplib.h>

#include "skillrec/errors.hpp"
#include "skillrec/llm_gateway.hpp"

namespace skillrec {

namespace {

bool retryable_status(int status) { return status == 429 || (status >= 500 && status <= 599); }

struct SemaphoreGuard {
    explicit SemaphoreGuard(std::counting_semaphore<1024>& s) : sem(s) { sem.acquire(); }
    ~SemaphoreGuard() { sem.release(); }
    std::counting_semaphore<1024>& sem;
};

}  // namespace

LiveBackend::LiveBackend(LiveConfig config)
    : config_(std::move(config)), in_flight_(std::clamp(config_.max_in_flight, 1, 1024)) {
    const auto scheme_end = config_.base_url.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("base URL needs a scheme: " + config_.base_url);
    const auto path_start = config_.base_url.find('/', scheme_end + 3);
    origin_ = config_.base_url.substr(0, path_start);
    path_prefix_ = path_start == std::string::npos ? std::string{} : config_.base_url.substr(path_start);
    while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
    if (origin_.rfind("https://", 0) == 0) throw ConfigError("built without TLS support; use an http:// endpoint");
#endif
    if (config_.max_attempts < 1) throw ConfigError("max_attempts must be >= 1");
}

LlmResponse LiveBackend::complete(const LlmRequest& request) {
    SemaphoreGuard guard(in_flight_);

    json body{{"model", config_.model},
              {"messages", json::array({json{{"role", "user"}, {"content", request.prompt}}})},
              {"temperature", request.temperature},
              {"max_tokens", request.max_output_tokens}};
    httplib::Headers headers;
    if (const char* key = std::getenv(config_.api_key_env.c_str()); key && *key)
        headers.emplace("Authorization", std::string("Bearer ") + key);

    httplib::Client client(origin_);
    client.set_connection_timeout(config_.timeout_s, 0);
    client.set_read_timeout(config_.timeout_s, 0);
    client.set_write_timeout(config_.timeout_s, 0);

    const auto path = path_prefix_ + "/chat/completions";
    const auto payload = body.dump();
    std::string last_error;
    for (int attempt = 1; attempt <= config_.max_attempts; ++attempt) {
        last_attempts_ = attempt;
        auto res = client.Post(path, headers, payload, "application/json");
        if (res && res->status == 200) {
            auto doc = json::parse(res->body, nullptr, false);
            if (doc.is_discarded()) throw BackendError("live backend returned non-JSON body");
            LlmResponse out;
            out.backend = id();
            try {
                out.text = doc.at("choices").at(0).at("message").at("content").get<std::string>();
            } catch (const json::exception& e) {
                throw BackendError(std::string("live backend response lacks message content: ") + e.what());
            }
            if (doc.contains("usage") && doc["usage"].is_object()) {
                out.usage.prompt_tokens = doc["usage"].value("prompt_tokens", std::int64_t{0});
                out.usage.completion_tokens = doc["usage"].value("completion_tokens", std::int64_t{0});
            }
            return out;
        }
        if (res) {
            last_error = "HTTP " + std::to_string(res->status);
            if (!retryable_status(res->status)) throw BackendError("live backend: " + last_error + ": " + res->body);
        } else {
            last_error = "transport error: " + httplib::to_string(res.error());
        }
        if (attempt < config_.max_attempts) {
            const auto delay = std::chrono::milliseconds(static_cast<long long>(config_.backoff_base_ms)
                                                         << (attempt - 1));
            std::this_thread::sleep_for(delay);
        }
    }
    throw BackendError("live backend: retries exhausted after " + std::to_string(config_.max_attempts) +
                       " attempts (" + last_error + ")");
}

}  // namespace skillrec
