#pragma once
#include <cstdlib>
#include <memory>
#include <string>

#include <httplib.h>
#include <json.hpp>

#include "parley/detail/strings.hpp"
#include "parley/error.hpp"

namespace parley {

// Chat-completion client for any endpoint speaking the de-facto messages
// schema: POST {base_url}/v1/chat/completions with a bearer token taken from
// the endpoint's configured environment variable.
class HttpBackend : public Backend {
public:
    explicit HttpBackend(const ModelEndpoint& endpoint) : endpoint_(endpoint) {
        if (endpoint_.base_url.empty()) {
            throw ConfigError("http backend needs base_url");
        }
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
        if (detail::starts_with(endpoint_.base_url, "https://")) {
            throw ConfigError("https endpoint configured but TLS support is not compiled in");
        }
#endif
        if (!endpoint_.api_key_env.empty()) {
            const char* key = std::getenv(endpoint_.api_key_env.c_str());
            if (key) api_key_ = key;
        }
    }

    ChatResponse complete(const ChatRequest& request) override {
        json body;
        body["model"] = endpoint_.model_name.empty() ? request.model_id : endpoint_.model_name;
        json messages = json::array();
        for (const auto& m : request.messages) {
            messages.push_back({{"role", m.role}, {"content", m.text}});
        }
        body["messages"] = messages;
        body["temperature"] = request.temperature;
        body["max_tokens"] = request.max_response_length;
        if (request.seed) body["seed"] = *request.seed;

        httplib::Client client(endpoint_.base_url);
        client.set_connection_timeout(30);
        client.set_read_timeout(120);
        httplib::Headers headers;
        if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

        auto result = client.Post("/v1/chat/completions", headers, body.dump(),
                                  "application/json");
        if (!result) {
            throw ProviderError("transport failure for model " + request.model_id + ": " +
                                    httplib::to_string(result.error()),
                                /*retryable=*/true);
        }
        if (result->status == 429 || result->status >= 500) {
            throw ProviderError("endpoint returned status " + std::to_string(result->status) +
                                    " for model " + request.model_id,
                                /*retryable=*/true);
        }
        if (result->status != 200) {
            throw ProviderError("endpoint returned status " + std::to_string(result->status) +
                                " for model " + request.model_id + ": " + result->body);
        }
        try {
            json payload = json::parse(result->body);
            const json& choice = payload.at("choices").at(0);
            ChatResponse out;
            out.text = choice.at("message").at("content").get<std::string>();
            std::string finish = choice.value("finish_reason", "stop");
            out.finish_reason =
                finish == "length" ? FinishReason::truncated : FinishReason::complete;
            out.provenance = Provenance::live;
            return out;
        } catch (const json::exception& e) {
            throw ProviderError("malformed completion payload for model " + request.model_id +
                                ": " + e.what());
        }
    }

private:
    ModelEndpoint endpoint_;
    std::string api_key_;
};

}  // namespace parley
