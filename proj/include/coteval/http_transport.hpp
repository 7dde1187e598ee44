#pragma once
// Chat-completion transport over HTTP(S).
//
// Request:  POST <base_url>/chat/completions
//           {"model": ..., "messages": [{"role": "user", "content": prompt}], ...params}
// Response: choices[0].message.content is returned verbatim.
// The bearer credential is read from the endpoint's auth_env at call time.

#include "coteval/judge.hpp"

#include <httplib.h>
#include <json.hpp>

#include <cstdlib>
#include <string>
#include <string_view>

namespace coteval {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ParsedUrl {
    std::string origin;  // scheme://host[:port]
    std::string path;    // request path, starting with '/'
};

/// Splits a base URL and appends /chat/completions unless already present.
inline ParsedUrl completion_url(std::string_view base_url) {
    auto scheme_end = base_url.find("://");
    if (scheme_end == std::string_view::npos) throw ConfigError("base_url needs a scheme: " + std::string(base_url));
    auto scheme = base_url.substr(0, scheme_end);
    if (scheme != "http" && scheme != "https") throw ConfigError("unsupported scheme in base_url: " + std::string(base_url));
    auto host_start = scheme_end + 3;
    auto path_start = base_url.find('/', host_start);
    ParsedUrl url;
    url.origin = std::string(base_url.substr(0, path_start));
    std::string path = path_start == std::string_view::npos ? std::string{} : std::string(base_url.substr(path_start));
    while (!path.empty() && path.back() == '/') path.pop_back();
    constexpr std::string_view kSuffix = "/chat/completions";
    if (path.size() < kSuffix.size() || path.compare(path.size() - kSuffix.size(), kSuffix.size(), kSuffix) != 0) {
        path += kSuffix;
    }
    url.path = path;
    return url;
}

inline std::string read_credential(const JudgeEndpoint& endpoint) {
    if (endpoint.auth_env.empty()) return {};
    const char* value = std::getenv(endpoint.auth_env.c_str());
    if (value == nullptr || *value == '\0') {
        throw ConfigError("credential variable '" + endpoint.auth_env + "' for endpoint '" + endpoint.label +
                          "' is not set");
    }
    return value;
}

inline nlohmann::json completion_request(const JudgeEndpoint& endpoint, std::string_view prompt) {
    nlohmann::json body = nlohmann::json::object();
    if (endpoint.params.is_object()) body = endpoint.params;
    body["model"] = endpoint.model_id;
    body["messages"] = nlohmann::json::array({{{"role", "user"}, {"content", std::string(prompt)}}});
    return body;
}

class HttpTransport final : public JudgeTransport {
public:
    std::string complete(const JudgeEndpoint& endpoint, std::string_view prompt) override {
        auto url = completion_url(endpoint.base_url);
        auto credential = read_credential(endpoint);

        // One client per call: httplib clients are not shared across threads.
        httplib::Client client(url.origin);
        auto timeout = std::chrono::duration<double>(endpoint.timeout_seconds);
        auto sec = static_cast<time_t>(endpoint.timeout_seconds);
        auto usec = static_cast<time_t>((timeout.count() - static_cast<double>(sec)) * 1e6);
        client.set_connection_timeout(sec, usec);
        client.set_read_timeout(sec, usec);
        client.set_write_timeout(sec, usec);

        httplib::Headers headers;
        if (!credential.empty()) headers.emplace("Authorization", "Bearer " + credential);

        auto body = completion_request(endpoint, prompt).dump();
        auto res = client.Post(url.path, headers, body, "application/json");
        if (!res) {
            throw TransportError("request to '" + endpoint.label + "' failed: " + httplib::to_string(res.error()));
        }
        if (res->status != 200) {
            throw TransportError("endpoint '" + endpoint.label + "' returned HTTP " + std::to_string(res->status));
        }
        auto reply = nlohmann::json::parse(res->body, nullptr, false);
        if (reply.is_discarded()) throw TransportError("endpoint '" + endpoint.label + "' returned non-JSON body");
        try {
            const auto& content = reply.at("choices").at(0).at("message").at("content");
            if (!content.is_string()) throw TransportError("message content is not a string");
            return content.get<std::string>();
        } catch (const nlohmann::json::exception&) {
            throw TransportError("endpoint '" + endpoint.label + "' reply lacks choices[0].message.content");
        }
    }
};

}  // namespace coteval
