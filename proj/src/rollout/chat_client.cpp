#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "httplib.h"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <random>
#include <thread>

#include "stusim/errors.hpp"
#include "stusim/rollout.hpp"

namespace stusim {

using nlohmann::json;

namespace {

std::string next_correlation_id() {
    static const std::string prefix = [] {
        std::random_device rd;
        char buf[17];
        std::snprintf(buf, sizeof buf, "%08x", rd());
        return std::string(buf);
    }();
    static std::atomic<unsigned long> counter{0};
    return prefix + "-" + std::to_string(++counter);
}

const char* decoding_name(Decoding d) { return d == Decoding::Greedy ? "greedy" : "top_p"; }

}  // namespace

void EndpointConfig::validate() const {
    if (base_url.empty()) throw ConfigError("endpoint base_url is empty");
    if (base_url.rfind("http://", 0) != 0 && base_url.rfind("https://", 0) != 0)
        throw ConfigError("endpoint base_url must start with http:// or https://, got '" + base_url + "'");
    if (model_name.empty()) throw ConfigError("endpoint model_name is empty");
    if (decoding == Decoding::Greedy && n_samples != 1) throw ConfigError("greedy decoding requires n_samples = 1");
    if (n_samples < 1) throw ConfigError("n_samples must be at least 1");
    if (!(top_p > 0.0 && top_p <= 1.0)) throw ConfigError("top_p must lie in (0, 1]");
    if (temperature < 0.0) throw ConfigError("temperature must be non-negative");
    if (max_new_tokens < 1) throw ConfigError("max_new_tokens must be positive");
    if (!(timeout_s > 0.0)) throw ConfigError("timeout_s must be positive");
    if (max_retries < 0) throw ConfigError("max_retries must be non-negative");
    if (backoff_initial_s < 0.0 || backoff_max_s < 0.0) throw ConfigError("backoff delays must be non-negative");
}

EndpointConfig endpoint_from_json(const json& j) {
    EndpointConfig c;
    try {
        c.base_url = j.value("base_url", c.base_url);
        c.model_name = j.value("model_name", c.model_name);
        c.api_key_env = j.value("api_key_env", c.api_key_env);
        const std::string dec = j.value("decoding", std::string("greedy"));
        if (dec == "greedy")
            c.decoding = Decoding::Greedy;
        else if (dec == "top_p")
            c.decoding = Decoding::TopP;
        else
            throw ConfigError("decoding must be greedy or top_p, got '" + dec + "'");
        c.top_p = j.value("top_p", c.top_p);
        c.temperature = j.value("temperature", c.temperature);
        c.n_samples = j.value("n_samples", c.n_samples);
        c.max_new_tokens = j.value("max_new_tokens", c.max_new_tokens);
        c.timeout_s = j.value("timeout_s", c.timeout_s);
        c.max_retries = j.value("max_retries", c.max_retries);
        c.backoff_initial_s = j.value("backoff_initial_s", c.backoff_initial_s);
        c.backoff_max_s = j.value("backoff_max_s", c.backoff_max_s);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("endpoint config: ") + e.what());
    }
    return c;
}

json endpoint_to_json(const EndpointConfig& c) {
    return {{"base_url", c.base_url},
            {"model_name", c.model_name},
            {"api_key_env", c.api_key_env},
            {"decoding", decoding_name(c.decoding)},
            {"top_p", c.top_p},
            {"temperature", c.temperature},
            {"n_samples", c.n_samples},
            {"max_new_tokens", c.max_new_tokens},
            {"timeout_s", c.timeout_s},
            {"max_retries", c.max_retries},
            {"backoff_initial_s", c.backoff_initial_s},
            {"backoff_max_s", c.backoff_max_s}};
}

HttpChatModel::HttpChatModel(EndpointConfig cfg, AttemptHook hook) : cfg_(std::move(cfg)), hook_(std::move(hook)) {
    cfg_.validate();
    const size_t scheme_end = cfg_.base_url.find("://") + 3;
    const size_t path_start = cfg_.base_url.find('/', scheme_end);
    scheme_host_ = cfg_.base_url.substr(0, path_start);
    std::string prefix = path_start == std::string::npos ? "" : cfg_.base_url.substr(path_start);
    while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
    path_ = prefix + "/chat/completions";
}

json HttpChatModel::request_body(const Dialogue& messages) const {
    const bool greedy = cfg_.decoding == Decoding::Greedy;
    return {{"model", cfg_.model_name},
            {"messages", messages_to_json(messages)},
            {"temperature", greedy ? 0.0 : cfg_.temperature},
            {"top_p", greedy ? 1.0 : cfg_.top_p},
            {"n", greedy ? 1 : cfg_.n_samples},
            {"max_tokens", cfg_.max_new_tokens}};
}

std::vector<std::string> HttpChatModel::complete(const Dialogue& messages) {
    const json request = request_body(messages);
    const std::string body = request.dump(-1, ' ', false, json::error_handler_t::replace);
    const size_t want = request["n"].get<size_t>();

    httplib::Headers headers;
    if (!cfg_.api_key_env.empty()) {
        const char* key = std::getenv(cfg_.api_key_env.c_str());
        if (!key) throw ConfigError("environment variable " + cfg_.api_key_env + " is not set");
        headers.emplace("Authorization", std::string("Bearer ") + key);
    }

    const std::string id = next_correlation_id();
    headers.emplace("X-Request-Id", id);
    std::string last_error;
    const int attempts = cfg_.max_retries + 1;
    for (int attempt = 1; attempt <= attempts; ++attempt) {
        const auto t0 = std::chrono::steady_clock::now();
        httplib::Client cli(scheme_host_);
        const auto timeout = std::chrono::duration<double>(cfg_.timeout_s);
        cli.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
        cli.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
        cli.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
        auto res = cli.Post(path_, headers, body, "application/json");
        AttemptRecord rec;
        rec.correlation_id = id;
        rec.attempt = attempt;
        rec.elapsed_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

        bool retriable = false;
        if (!res) {
            rec.error = "transport: " + httplib::to_string(res.error());
            retriable = true;
        } else {
            rec.http_status = res->status;
            if (res->status >= 200 && res->status < 300) {
                std::vector<std::string> out;
                try {
                    const json j = json::parse(res->body);
                    const auto& choices = j.at("choices");
                    if (!choices.is_array() || choices.size() < want)
                        throw ProtocolError("expected " + std::to_string(want) + " choices, got " +
                                            std::to_string(choices.is_array() ? choices.size() : 0));
                    for (size_t i = 0; i < want; ++i) {
                        const json& content = choices[i].at("message").at("content");
                        out.push_back(content.is_null() ? std::string() : content.get<std::string>());
                    }
                } catch (const json::exception& e) {
                    rec.error = std::string("protocol: ") + e.what();
                    if (hook_) hook_(rec);
                    throw ProtocolError("malformed chat response (" + id + "): " + e.what());
                } catch (const ProtocolError& e) {
                    rec.error = std::string("protocol: ") + e.what();
                    if (hook_) hook_(rec);
                    throw ProtocolError(std::string(e.what()) + " (" + id + ")");
                }
                if (hook_) hook_(rec);
                return out;
            }
            rec.error = "http " + std::to_string(res->status);
            retriable = res->status == 429 || res->status >= 500;
        }
        if (hook_) hook_(rec);
        last_error = rec.error;
        if (!retriable) throw EndpointUnavailable("chat endpoint rejected request " + id + ": " + rec.error);
        if (attempt < attempts) {
            const double delay = std::min(cfg_.backoff_max_s, cfg_.backoff_initial_s * std::pow(2.0, attempt - 1));
            if (delay > 0) std::this_thread::sleep_for(std::chrono::duration<double>(delay));
        }
    }
    throw EndpointUnavailable("chat endpoint unavailable after " + std::to_string(attempts) + " attempts (" + id +
                              "): " + last_error);
}

std::vector<std::string> chat_complete(const EndpointConfig& cfg, const Dialogue& messages, AttemptHook hook) {
    HttpChatModel model(cfg, std::move(hook));
    return model.complete(messages);
}

}  // namespace stusim
