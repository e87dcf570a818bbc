#pragma once

#include "biaslens/error.hpp"
#include "biaslens/scoring.hpp"

#include <httplib.h>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstddef>
#include <string>
#include <thread>
#include <vector>

namespace biaslens {

struct RemoteConfig {
    std::string endpoint;                              // http://host[:port][/prefix]
    std::size_t batch_size = 16;
    std::chrono::milliseconds timeout{30'000};
    int retries = 2;                                   // extra attempts after the first
    std::chrono::milliseconds backoff{200};            // doubled after each failed attempt
};

namespace detail {

struct ParsedEndpoint {
    std::string origin; // scheme://host:port
    std::string prefix; // path without trailing slash
};

inline ParsedEndpoint parse_endpoint(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw InvalidArgument("endpoint must be an absolute http URL: " + url);
    const auto scheme = url.substr(0, scheme_end);
    if (scheme != "http") throw InvalidArgument("only http endpoints are supported: " + url);
    const auto path_start = url.find('/', scheme_end + 3);
    ParsedEndpoint p;
    p.origin = url.substr(0, path_start);
    if (p.origin.size() <= scheme_end + 3) throw InvalidArgument("endpoint has no host: " + url);
    if (path_start != std::string::npos) p.prefix = url.substr(path_start);
    while (!p.prefix.empty() && p.prefix.back() == '/') p.prefix.pop_back();
    return p;
}

inline std::vector<TokenLogProbs> decode_token_logprobs(const std::string& body, const std::vector<std::string>& sentences) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(body);
    } catch (const nlohmann::json::parse_error&) {
        throw ProtocolError("scorer response is not JSON", sentences.empty() ? std::string{} : sentences.front());
    }
    if (!doc.is_object() || !doc.contains("results") || !doc["results"].is_array()) {
        throw ProtocolError("scorer response has no results array", sentences.empty() ? std::string{} : sentences.front());
    }
    const auto& results = doc["results"];
    if (results.size() != sentences.size()) {
        const auto& named = sentences[std::min(results.size(), sentences.size() - 1)];
        throw ProtocolError("scorer returned " + std::to_string(results.size()) + " results for " +
                                std::to_string(sentences.size()) + " sentences",
                            named);
    }

    std::vector<TokenLogProbs> out;
    out.reserve(results.size());
    for (std::size_t i = 0; i < results.size(); ++i) {
        const auto& r = results[i];
        const auto& sentence = sentences[i];
        auto fail = [&](const std::string& why) { throw ProtocolError("malformed result for sentence \"" + sentence + "\": " + why, sentence); };
        if (!r.is_object() || !r.contains("tokens") || !r.contains("log_probs")) fail("missing tokens or log_probs");
        if (!r["tokens"].is_array() || !r["log_probs"].is_array()) fail("tokens and log_probs must be arrays");
        TokenLogProbs t;
        for (const auto& tok : r["tokens"]) {
            if (!tok.is_string()) fail("token is not a string");
            t.tokens.push_back(tok.get<std::string>());
        }
        for (const auto& lp : r["log_probs"]) {
            if (!lp.is_number()) fail("log-probability is not a number");
            const double v = lp.get<double>();
            if (!std::isfinite(v) || v > 0.0) fail("log-probability " + lp.dump() + " is not <= 0");
            t.log_probs.push_back(v);
        }
        if (t.tokens.size() != t.log_probs.size()) {
            fail(std::to_string(t.tokens.size()) + " tokens but " + std::to_string(t.log_probs.size()) + " log-probabilities");
        }
        if (t.tokens.empty()) fail("no tokens");
        out.push_back(std::move(t));
    }
    return out;
}

} // namespace detail

/**
 * @brief Client for a remote masked-LM scorer.
 *
 * Sends `POST {endpoint}/v1/token-logprobs` with `{"model", "sentences"}` in
 * batches and expects `{"results": [{"tokens", "log_probs"}]}` back, one
 * result per sentence. Transport failures and 5xx answers are retried with
 * exponential backoff; any malformed result fails the whole batch.
 */
class RemoteScorer final : public ScoreProvider {
public:
    RemoteScorer(RemoteConfig config, std::string model)
        : config_(std::move(config)), model_(std::move(model)), endpoint_(detail::parse_endpoint(config_.endpoint)) {
        if (config_.batch_size == 0) throw InvalidArgument("batch size must be positive");
        if (config_.retries < 0) throw InvalidArgument("retry count must be non-negative");
    }

    std::vector<TokenLogProbs> score(std::span<const std::string> texts) const override {
        std::vector<TokenLogProbs> out;
        out.reserve(texts.size());
        for (std::size_t lo = 0; lo < texts.size(); lo += config_.batch_size) {
            const std::size_t hi = std::min(texts.size(), lo + config_.batch_size);
            auto part = request(std::vector<std::string>(texts.begin() + static_cast<std::ptrdiff_t>(lo),
                                                         texts.begin() + static_cast<std::ptrdiff_t>(hi)));
            for (auto& p : part) out.push_back(std::move(p));
        }
        return out;
    }

    bool concurrent() const override { return false; }
    std::size_t batch_size() const override { return config_.batch_size; }

    const RemoteConfig& config() const noexcept { return config_; }

private:
    std::vector<TokenLogProbs> request(const std::vector<std::string>& sentences) const {
        const nlohmann::json body{{"model", model_}, {"sentences", sentences}};
        const std::string payload = body.dump();
        const std::string path = endpoint_.prefix + "/v1/token-logprobs";

        std::string last_error;
        auto delay = config_.backoff;
        for (int attempt = 0; attempt <= config_.retries; ++attempt) {
            if (attempt > 0) {
                std::this_thread::sleep_for(delay);
                delay *= 2;
            }
            httplib::Client client(endpoint_.origin);
            const auto secs = config_.timeout.count() / 1000;
            const auto usecs = (config_.timeout.count() % 1000) * 1000;
            client.set_connection_timeout(secs, usecs);
            client.set_read_timeout(secs, usecs);
            client.set_write_timeout(secs, usecs);

            auto res = client.Post(path, payload, "application/json");
            if (!res) {
                last_error = httplib::to_string(res.error());
                continue;
            }
            if (res->status >= 500) {
                last_error = "HTTP " + std::to_string(res->status);
                continue;
            }
            if (res->status != 200) {
                throw TransportError("scorer at " + config_.endpoint + " rejected the request with HTTP " + std::to_string(res->status),
                                     config_.endpoint);
            }
            return detail::decode_token_logprobs(res->body, sentences);
        }
        throw TransportError("scorer at " + config_.endpoint + " failed after " + std::to_string(config_.retries + 1) +
                                 " attempts: " + last_error,
                             config_.endpoint);
    }

    RemoteConfig config_;
    std::string model_;
    detail::ParsedEndpoint endpoint_;
};

/// Scores `texts` remotely; PLLs are computed here as the mean of the served log-probs.
inline std::vector<SentenceScore> remote_score(const RemoteConfig& config, const std::string& model_id,
                                               const std::vector<std::string>& texts, const ScoreOptions& options = {}) {
    if (texts.empty()) throw InvalidArgument("no sentences to score");
    RemoteScorer scorer(config, model_id);
    auto raw = scorer.score(texts);
    std::vector<SentenceScore> out;
    out.reserve(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        try {
            out.push_back(make_sentence_score(raw[i], options));
        } catch (const ProviderError& e) {
            throw ProtocolError(e.what(), texts[i]);
        }
        out.back().model_id = model_id;
    }
    return out;
}

} // namespace biaslens
