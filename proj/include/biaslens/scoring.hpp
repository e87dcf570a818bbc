#pragma once

#include "biaslens/dataset.hpp"
#include "biaslens/error.hpp"
#include "biaslens/ngram.hpp"
#include "biaslens/tokenize.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <utility>
#include <vector>

namespace biaslens {

struct TokenScore {
    std::string token;
    double log_prob = 0.0;

    bool operator==(const TokenScore&) const = default;
};

/// Pseudo-log-likelihood of one sentence under one model: the mean of the
/// per-position masked log-probabilities in `token_scores`.
struct SentenceScore {
    std::string sentence_id;
    std::string model_id;
    double pll = 0.0;
    std::vector<TokenScore> token_scores;

    bool operator==(const SentenceScore&) const = default;
};

struct ScoreOptions {
    /// Leave punctuation-only tokens out of the mean.
    bool exclude_punctuation = false;
};

/// Raw provider output for one sentence.
struct TokenLogProbs {
    std::vector<std::string> tokens;
    std::vector<double> log_probs;
};

template <class Model>
concept MaskedTokenModel = requires(const Model& m, const TokenSequence& tokens, std::size_t position) {
    { m.masked_log_prob(tokens, position) } -> std::convertible_to<double>;
};

/// Builds a SentenceScore from provider output; throws ProviderError if the
/// output is unusable (length mismatch, positive or non-finite values).
inline SentenceScore make_sentence_score(const TokenLogProbs& raw, const ScoreOptions& options = {}) {
    if (raw.tokens.size() != raw.log_probs.size()) {
        throw ProviderError("provider returned " + std::to_string(raw.tokens.size()) + " tokens but " +
                            std::to_string(raw.log_probs.size()) + " log-probabilities");
    }
    SentenceScore out;
    double sum = 0.0;
    for (std::size_t i = 0; i < raw.tokens.size(); ++i) {
        const double lp = raw.log_probs[i];
        if (!std::isfinite(lp) || lp > 0.0) {
            throw ProviderError("log-probability at position " + std::to_string(i) + " is not a finite value <= 0", i);
        }
        if (options.exclude_punctuation && is_punctuation_token(raw.tokens[i])) continue;
        out.token_scores.push_back(TokenScore{raw.tokens[i], lp});
        sum += lp;
    }
    if (out.token_scores.empty()) throw ProviderError("sentence has no scorable tokens");
    out.pll = sum / static_cast<double>(out.token_scores.size());
    return out;
}

/// Masks each position in turn and collects the model's log-probability.
template <MaskedTokenModel Model>
TokenLogProbs masked_token_log_probs(const Model& model, std::string_view text) {
    auto seq = tokenize(text);
    TokenLogProbs raw;
    raw.log_probs.reserve(seq.size());
    for (std::size_t i = 0; i < seq.size(); ++i) {
        double lp;
        try {
            lp = static_cast<double>(model.masked_log_prob(seq, i));
        } catch (const std::exception& e) {
            throw ProviderError("masked scoring failed at position " + std::to_string(i) + ": " + e.what(), i);
        }
        if (!std::isfinite(lp) || lp > 0.0) {
            throw ProviderError("masked scoring at position " + std::to_string(i) + " returned an invalid log-probability", i);
        }
        raw.log_probs.push_back(lp);
    }
    raw.tokens = std::move(seq.tokens);
    return raw;
}

/// Pseudo-log-likelihood: mask one token at a time, average the log-probs.
template <MaskedTokenModel Model>
SentenceScore pll_score(const Model& model, std::string_view text, const ScoreOptions& options = {}) {
    return make_sentence_score(masked_token_log_probs(model, text), options);
}

/**
 * @brief Source of per-token log-probabilities for a batch of sentences.
 *
 * Implementations return one entry per input text, in input order, or throw.
 * Providers that cannot take concurrent calls report `concurrent() == false`.
 */
class ScoreProvider {
public:
    virtual ~ScoreProvider() = default;
    virtual std::vector<TokenLogProbs> score(std::span<const std::string> texts) const = 0;
    virtual bool concurrent() const { return true; }
    virtual std::size_t batch_size() const { return 1; }
};

template <MaskedTokenModel Model>
class LocalProvider final : public ScoreProvider {
public:
    explicit LocalProvider(std::shared_ptr<const Model> model) : model_(std::move(model)) {}

    std::vector<TokenLogProbs> score(std::span<const std::string> texts) const override {
        std::vector<TokenLogProbs> out;
        out.reserve(texts.size());
        for (const auto& t : texts) out.push_back(masked_token_log_probs(*model_, t));
        return out;
    }

    const Model& model() const { return *model_; }

private:
    std::shared_ptr<const Model> model_;
};

/// How a model's scores were (or can again be) produced.
struct ProviderSpec {
    enum class Kind { builtin, remote, imported };

    Kind kind = Kind::builtin;
    double alpha = 1.0;          // builtin
    std::string endpoint;        // remote
    std::string remote_model;    // remote; defaults to the model id
    bool exclude_punctuation = false;

    bool operator==(const ProviderSpec&) const = default;
};

inline std::string_view to_string(ProviderSpec::Kind k) {
    switch (k) {
    case ProviderSpec::Kind::builtin: return "builtin";
    case ProviderSpec::Kind::remote: return "remote";
    case ProviderSpec::Kind::imported: return "imported";
    }
    return "imported";
}

/**
 * Scores of one model over a corpus. A model is partial while `pending` is
 * non-empty; lookups go through an id index kept in sync by `add`.
 */
class ModelScores {
public:
    ModelScores() = default;
    explicit ModelScores(std::string model_id, ProviderSpec provider = {})
        : model_id_(std::move(model_id)), provider_(std::move(provider)) {}

    const std::string& model_id() const noexcept { return model_id_; }
    const ProviderSpec& provider() const noexcept { return provider_; }
    const std::vector<SentenceScore>& scores() const noexcept { return scores_; }
    const std::vector<std::string>& pending() const noexcept { return pending_; }
    bool partial() const noexcept { return !pending_.empty(); }

    void add(SentenceScore s) {
        s.model_id = model_id_;
        if (auto it = index_.find(s.sentence_id); it != index_.end()) {
            scores_[it->second] = std::move(s);
            return;
        }
        index_.emplace(s.sentence_id, scores_.size());
        scores_.push_back(std::move(s));
    }

    void set_pending(std::vector<std::string> ids) { pending_ = std::move(ids); }

    const SentenceScore* find(std::string_view sentence_id) const {
        auto it = index_.find(std::string(sentence_id));
        return it == index_.end() ? nullptr : &scores_[it->second];
    }

    bool operator==(const ModelScores& o) const {
        return model_id_ == o.model_id_ && provider_ == o.provider_ && scores_ == o.scores_ && pending_ == o.pending_;
    }

private:
    std::string model_id_;
    ProviderSpec provider_;
    std::vector<SentenceScore> scores_;
    std::vector<std::string> pending_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Per-sentence, per-model scores; models keep registration order.
class ScoreMatrix {
public:
    std::vector<std::string> model_ids() const {
        std::vector<std::string> ids;
        for (const auto& m : models_) ids.push_back(m.model_id());
        return ids;
    }

    const std::vector<ModelScores>& models() const noexcept { return models_; }
    bool empty() const noexcept { return models_.empty(); }

    const ModelScores* model(std::string_view model_id) const {
        for (const auto& m : models_) {
            if (m.model_id() == model_id) return &m;
        }
        return nullptr;
    }

    bool has_model(std::string_view model_id) const { return model(model_id) != nullptr; }

    const SentenceScore* find(std::string_view sentence_id, std::string_view model_id) const {
        const auto* m = model(model_id);
        return m ? m->find(sentence_id) : nullptr;
    }

    std::optional<double> pll(std::string_view sentence_id, std::string_view model_id) const {
        const auto* s = find(sentence_id, model_id);
        return s ? std::optional<double>(s->pll) : std::nullopt;
    }

    /// Inserts at `position` (appends by default). Throws on a duplicate id.
    void add_model(ModelScores scores, std::optional<std::size_t> position = std::nullopt) {
        if (has_model(scores.model_id())) throw InvalidArgument("model " + scores.model_id() + " is already scored");
        const std::size_t at = std::min(position.value_or(models_.size()), models_.size());
        models_.insert(models_.begin() + static_cast<std::ptrdiff_t>(at), std::move(scores));
    }

    bool remove_model(std::string_view model_id) {
        auto it = std::find_if(models_.begin(), models_.end(), [&](const ModelScores& m) { return m.model_id() == model_id; });
        if (it == models_.end()) return false;
        models_.erase(it);
        return true;
    }

    bool operator==(const ScoreMatrix&) const = default;

private:
    std::vector<ModelScores> models_;
};

struct CorpusScoringOptions {
    ScoreOptions score;
    std::size_t threads = 0; // 0: hardware concurrency
};

/**
 * Scores every record of `corpus` with `provider`. Batches of
 * `provider.batch_size()` run on worker threads when the provider allows
 * concurrent calls; results are assembled in corpus order either way.
 * Any failing batch aborts the whole fragment with a ScoringError listing
 * completed and failed ids.
 */
inline ModelScores score_corpus(const ScoreProvider& provider, const Corpus& corpus, const std::string& model_id,
                                const CorpusScoringOptions& options = {}, ProviderSpec spec = {}) {
    const auto& records = corpus.records();
    const std::size_t n = records.size();
    const std::size_t batch = std::max<std::size_t>(1, provider.batch_size());
    const std::size_t n_batches = (n + batch - 1) / batch;

    std::vector<std::optional<SentenceScore>> results(n);
    std::vector<std::string> batch_errors(n_batches);
    std::atomic<std::size_t> next{0};

    auto run_batch = [&](std::size_t b) {
        const std::size_t lo = b * batch;
        const std::size_t hi = std::min(n, lo + batch);
        std::vector<std::string> texts;
        texts.reserve(hi - lo);
        for (std::size_t i = lo; i < hi; ++i) texts.push_back(records[i].text);
        try {
            auto raw = provider.score(texts);
            if (raw.size() != texts.size()) throw ProviderError("provider returned the wrong number of results");
            std::vector<SentenceScore> scored;
            scored.reserve(raw.size());
            for (std::size_t k = 0; k < raw.size(); ++k) {
                try {
                    scored.push_back(make_sentence_score(raw[k], options.score));
                } catch (const ProviderError& e) {
                    throw ProviderError("sentence " + records[lo + k].id + ": " + e.what(), e.position());
                }
            }
            for (std::size_t k = 0; k < scored.size(); ++k) {
                scored[k].sentence_id = records[lo + k].id;
                scored[k].model_id = model_id;
                results[lo + k] = std::move(scored[k]);
            }
        } catch (const std::exception& e) {
            batch_errors[b] = e.what();
        }
    };
    auto worker = [&] {
        for (std::size_t b = next++; b < n_batches; b = next++) run_batch(b);
    };

    std::size_t threads = options.threads ? options.threads : std::max(1u, std::thread::hardware_concurrency());
    if (!provider.concurrent()) threads = 1;
    threads = std::min(threads, std::max<std::size_t>(1, n_batches));
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }

    std::vector<std::string> completed, failed;
    std::string first_error;
    for (std::size_t i = 0; i < n; ++i) {
        if (results[i]) {
            completed.push_back(records[i].id);
        } else {
            failed.push_back(records[i].id);
            if (first_error.empty()) first_error = batch_errors[i / batch];
        }
    }
    if (!failed.empty()) {
        throw ScoringError("scoring model " + model_id + " failed: " + first_error, std::move(completed), std::move(failed));
    }

    spec.exclude_punctuation = options.score.exclude_punctuation;
    ModelScores out(model_id, std::move(spec));
    for (auto& r : results) out.add(std::move(*r));
    return out;
}

/// Builtin provider: a trigram model trained on the corpus texts.
inline std::shared_ptr<const ScoreProvider> make_builtin_provider(const std::vector<std::string>& texts, double alpha = 1.0) {
    auto model = std::make_shared<const NgramMaskedModel>(NgramMaskedModel::train(texts, alpha));
    return std::make_shared<LocalProvider<NgramMaskedModel>>(std::move(model));
}

// JSON

inline nlohmann::json provider_spec_to_json(const ProviderSpec& p) {
    nlohmann::json j{{"kind", to_string(p.kind)}, {"exclude_punctuation", p.exclude_punctuation}};
    if (p.kind == ProviderSpec::Kind::builtin) j["alpha"] = p.alpha;
    if (p.kind == ProviderSpec::Kind::remote) {
        j["endpoint"] = p.endpoint;
        j["remote_model"] = p.remote_model;
    }
    return j;
}

inline ProviderSpec provider_spec_from_json(const nlohmann::json& j) {
    ProviderSpec p;
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "builtin") p.kind = ProviderSpec::Kind::builtin;
    else if (kind == "remote") p.kind = ProviderSpec::Kind::remote;
    else if (kind == "imported") p.kind = ProviderSpec::Kind::imported;
    else throw InvalidArgument("unknown provider kind '" + kind + "'");
    p.exclude_punctuation = j.value("exclude_punctuation", false);
    p.alpha = j.value("alpha", 1.0);
    p.endpoint = j.value("endpoint", std::string{});
    p.remote_model = j.value("remote_model", std::string{});
    return p;
}

/// Score-file document: {"model_id", "scores": [{"id", "pll", "token_log_probs", "tokens"}]}.
inline nlohmann::ordered_json score_file_json(const ModelScores& m) {
    nlohmann::ordered_json doc;
    doc["model_id"] = m.model_id();
    auto& arr = doc["scores"] = nlohmann::ordered_json::array();
    for (const auto& s : m.scores()) {
        nlohmann::ordered_json row;
        row["id"] = s.sentence_id;
        row["pll"] = s.pll;
        auto& lps = row["token_log_probs"] = nlohmann::ordered_json::array();
        auto& toks = row["tokens"] = nlohmann::ordered_json::array();
        for (const auto& t : s.token_scores) {
            lps.push_back(t.log_prob);
            toks.push_back(t.token);
        }
        arr.push_back(std::move(row));
    }
    return doc;
}

/**
 * Reads a score file. `pll` is taken as written; the file must agree with
 * the mean of its token log-probs to 1e-9 when those are present.
 */
inline ModelScores score_file_from_json(const nlohmann::json& doc, ProviderSpec spec = {ProviderSpec::Kind::imported}) {
    if (!doc.is_object() || !doc.contains("model_id") || !doc.contains("scores")) {
        throw ParseError("score file must be an object with model_id and scores");
    }
    ModelScores m(doc.at("model_id").get<std::string>(), std::move(spec));
    for (const auto& row : doc.at("scores")) {
        SentenceScore s;
        s.sentence_id = row.at("id").get<std::string>();
        s.pll = row.at("pll").get<double>();
        const auto lps = row.value("token_log_probs", std::vector<double>{});
        const auto toks = row.value("tokens", std::vector<std::string>{});
        if (!toks.empty() && toks.size() != lps.size()) throw ParseError("score for " + s.sentence_id + " has mismatched tokens");
        double sum = 0.0;
        for (std::size_t i = 0; i < lps.size(); ++i) {
            s.token_scores.push_back(TokenScore{toks.empty() ? std::string{} : toks[i], lps[i]});
            sum += lps[i];
        }
        if (!lps.empty() && std::abs(sum / static_cast<double>(lps.size()) - s.pll) > 1e-9) {
            throw ParseError("score for " + s.sentence_id + " has a pll that is not the mean of its token log-probs");
        }
        if (m.find(s.sentence_id)) throw ParseError("score file lists " + s.sentence_id + " twice");
        m.add(std::move(s));
    }
    return m;
}

/**
 * Checks an imported model against `corpus`: every scored id must exist;
 * corpus records without a score become pending.
 */
inline void reconcile_with_corpus(ModelScores& m, const Corpus& corpus) {
    for (const auto& s : m.scores()) {
        if (!corpus.contains(s.sentence_id)) {
            throw InvalidArgument("model " + m.model_id() + " scores unknown sentence " + s.sentence_id);
        }
    }
    std::vector<std::string> pending;
    for (const auto& r : corpus.records()) {
        if (!m.find(r.id)) pending.push_back(r.id);
    }
    m.set_pending(std::move(pending));
}

} // namespace biaslens
