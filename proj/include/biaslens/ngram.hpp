#pragma once

#include "biaslens/error.hpp"
#include "biaslens/tokenize.hpp"

#include <cmath>
#include <cstddef>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

namespace biaslens {

/**
 * @brief Laplace-smoothed trigram masked-token model.
 *
 * The masked probability of the middle token w given its immediate
 * neighbours (l, r) is
 *
 *     (c3(l, w, r) + alpha) / (c2(l, r) + alpha * |V|)
 *
 * where sentence edges are padded with boundary markers and out-of-vocabulary
 * words map to the unknown token. The vocabulary never contains the boundary
 * markers, so the distribution over V in any context sums to one.
 */
class NgramMaskedModel {
public:
    static constexpr std::string_view bos = "<s>";
    static constexpr std::string_view eos = "</s>";
    static constexpr std::string_view unk = "<unk>";

    using Trigram = std::tuple<std::string, std::string, std::string>;
    using Context = std::pair<std::string, std::string>;

    NgramMaskedModel() = default;

    static NgramMaskedModel train(const std::vector<std::string>& texts, double alpha = 1.0) {
        if (texts.empty()) throw InvalidArgument("cannot train an n-gram model on an empty corpus");
        if (!(alpha > 0) || !std::isfinite(alpha)) throw InvalidArgument("smoothing constant must be positive and finite");

        NgramMaskedModel m;
        m.alpha_ = alpha;
        m.vocabulary_.insert(std::string(unk));
        for (const auto& text : texts) {
            auto seq = tokenize(text);
            std::vector<std::string> padded;
            padded.reserve(seq.size() + 2);
            padded.emplace_back(bos);
            for (auto& t : seq.tokens) {
                m.vocabulary_.insert(t);
                padded.push_back(std::move(t));
            }
            padded.emplace_back(eos);
            for (std::size_t i = 1; i + 1 < padded.size(); ++i) {
                ++m.trigram_counts_[Trigram{padded[i - 1], padded[i], padded[i + 1]}];
                ++m.context_totals_[Context{padded[i - 1], padded[i + 1]}];
            }
        }
        return m;
    }

    /// Natural-log probability of `tokens[position]` with that position masked.
    double masked_log_prob(const TokenSequence& tokens, std::size_t position) const {
        if (position >= tokens.size()) throw InvalidArgument("mask position out of range");
        const std::string left = position == 0 ? std::string(bos) : in_vocab(tokens.tokens[position - 1]);
        const std::string right = position + 1 == tokens.size() ? std::string(eos) : in_vocab(tokens.tokens[position + 1]);
        return log_prob(left, in_vocab(tokens.tokens[position]), right);
    }

    /// Log-probability of `middle` in context (left, right); tokens are used as given.
    double log_prob(const std::string& left, const std::string& middle, const std::string& right) const {
        const double num = static_cast<double>(trigram_count(left, middle, right)) + alpha_;
        const double den = static_cast<double>(context_total(left, right)) + alpha_ * static_cast<double>(vocabulary_.size());
        return std::log(num / den);
    }

    std::size_t trigram_count(const std::string& left, const std::string& middle, const std::string& right) const {
        auto it = trigram_counts_.find(Trigram{left, middle, right});
        return it == trigram_counts_.end() ? 0 : it->second;
    }

    std::size_t context_total(const std::string& left, const std::string& right) const {
        auto it = context_totals_.find(Context{left, right});
        return it == context_totals_.end() ? 0 : it->second;
    }

    std::string in_vocab(const std::string& token) const {
        return vocabulary_.count(token) ? token : std::string(unk);
    }

    const std::map<Trigram, std::size_t>& trigram_counts() const noexcept { return trigram_counts_; }
    const std::map<Context, std::size_t>& context_totals() const noexcept { return context_totals_; }
    const std::set<std::string>& vocabulary() const noexcept { return vocabulary_; }
    double alpha() const noexcept { return alpha_; }

    bool operator==(const NgramMaskedModel&) const = default;

private:
    std::map<Trigram, std::size_t> trigram_counts_;
    std::map<Context, std::size_t> context_totals_;
    std::set<std::string> vocabulary_;
    double alpha_ = 1.0;
};

} // namespace biaslens
