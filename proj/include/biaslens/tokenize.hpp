#pragma once

#include "biaslens/error.hpp"
#include "biaslens/utf8.hpp"

#include <cstddef>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace biaslens {

/// Tokens with their byte spans [start, end) into the source text.
struct TokenSequence {
    std::vector<std::string> tokens;
    std::vector<std::pair<std::size_t, std::size_t>> offsets;

    std::size_t size() const noexcept { return tokens.size(); }
    bool operator==(const TokenSequence&) const = default;
};

/**
 * Splits on Unicode whitespace, then gives each punctuation character its own
 * token; tokens are lowercased. Invalid UTF-8 bytes are kept as word bytes.
 */
inline TokenSequence tokenize(std::string_view text) {
    if (utf8::trim(text).empty()) throw InvalidArgument("cannot tokenize empty text");

    TokenSequence seq;
    std::size_t word_start = std::string_view::npos;
    auto flush = [&](std::size_t end) {
        if (word_start != std::string_view::npos) {
            seq.tokens.push_back(utf8::lower(text.substr(word_start, end - word_start)));
            seq.offsets.emplace_back(word_start, end);
            word_start = std::string_view::npos;
        }
    };

    std::size_t pos = 0;
    while (pos < text.size()) {
        auto d = utf8::decode(text, pos);
        const std::size_t len = d ? d->length : 1;
        if (d && utf8::is_space(d->code_point)) {
            flush(pos);
        } else if (d && utf8::is_punct(d->code_point)) {
            flush(pos);
            seq.tokens.push_back(utf8::lower(text.substr(pos, len)));
            seq.offsets.emplace_back(pos, pos + len);
        } else if (word_start == std::string_view::npos) {
            word_start = pos;
        }
        pos += len;
    }
    flush(text.size());
    return seq;
}

/// True when every code point of `token` is punctuation.
inline bool is_punctuation_token(std::string_view token) {
    if (token.empty()) return false;
    std::size_t pos = 0;
    while (pos < token.size()) {
        auto d = utf8::decode(token, pos);
        if (!d || !utf8::is_punct(d->code_point)) return false;
        pos += d->length;
    }
    return true;
}

} // namespace biaslens
