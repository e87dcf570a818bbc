#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace biaslens {

/// Base class for every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed dataset input. `line` is 1-based (0 when not tied to a line).
class ParseError : public Error {
public:
    ParseError(std::string message, std::size_t line = 0, std::string field = {})
        : Error(line ? message + " (line " + std::to_string(line) + ")" : message),
          line_(line), field_(std::move(field)) {}

    std::size_t line() const noexcept { return line_; }
    const std::string& field() const noexcept { return field_; }

private:
    std::size_t line_;
    std::string field_;
};

/// Violated precondition on a call argument.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// A masked-token provider failed while scoring a sentence.
class ProviderError : public Error {
public:
    ProviderError(std::string message, std::size_t position = npos)
        : Error(std::move(message)), position_(position) {}

    static constexpr std::size_t npos = static_cast<std::size_t>(-1);
    std::size_t position() const noexcept { return position_; }

private:
    std::size_t position_;
};

/// The remote scorer could not be reached after all retries.
class TransportError : public ProviderError {
public:
    TransportError(std::string message, std::string endpoint)
        : ProviderError(std::move(message)), endpoint_(std::move(endpoint)) {}

    const std::string& endpoint() const noexcept { return endpoint_; }

private:
    std::string endpoint_;
};

/// The remote scorer answered with a body that breaks the wire contract.
class ProtocolError : public ProviderError {
public:
    ProtocolError(std::string message, std::string sentence)
        : ProviderError(std::move(message)), sentence_(std::move(sentence)) {}

    const std::string& sentence() const noexcept { return sentence_; }

private:
    std::string sentence_;
};

/// Scoring a corpus failed; carries which sentences finished before the abort.
class ScoringError : public Error {
public:
    ScoringError(std::string message, std::vector<std::string> completed, std::vector<std::string> failed)
        : Error(std::move(message)), completed_(std::move(completed)), failed_(std::move(failed)) {}

    const std::vector<std::string>& completed() const noexcept { return completed_; }
    const std::vector<std::string>& failed() const noexcept { return failed_; }

private:
    std::vector<std::string> completed_;
    std::vector<std::string> failed_;
};

/// A metric needed scores that are not present yet.
class MissingScoresError : public Error {
public:
    MissingScoresError(std::string message, std::vector<std::string> pending)
        : Error(std::move(message)), pending_(std::move(pending)) {}

    const std::vector<std::string>& pending() const noexcept { return pending_; }

private:
    std::vector<std::string> pending_;
};

/// A project file could not be loaded.
class LoadError : public Error {
public:
    enum class Kind { corrupt, version, checksum, reference };

    LoadError(Kind kind, std::string message, std::vector<std::string> diagnostics = {})
        : Error(std::move(message)), kind_(kind), diagnostics_(std::move(diagnostics)) {}

    Kind kind() const noexcept { return kind_; }
    const std::vector<std::string>& diagnostics() const noexcept { return diagnostics_; }

private:
    Kind kind_;
    std::vector<std::string> diagnostics_;
};

} // namespace biaslens
