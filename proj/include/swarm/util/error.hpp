#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <variant>

namespace swarm {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionError : public Error { public: using Error::Error; };
class NumericError : public Error { public: using Error::Error; };
class IndexError : public Error { public: using Error::Error; };
class ProtocolError : public Error { public: using Error::Error; };
class ConfigError : public Error { public: using Error::Error; };
class CheckpointCorrupt : public Error { public: using Error::Error; };
class UnknownExpert : public Error { public: using Error::Error; };
class LookupFailed : public Error { public: using Error::Error; };
class StoreFailed : public Error { public: using Error::Error; };

/// Parse failure that remembers where in the input it happened.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t offset)
        : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

/// Error codes carried through asynchronous callbacks, where throwing is not an option.
enum class Errc {
    timeout,
    unreachable,
    protocol,
    lookup_failed,
    store_failed,
    unknown_expert,
    dimension,
    numeric,
    corrupt,
    dropped,
};

const char* to_string(Errc code) noexcept;

struct Failure {
    Errc code;
    std::string message;
};

/// Value-or-failure for callback APIs.
template <typename T>
class Result {
public:
    Result(T value) : state_(std::move(value)) {}  // NOLINT(google-explicit-constructor)
    Result(Failure failure) : state_(std::move(failure)) {}  // NOLINT(google-explicit-constructor)

    bool ok() const noexcept { return state_.index() == 0; }
    explicit operator bool() const noexcept { return ok(); }

    T& value() & { return std::get<0>(state_); }
    const T& value() const& { return std::get<0>(state_); }
    T&& value() && { return std::get<0>(std::move(state_)); }
    const Failure& failure() const { return std::get<1>(state_); }
    Errc code() const { return failure().code; }

private:
    std::variant<T, Failure> state_;
};

inline Failure fail(Errc code, std::string message = {}) { return Failure{code, std::move(message)}; }

}  // namespace swarm
