#pragma once

#include <stdexcept>
#include <string>

namespace scatgate {

enum class ErrorKind {
    InvalidArgument,  // bad input, violated precondition
    NotFound,         // unknown id / missing file
    Io,               // read/write failure
    Conflict,         // state-machine or invariant violation
    Numerical,        // divergence, degenerate data
    Insufficient,     // not enough data to satisfy a request
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
    throw Error(kind, what);
}

inline void require(bool cond, const std::string& what,
                    ErrorKind kind = ErrorKind::InvalidArgument) {
    if (!cond) throw Error(kind, what);
}

const char* to_string(ErrorKind kind) noexcept;

}  // namespace scatgate
