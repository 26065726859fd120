#pragma once

#include <stdexcept>
#include <string>

namespace lpq {

// Bad input, shape mismatch, malformed file. CLI maps this to exit code 1.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// NaN/Inf encountered during evaluation. CLI maps this to exit code 2.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

[[noreturn]] inline void fail(const std::string& msg) { throw ValidationError(msg); }

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw ValidationError(msg);
}

}  // namespace lpq
