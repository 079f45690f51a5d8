// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace mcdm {

// Invalid or missing configuration (bad config file, missing manifest, ...).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};

// A documented call precondition was violated.
struct PreconditionError : std::invalid_argument {
    explicit PreconditionError(const std::string& msg) : std::invalid_argument("precondition violated: " + msg) {}
};

// File or stream level failure (bad magic, truncation, unwritable path).
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error("io error: " + msg) {}
};

// A keyed lookup (embedding, flow file, store id) found nothing.
struct LookupError : std::runtime_error {
    explicit LookupError(const std::string& msg) : std::runtime_error("lookup error: " + msg) {}
};

// Numerical failure surfaced to the caller (NaN loss term, indefinite covariance).
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error("numeric error: " + msg) {}
};

// Pipeline orchestration failure (missing prerequisite stage output).
struct PipelineError : std::runtime_error {
    explicit PipelineError(const std::string& msg) : std::runtime_error("pipeline error: " + msg) {}
};

} // namespace mcdm
