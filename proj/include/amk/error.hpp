// Copyright (C) 2026 The amk authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace amk {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A caller violated an operation's precondition (shape mismatch, empty cluster, ...).
class ContractError : public Error {
public:
    using Error::Error;
};

/// User-facing input failed validation (age out of range, bad flag value).
class ValidationError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class NotFoundError : public Error {
public:
    using Error::Error;
};

/// Operation refused because of the current state (e.g. branching from a failed node).
class StateError : public Error {
public:
    using Error::Error;
};

/// Backend configured but unusable, or a backend reported bad output.
class BackendError : public Error {
public:
    using Error::Error;
};

/// ODE integration failed; carries the time and attention site being evaluated.
class IntegrationError : public Error {
public:
    IntegrationError(const std::string& what, double t, int layer)
        : Error(what), t_(t), layer_(layer) {}

    double t() const { return t_; }
    /// -1 when the failure is not tied to an attention layer.
    int layer() const { return layer_; }

private:
    double t_;
    int layer_;
};

namespace detail {

template <typename... Args>
std::string concat(const Args&... args) {
    std::ostringstream os;
    (os << ... << args);
    return os.str();
}

}  // namespace detail

}  // namespace amk

#define AMK_REQUIRE(cond, ...)                                                   \
    do {                                                                         \
        if (!(cond)) throw ::amk::ContractError(::amk::detail::concat(__VA_ARGS__)); \
    } while (0)
