#pragma once

#include <stdexcept>
#include <string>

namespace mndbn {

/// Violated precondition on shapes, ranges or lengths.
struct contract_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Invalid user-facing configuration (group sizes, config fields, layer chains).
struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Malformed input file. Carries the byte offset or line number where parsing stopped.
struct parse_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Operation called on an object in the wrong state (e.g. predicting without a head).
struct state_error : std::logic_error {
    using std::logic_error::logic_error;
};

/// Exact enumeration requested on a model that is too large to enumerate.
struct refusal_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// NaN or Inf detected in parameters or statistics.
struct numeric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

inline void require(bool ok, const std::string& what) {
    if (!ok) throw contract_error(what);
}

}  // namespace detail
}  // namespace mndbn
