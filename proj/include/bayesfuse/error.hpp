#pragma once

#include <stdexcept>
#include <string>

namespace bayesfuse {

/// Tensor extents or layouts that do not fit the operation.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// NaN/Inf where finite values are required, or a domain violation such as log(0).
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid user configuration (bad scale, impossible harvest plan, unknown keys).
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// File-level failures: missing files, bad magic, truncated payloads.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace bayesfuse
