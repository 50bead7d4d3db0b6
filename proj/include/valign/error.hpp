#pragma once

#include <stdexcept>
#include <string>

namespace valign {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad input data: undecodable bytes, empty documents, malformed records.
class InputError : public Error {
public:
    using Error::Error;
};

/// Configuration rejected by validation (unknown keys, out-of-range values).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A stage was asked to run before its upstream artifact exists.
class MissingArtifactError : public Error {
public:
    using Error::Error;
};

} // namespace valign
