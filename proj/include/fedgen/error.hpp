#pragma once

#include <stdexcept>
#include <string>

namespace fedgen {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed file header or magic.
class FormatError : public Error {
public:
    using Error::Error;
};

/// Payload shorter than its header declares.
class CorruptionError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

/// An index or reference does not resolve against the data it points into.
class IntegrityError : public Error {
public:
    using Error::Error;
};

/// Training diverged (NaN/inf loss).
class NumericError : public Error {
public:
    using Error::Error;
};

} // namespace fedgen
