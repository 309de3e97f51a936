#pragma once

#include <stdexcept>
#include <string>

namespace text2loc {

/* Operand shapes do not conform to an operation's contract */
class ShapeError : public std::invalid_argument
{
public:
    using std::invalid_argument::invalid_argument;
};

/* Argument value outside the accepted domain (NaN input, lr <= 0, ...) */
class ValueError : public std::invalid_argument
{
public:
    using std::invalid_argument::invalid_argument;
};

/* Malformed, truncated or incompatible dataset file */
class DataError : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

class ChecksumError : public DataError
{
public:
    using DataError::DataError;
};

/* Missing or incompatible checkpoint */
class CheckpointError : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

/* Invalid run configuration */
class ConfigError : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

} // namespace text2loc
