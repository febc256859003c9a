#pragma once

#include <stdexcept>
#include <string>

namespace ctc {

// Invalid caller input: shapes, ranks, config values.
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class DimensionMismatch : public InvalidArgument {
public:
    using InvalidArgument::InvalidArgument;
};

// A norm or product was asked of a tensor that still carries the NaN sentinel.
class MissingValueError : public InvalidArgument {
public:
    using InvalidArgument::InvalidArgument;
};

// Malformed or unreadable data files.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Gram system of a right part stayed singular after jitter.
class DegenerateRankError : public NumericalError {
public:
    DegenerateRankError(std::size_t mode, const std::string& what)
        : NumericalError(what), mode_(mode) {}
    std::size_t mode() const noexcept { return mode_; }

private:
    std::size_t mode_;
};

}  // namespace ctc
