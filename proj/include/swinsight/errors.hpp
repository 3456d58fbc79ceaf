#pragma once

#include <stdexcept>
#include <string>

namespace swinsight {

// Root of every error the library throws. The CLI maps the subclasses onto
// stable exit codes (see tools/swinsight.cpp).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Dimension / rank mismatches in tensor ops and model inputs.
class ShapeError : public Error {
public:
    using Error::Error;
};

// NaN or Inf produced by an op, optimizer divergence, solver non-convergence.
class NumericError : public Error {
public:
    using Error::Error;
};

// Bad configuration values, unknown keys, invalid hyperparameters.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Manifest, image, split, and other dataset problems.
class DataError : public Error {
public:
    using Error::Error;
};

// A single unreadable sample. Callers record it and keep going.
class QuarantineError : public DataError {
public:
    QuarantineError(std::string path, std::string reason)
        : DataError(path + ": " + reason), path_(std::move(path)), reason_(std::move(reason)) {}

    const std::string& path() const noexcept { return path_; }
    const std::string& reason() const noexcept { return reason_; }

private:
    std::string path_;
    std::string reason_;
};

class CheckpointError : public DataError {
public:
    enum class Kind { Io, BadMagic, VersionMismatch, Truncated, CrcMismatch, Integrity };

    CheckpointError(Kind kind, const std::string& what) : DataError(what), kind_(kind) {}

    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

}  // namespace swinsight
