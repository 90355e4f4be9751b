#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace alod {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Input could not be parsed at all (malformed XML/JSON).
class ParseError : public Error {
public:
    ParseError(const std::string& what, long line)
        : Error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
    long line() const noexcept { return line_; }

private:
    long line_;
};

/// Parsed input is missing a required element or has the wrong shape.
class SchemaError : public Error {
public:
    explicit SchemaError(std::string element, const std::string& detail = {})
        : Error("missing or invalid element '" + element + "'" + (detail.empty() ? "" : ": " + detail)),
          element_(std::move(element)) {}
    const std::string& element() const noexcept { return element_; }

private:
    std::string element_;
};

class InvariantError : public Error {
public:
    using Error::Error;
};

class DuplicateRecordError : public Error {
public:
    using Error::Error;
};

class UnknownClassError : public Error {
public:
    explicit UnknownClassError(const std::string& name) : Error("unknown class '" + name + "'"), name_(name) {}
    const std::string& name() const noexcept { return name_; }

private:
    std::string name_;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class MissingScoreError : public Error {
public:
    using Error::Error;
};

/// No unlabeled batch remains.
class ExhaustedError : public Error {
public:
    ExhaustedError() : Error("no unlabeled batches remain") {}
};

/// The annotation oracle gave up; the experiment state was left untouched.
class StepAbortedError : public Error {
public:
    using Error::Error;
};

/// Thrown by an oracle that could not deliver labels in time.
class OracleTimeout : public Error {
public:
    using Error::Error;
};

class EmptyPoolError : public Error {
public:
    EmptyPoolError() : Error("both old and new pools are empty") {}
};

class MissingRecordError : public Error {
public:
    using Error::Error;
};

class NoClassError : public Error {
public:
    NoClassError() : Error("no class with ground truth to evaluate") {}
};

class InsufficientDataError : public Error {
public:
    using Error::Error;
};

class SnapshotError : public Error {
public:
    using Error::Error;
};

}  // namespace alod
