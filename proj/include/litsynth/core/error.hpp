#pragma once

#include <stdexcept>
#include <string>

namespace litsynth {

// Root of every error the library throws. Catch this at process boundaries.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidInputError : public Error {
public:
    using Error::Error;
};

// A PaperId (or other cross-reference) points at something that does not exist.
class IntegrityError : public Error {
public:
    using Error::Error;
};

class PersistenceError : public Error {
public:
    PersistenceError(std::string path, const std::string& what)
        : Error("persistence failure at '" + path + "': " + what), path_(std::move(path)) {}
    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

class LoadError : public Error {
public:
    LoadError(std::string file, const std::string& what)
        : Error("cannot load '" + file + "': " + what), file_(std::move(file)) {}
    const std::string& file() const noexcept { return file_; }

private:
    std::string file_;
};

// Non-retryable status from a backend.
class BackendError : public Error {
public:
    BackendError(int status, const std::string& what)
        : Error("backend error (status " + std::to_string(status) + "): " + what), status_(status) {}
    int status() const noexcept { return status_; }

private:
    int status_;
};

// Retry budget used up on retryable statuses.
class ExhaustionError : public Error {
public:
    ExhaustionError(int last_status, int attempts)
        : Error("backend attempts exhausted after " + std::to_string(attempts) +
                " calls (last status " + std::to_string(last_status) + ")"),
          last_status_(last_status), attempts_(attempts) {}
    int last_status() const noexcept { return last_status_; }
    int attempts() const noexcept { return attempts_; }

private:
    int last_status_;
    int attempts_;
};

class BudgetError : public Error {
public:
    using Error::Error;
};

class PreconditionError : public Error {
public:
    using Error::Error;
};

// Model output could not be turned into a valid artifact within the retry budget.
class OutputError : public Error {
public:
    using Error::Error;
};

class RetrievalError : public Error {
public:
    using Error::Error;
};

class KeynoteError : public Error {
public:
    using Error::Error;
};

class DraftingError : public Error {
public:
    DraftingError(std::string node, const std::string& what)
        : Error("drafting failed for '" + node + "': " + what), node_(std::move(node)) {}
    const std::string& node() const noexcept { return node_; }

private:
    std::string node_;
};

class AssemblyError : public Error {
public:
    using Error::Error;
};

class EvaluationError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
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

}  // namespace litsynth
