#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ctxnav {

// Root of every domain error thrown by the library. The CLI maps these to
// exit code 1; anything else escaping is a bug.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public Error {
public:
    IoError(std::string path, const std::string& what)
        : Error(what + ": " + path), path_(std::move(path)) {}
    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

class FormatError : public Error {
public:
    using Error::Error;
};

class UnknownOperationError : public FormatError {
public:
    explicit UnknownOperationError(std::string token)
        : FormatError("unknown operation '" + token + "'"), token_(std::move(token)) {}
    const std::string& token() const noexcept { return token_; }

private:
    std::string token_;
};

class PlanningImpossible : public Error {
public:
    using Error::Error;
};

class ResourceExhausted : public Error {
public:
    using Error::Error;
};

class EmbedError : public Error {
public:
    EmbedError(const std::string& what, std::vector<std::string> failed_ids)
        : Error(what), failed_ids_(std::move(failed_ids)) {}
    const std::vector<std::string>& failed_ids() const noexcept { return failed_ids_; }

private:
    std::vector<std::string> failed_ids_;
};

class SchemaError : public Error {
public:
    using Error::Error;
};

class LockError : public Error {
public:
    using Error::Error;
};

class IntegrityError : public Error {
public:
    IntegrityError(std::string file, std::uint64_t offset, const std::string& what)
        : Error(what + " (" + file + " @ offset " + std::to_string(offset) + ")"),
          file_(std::move(file)), offset_(offset) {}
    const std::string& file() const noexcept { return file_; }
    std::uint64_t offset() const noexcept { return offset_; }

private:
    std::string file_;
    std::uint64_t offset_;
};

class ReportUnavailable : public Error {
public:
    using Error::Error;
};

class TransportError : public Error {
public:
    TransportError(const std::string& what, std::vector<int> status_chain)
        : Error(what), status_chain_(std::move(status_chain)) {}
    // HTTP status of each attempt, 0 for a connection-level failure.
    const std::vector<int>& status_chain() const noexcept { return status_chain_; }

private:
    std::vector<int> status_chain_;
};

class OracleUnavailable : public Error {
public:
    using Error::Error;
};

class IclError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

}  // namespace ctxnav
