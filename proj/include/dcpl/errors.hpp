#pragma once

#include <stdexcept>
#include <string>

namespace dcpl {

// Error categories map one-to-one onto CLI exit codes (see tools/dcpl.cpp).
enum class ErrorKind { Config, Data, Numerical };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

struct DimensionError : Error {
    explicit DimensionError(const std::string& w) : Error(ErrorKind::Numerical, "dimension error: " + w) {}
};
struct PreconditionError : Error {
    explicit PreconditionError(const std::string& w) : Error(ErrorKind::Numerical, "precondition: " + w) {}
};
struct DegenerateInputError : Error {
    explicit DegenerateInputError(const std::string& w) : Error(ErrorKind::Numerical, "degenerate input: " + w) {}
};
struct IndexError : Error {
    explicit IndexError(const std::string& w) : Error(ErrorKind::Numerical, "index error: " + w) {}
};
struct TrainingError : Error {
    explicit TrainingError(const std::string& w) : Error(ErrorKind::Numerical, "training error: " + w) {}
};
struct ConfigError : Error {
    explicit ConfigError(const std::string& w) : Error(ErrorKind::Config, "config error: " + w) {}
};
struct FormatError : Error {
    explicit FormatError(const std::string& w) : Error(ErrorKind::Data, "format error: " + w) {}
};
struct DataError : Error {
    explicit DataError(const std::string& w) : Error(ErrorKind::Data, "data error: " + w) {}
};

}  // namespace dcpl
