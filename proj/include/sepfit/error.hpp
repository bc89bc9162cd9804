#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sepfit {

/// Base for every error the library raises. `module()` names the component
/// that failed so CLI reports can attribute the failure.
class Error : public std::runtime_error {
public:
    Error(std::string module, const std::string& what)
        : std::runtime_error(module + ": " + what), module_(std::move(module)) {}

    const std::string& module() const noexcept { return module_; }

private:
    std::string module_;
};

/// Formula syntax or structure error; `offset()` is the byte offset into the
/// formula text where the problem was detected.
class FormulaError : public Error {
public:
    FormulaError(const std::string& what, std::size_t offset)
        : Error("formula", what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}

    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

/// Spec/schema mismatch, CSV problems, degenerate columns.
class DataError : public Error {
public:
    explicit DataError(const std::string& what) : Error("data", what) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error("config", what) {}
};

class NumericalError : public Error {
public:
    NumericalError(std::string module, const std::string& what) : Error(std::move(module), what) {}
};

}  // namespace sepfit
