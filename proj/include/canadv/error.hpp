#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace canadv {

// Base for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ParseError : public Error {
public:
    ParseError(std::size_t line, const std::string& what)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class CatalogError : public Error { using Error::Error; };
class ConversionError : public Error { using Error::Error; };
class UnknownMessageError : public Error { using Error::Error; };
class EncodeError : public Error { using Error::Error; };
class ResampleError : public Error { using Error::Error; };
class IngestError : public Error { using Error::Error; };
class NumericError : public Error { using Error::Error; };
class IoError : public Error { using Error::Error; };

// Violated preconditions of an operation (wrong label, mismatched cache, bad sizes).
class ContractError : public Error { using Error::Error; };

// Configuration problems. Carries every problem found, not just the first.
class ConfigError : public Error {
public:
    explicit ConfigError(std::vector<std::string> problems)
        : Error(join(problems)), problems_(std::move(problems)) {}
    explicit ConfigError(const std::string& problem)
        : ConfigError(std::vector<std::string>{problem}) {}

    const std::vector<std::string>& problems() const noexcept { return problems_; }

private:
    static std::string join(const std::vector<std::string>& problems) {
        std::string out;
        for (const auto& p : problems) {
            if (!out.empty()) out += "; ";
            out += p;
        }
        return out;
    }

    std::vector<std::string> problems_;
};

}  // namespace canadv
