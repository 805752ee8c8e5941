#pragma once

#include <stdexcept>
#include <string>

namespace newsrl {

// Bad shapes, domain violations and non-finite values inside the math core.
class ShapeError : public std::runtime_error {
public:
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Unreadable/invalid input files (CSV, JSONL, config).
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed LLM response; carries the offending line.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& msg, std::string line)
        : std::runtime_error(msg + " [line: " + line + "]"), offending_line(std::move(line)) {}
    std::string offending_line;
};

} // namespace newsrl
