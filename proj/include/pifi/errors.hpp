#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pifi {

// Shape or width disagreement between operands.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Caller broke an operation precondition (non-scalar loss, all rows ignored, ...).
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// Incompatible or out-of-range configuration.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Malformed PIFA archive. `field()` names the offending manifest field or header part.
class FormatError : public std::runtime_error {
public:
    FormatError(std::string field, const std::string& what)
        : std::runtime_error("archive format error [" + field + "]: " + what), field_(std::move(field)) {}
    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

// Donor-layer extraction failed. `layer_count()` is the number of layers the archive holds.
class ExtractionError : public std::runtime_error {
public:
    ExtractionError(const std::string& what, std::size_t layer_count)
        : std::runtime_error(what), layer_count_(layer_count) {}
    std::size_t layer_count() const noexcept { return layer_count_; }

private:
    std::size_t layer_count_;
};

// Malformed dataset file. `line()` is 1-based; 0 when not tied to a line.
class IngestionError : public std::runtime_error {
public:
    IngestionError(const std::string& what, std::size_t line)
        : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

// Training diverged (NaN/inf loss).
class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace pifi
