#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace efm {

/// Violated precondition or API contract (caller bug).
struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Tensor/layer dimension mismatch.
struct ShapeError : ContractError {
    explicit ShapeError(const std::string& msg) : ContractError(msg) {}
};

/// Malformed binary or text file. Carries the byte offset of the problem.
struct FormatError : std::runtime_error {
    FormatError(const std::string& msg, std::size_t byte_offset)
        : std::runtime_error(msg + " (at byte " + std::to_string(byte_offset) + ")"),
          offset(byte_offset) {}
    std::size_t offset;
};

/// Invalid user-facing configuration (CLI flags, config files, family names).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Training aborted (non-finite loss, divergence). Message carries diagnostics.
struct TrainingError : std::runtime_error {
    explicit TrainingError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace efm
