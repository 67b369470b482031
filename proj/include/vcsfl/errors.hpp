#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace vcsfl {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Field / fixed-point
struct MalformedEncoding : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };

// Circuit
struct CircuitTooLarge : Error { using Error::Error; };
struct DimensionMismatch : Error { using Error::Error; };
struct RangeViolation : Error { using Error::Error; };
struct EmptyHashInput : Error { using Error::Error; };

// Attestation
struct BackendUnavailable : Error { using Error::Error; };
struct KeyCircuitMismatch : Error { using Error::Error; };

// Learning / datasets
struct FormatError : Error { using Error::Error; };

// Protocol: every report failed a selection check this round.
struct EmptySelection : Error { using Error::Error; };

struct DivergenceError : Error {
    DivergenceError(const std::string& msg, std::size_t epoch, std::size_t batch)
        : Error(msg), epoch(epoch), batch(batch) {}
    std::size_t epoch;
    std::size_t batch;
};

// Harness / IO
struct IoError : Error { using Error::Error; };

}  // namespace vcsfl
