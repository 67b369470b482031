#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "vcsfl/field.hpp"

namespace vcsfl {

// Signed fixed-point encoding of real vectors into the field: a weight v is
// stored as round(v * 2^frac_bits), negatives as p - |q|. Signed width is
// int_bits + frac_bits, so every encoded magnitude is < 2^(int_bits+frac_bits).
struct FixedPointParams {
    int frac_bits = 16;
    int int_bits = 8;
    std::uint32_t d_max = 4096;
    FieldPtr field;

    int signed_bits() const { return int_bits + frac_bits; }
    std::int64_t magnitude_limit() const { return (std::int64_t{1} << signed_bits()) - 1; }
    double scale() const { return static_cast<double>(std::int64_t{1} << frac_bits); }

    // Throws ConfigError unless dot products of d_max maximal vectors fit
    // comfortably below the modulus: 2*(b+f) + ceil(log2(d_max)) + 2 < bits(p).
    void validate() const;

    static FixedPointParams defaults(FieldPtr field);
};

struct QuantizedVector {
    std::vector<Fe> elems;
    FixedPointParams params;

    std::size_t size() const { return elems.size(); }
};

struct QuantizeResult {
    QuantizedVector vec;
    std::size_t saturated = 0;  // inputs clipped to the representable range
};

// Round-half-away-from-zero quantization; out-of-range inputs saturate to
// +/-(2^(b+f)-1) and are counted, never fatal.
QuantizeResult quantize(std::span<const double> v, const FixedPointParams& params);

// Exact inverse on representable values. Throws MalformedEncoding when an
// element decodes outside the signed range.
std::vector<double> dequantize(const QuantizedVector& q);

// Signed integer value of one encoded element (|q| < 2^(b+f) enforced).
std::int64_t decode_signed(const Fe& e, const FixedPointParams& params);

}  // namespace vcsfl
