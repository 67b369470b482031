#include "vcsfl/fixed_point.hpp"

#include <bit>
#include <cmath>

namespace vcsfl {

void FixedPointParams::validate() const {
    if (!field) throw ConfigError("fixed-point params missing field");
    if (frac_bits < 1 || int_bits < 1) throw ConfigError("fixed-point bit widths must be positive");
    if (d_max < 1) throw ConfigError("d_max must be >= 1");
    const int log2_dmax = std::bit_width(std::uint64_t{d_max} - 1);
    const int needed = 2 * signed_bits() + log2_dmax + 2;
    if (needed >= static_cast<int>(field->modulus_bits())) {
        throw ConfigError("fixed-point widths too large for modulus: need " +
                          std::to_string(needed) + " bits, have " +
                          std::to_string(field->modulus_bits()));
    }
    if (signed_bits() >= 62) throw ConfigError("signed width must fit a 64-bit integer");
}

FixedPointParams FixedPointParams::defaults(FieldPtr field) {
    FixedPointParams p;
    p.field = std::move(field);
    p.validate();
    return p;
}

QuantizeResult quantize(std::span<const double> v, const FixedPointParams& params) {
    params.validate();
    const Field& f = *params.field;
    const double scale = params.scale();
    const std::int64_t limit = params.magnitude_limit();

    QuantizeResult out;
    out.vec.params = params;
    out.vec.elems.reserve(v.size());
    for (double x : v) {
        std::int64_t q = 0;
        if (!std::isfinite(x)) {
            q = 0;  // non-finite weights are treated as clipped zeros
            ++out.saturated;
        } else {
            const double scaled = x * scale;
            if (scaled >= static_cast<double>(limit)) {
                q = limit;
                ++out.saturated;
            } else if (scaled <= -static_cast<double>(limit)) {
                q = -limit;
                ++out.saturated;
            } else {
                q = std::llround(scaled);  // rounds halfway cases away from zero
            }
        }
        out.vec.elems.push_back(f.from_i64(q));
    }
    return out;
}

std::int64_t decode_signed(const Fe& e, const FixedPointParams& params) {
    const __int128 s = params.field->to_signed(e);
    const std::int64_t limit = params.magnitude_limit();
    if (s > limit || s < -limit) {
        throw MalformedEncoding("quantized element outside signed range");
    }
    return static_cast<std::int64_t>(s);
}

std::vector<double> dequantize(const QuantizedVector& q) {
    const double scale = q.params.scale();
    std::vector<double> out;
    out.reserve(q.elems.size());
    for (const Fe& e : q.elems) {
        out.push_back(static_cast<double>(decode_signed(e, q.params)) / scale);
    }
    return out;
}

}  // namespace vcsfl
