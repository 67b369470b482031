#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "vcsfl/errors.hpp"

namespace vcsfl {

// One 256-bit prime-field element, four little-endian 64-bit limbs.
// Elements are kept in Montgomery form (x * 2^256 mod p) internally; the
// mapping is bijective so equality is plain limb comparison. All arithmetic
// goes through the owning Field, which carries the modulus.
struct Fe {
    std::array<std::uint64_t, 4> v{0, 0, 0, 0};

    bool operator==(const Fe&) const = default;
    bool is_zero() const { return (v[0] | v[1] | v[2] | v[3]) == 0; }
};

struct FeHash {
    std::size_t operator()(const Fe& x) const {
        std::uint64_t h = 0x9e3779b97f4a7c15ULL;
        for (auto limb : x.v) {
            h ^= limb + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
        }
        return static_cast<std::size_t>(h);
    }
};

// Prime field with a runtime modulus. The modulus must be an odd prime with
// 251..255 bits; primality is checked once at construction. Immutable after
// construction and safe to share across threads.
class Field {
public:
    // `decimal_modulus` in base 10. Throws ConfigError if the modulus is
    // not prime, not odd, or out of the supported bit range.
    static std::shared_ptr<const Field> create(const std::string& decimal_modulus);

    // The BN254/alt_bn128 scalar-field order used by common SNARK toolchains.
    static const char* default_modulus_decimal();
    static std::shared_ptr<const Field> create_default();

    const std::string& modulus_decimal() const { return modulus_decimal_; }
    unsigned modulus_bits() const { return modulus_bits_; }

    Fe zero() const { return Fe{}; }
    Fe one() const { return r1_; }

    Fe add(const Fe& a, const Fe& b) const;
    Fe sub(const Fe& a, const Fe& b) const;
    Fe neg(const Fe& a) const;
    Fe mul(const Fe& a, const Fe& b) const;
    Fe square(const Fe& a) const { return mul(a, a); }
    Fe pow5(const Fe& a) const;
    // Multiplicative inverse via Fermat exponentiation; throws on zero.
    Fe inv(const Fe& a) const;

    Fe from_u64(std::uint64_t x) const;
    Fe from_i64(std::int64_t x) const;
    // Reduces an arbitrary big-endian byte string modulo p.
    Fe from_be_bytes_mod(std::span<const std::uint8_t> bytes) const;

    // Canonical (non-Montgomery) 32-byte little-endian encoding.
    std::array<std::uint8_t, 32> to_bytes(const Fe& a) const;
    // Rejects encodings >= p with MalformedEncoding.
    Fe from_bytes(std::span<const std::uint8_t> bytes) const;

    // Signed decode: values <= (p-1)/2 map to themselves, larger ones to
    // value - p. Throws MalformedEncoding if |result| does not fit 127 bits.
    __int128 to_signed(const Fe& a) const;

    std::string to_decimal(const Fe& a) const;

    // Uniform random element (for tests and harness sweeps).
    Fe random(class Rng& rng) const;

private:
    Field() = default;

    // Canonical little-endian limbs of the residue (out of Montgomery form).
    std::array<std::uint64_t, 4> canonical_limbs(const Fe& a) const;

    std::array<std::uint64_t, 4> p_{};   // modulus limbs, little-endian
    std::uint64_t n0_inv_ = 0;           // -p^{-1} mod 2^64
    Fe r1_;                              // 2^256 mod p   (Montgomery one)
    Fe r2_;                              // 2^512 mod p   (to-Montgomery factor)
    std::array<std::uint64_t, 4> half_p_{};  // (p-1)/2, canonical limbs
    unsigned modulus_bits_ = 0;
    std::string modulus_decimal_;
};

using FieldPtr = std::shared_ptr<const Field>;

// Inverts every element with a single field inversion plus 3(n-1)
// multiplications (prefix-product trick). All inputs must be nonzero.
std::vector<Fe> batch_inverse(const Field& field, std::span<const Fe> xs);

}  // namespace vcsfl
