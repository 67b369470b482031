#include "vcsfl/field.hpp"

#include <gmp.h>

#include <cstring>

#include "vcsfl/rng.hpp"

namespace vcsfl {

using u64 = std::uint64_t;
using u128 = unsigned __int128;
using Limbs = std::array<u64, 4>;

namespace {

bool geq(const Limbs& a, const Limbs& b) {
    for (int i = 3; i >= 0; --i) {
        if (a[i] != b[i]) return a[i] > b[i];
    }
    return true;
}

// a -= b, ignoring the final borrow (callers guarantee the wrap is intended).
void sub_in_place(Limbs& a, const Limbs& b) {
    u64 borrow = 0;
    for (int i = 0; i < 4; ++i) {
        u128 d = (u128)a[i] - b[i] - borrow;
        a[i] = (u64)d;
        borrow = (u64)((d >> 64) & 1);
    }
}

void mpz_to_limbs(const mpz_t x, Limbs& out) {
    out = {0, 0, 0, 0};
    std::size_t count = 0;
    mpz_export(out.data(), &count, -1, sizeof(u64), 0, 0, x);
}

void limbs_to_mpz(const Limbs& in, mpz_t out) {
    mpz_import(out, 4, -1, sizeof(u64), 0, 0, in.data());
}

}  // namespace

const char* Field::default_modulus_decimal() {
    return "21888242871839275222246405745257275088548364400416034343698204186575808495617";
}

std::shared_ptr<const Field> Field::create_default() {
    static const FieldPtr instance = create(default_modulus_decimal());
    return instance;
}

std::shared_ptr<const Field> Field::create(const std::string& decimal_modulus) {
    mpz_t p;
    mpz_init(p);
    if (mpz_set_str(p, decimal_modulus.c_str(), 10) != 0) {
        mpz_clear(p);
        throw ConfigError("field modulus is not a valid decimal integer: " + decimal_modulus);
    }
    const std::size_t bits = mpz_sizeinbase(p, 2);
    if (bits <= 250 || bits > 255) {
        mpz_clear(p);
        throw ConfigError("field modulus must have 251..255 bits, got " + std::to_string(bits));
    }
    if (mpz_odd_p(p) == 0 || mpz_probab_prime_p(p, 30) == 0) {
        mpz_clear(p);
        throw ConfigError("field modulus must be an odd prime");
    }

    auto field = std::shared_ptr<Field>(new Field());
    field->modulus_decimal_ = decimal_modulus;
    field->modulus_bits_ = static_cast<unsigned>(bits);
    mpz_to_limbs(p, field->p_);

    // n0_inv = -p^{-1} mod 2^64 via Newton iteration on the low limb.
    u64 inv = field->p_[0];
    for (int i = 0; i < 6; ++i) inv *= 2 - field->p_[0] * inv;
    field->n0_inv_ = ~inv + 1;

    mpz_t tmp;
    mpz_init(tmp);
    mpz_set_ui(tmp, 1);
    mpz_mul_2exp(tmp, tmp, 256);
    mpz_mod(tmp, tmp, p);
    mpz_to_limbs(tmp, field->r1_.v);
    mpz_set_ui(tmp, 1);
    mpz_mul_2exp(tmp, tmp, 512);
    mpz_mod(tmp, tmp, p);
    mpz_to_limbs(tmp, field->r2_.v);
    mpz_sub_ui(tmp, p, 1);
    mpz_fdiv_q_2exp(tmp, tmp, 1);
    mpz_to_limbs(tmp, field->half_p_);
    mpz_clear(tmp);
    mpz_clear(p);
    return field;
}

Fe Field::add(const Fe& a, const Fe& b) const {
    Fe r;
    u64 carry = 0;
    for (int i = 0; i < 4; ++i) {
        u128 s = (u128)a.v[i] + b.v[i] + carry;
        r.v[i] = (u64)s;
        carry = (u64)(s >> 64);
    }
    if (carry || geq(r.v, p_)) sub_in_place(r.v, p_);
    return r;
}

Fe Field::sub(const Fe& a, const Fe& b) const {
    Fe r;
    u64 borrow = 0;
    for (int i = 0; i < 4; ++i) {
        u128 d = (u128)a.v[i] - b.v[i] - borrow;
        r.v[i] = (u64)d;
        borrow = (u64)((d >> 64) & 1);
    }
    if (borrow) {
        u64 carry = 0;
        for (int i = 0; i < 4; ++i) {
            u128 s = (u128)r.v[i] + p_[i] + carry;
            r.v[i] = (u64)s;
            carry = (u64)(s >> 64);
        }
    }
    return r;
}

Fe Field::neg(const Fe& a) const {
    if (a.is_zero()) return a;
    Fe r;
    r.v = p_;
    sub_in_place(r.v, a.v);
    return r;
}

Fe Field::mul(const Fe& a, const Fe& b) const {
    // CIOS Montgomery multiplication; valid for p < 2^255.
    u64 t[6] = {0, 0, 0, 0, 0, 0};
    for (int i = 0; i < 4; ++i) {
        u64 carry = 0;
        for (int j = 0; j < 4; ++j) {
            u128 cur = (u128)a.v[i] * b.v[j] + t[j] + carry;
            t[j] = (u64)cur;
            carry = (u64)(cur >> 64);
        }
        u128 cur = (u128)t[4] + carry;
        t[4] = (u64)cur;
        t[5] = (u64)(cur >> 64);

        const u64 m = t[0] * n0_inv_;
        u128 cur2 = (u128)m * p_[0] + t[0];
        carry = (u64)(cur2 >> 64);
        for (int j = 1; j < 4; ++j) {
            cur2 = (u128)m * p_[j] + t[j] + carry;
            t[j - 1] = (u64)cur2;
            carry = (u64)(cur2 >> 64);
        }
        cur2 = (u128)t[4] + carry;
        t[3] = (u64)cur2;
        t[4] = t[5] + (u64)(cur2 >> 64);
        t[5] = 0;
    }
    Fe r{{t[0], t[1], t[2], t[3]}};
    if (t[4] || geq(r.v, p_)) sub_in_place(r.v, p_);
    return r;
}

Fe Field::pow5(const Fe& a) const {
    const Fe a2 = mul(a, a);
    const Fe a4 = mul(a2, a2);
    return mul(a4, a);
}

Fe Field::inv(const Fe& a) const {
    if (a.is_zero()) throw Error("field inverse of zero");
    // a^(p-2), square-and-multiply over the canonical exponent limbs.
    Limbs e = p_;
    u64 borrow = 2;
    for (int i = 0; i < 4 && borrow; ++i) {
        u128 d = (u128)e[i] - borrow;
        e[i] = (u64)d;
        borrow = (u64)((d >> 64) & 1) ? 1 : 0;
    }
    Fe result = one();
    bool started = false;
    for (int limb = 3; limb >= 0; --limb) {
        for (int bit = 63; bit >= 0; --bit) {
            if (started) result = mul(result, result);
            if ((e[limb] >> bit) & 1) {
                if (!started) {
                    result = a;
                    started = true;
                } else {
                    result = mul(result, a);
                }
            }
        }
    }
    return result;
}

Fe Field::from_u64(std::uint64_t x) const {
    Fe raw{{x, 0, 0, 0}};
    return mul(raw, r2_);
}

Fe Field::from_i64(std::int64_t x) const {
    if (x >= 0) return from_u64(static_cast<u64>(x));
    return neg(from_u64(static_cast<u64>(-(x + 1)) + 1));
}

Fe Field::from_be_bytes_mod(std::span<const std::uint8_t> bytes) const {
    mpz_t x, p;
    mpz_init(x);
    mpz_init(p);
    limbs_to_mpz(p_, p);
    mpz_import(x, bytes.size(), 1, 1, 1, 0, bytes.data());
    mpz_mod(x, x, p);
    Fe raw;
    mpz_to_limbs(x, raw.v);
    mpz_clear(x);
    mpz_clear(p);
    return mul(raw, r2_);
}

Limbs Field::canonical_limbs(const Fe& a) const {
    const Fe unit{{1, 0, 0, 0}};
    return mul(a, unit).v;
}

std::array<std::uint8_t, 32> Field::to_bytes(const Fe& a) const {
    const Limbs c = canonical_limbs(a);
    std::array<std::uint8_t, 32> out{};
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 8; ++j) {
            out[i * 8 + j] = static_cast<std::uint8_t>(c[i] >> (8 * j));
        }
    }
    return out;
}

Fe Field::from_bytes(std::span<const std::uint8_t> bytes) const {
    if (bytes.size() != 32) throw MalformedEncoding("field element must be 32 bytes");
    Fe raw;
    for (int i = 0; i < 4; ++i) {
        u64 limb = 0;
        for (int j = 7; j >= 0; --j) limb = (limb << 8) | bytes[i * 8 + j];
        raw.v[i] = limb;
    }
    if (geq(raw.v, p_)) throw MalformedEncoding("field element encoding >= modulus");
    return mul(raw, r2_);
}

__int128 Field::to_signed(const Fe& a) const {
    Limbs c = canonical_limbs(a);
    bool negative = false;
    if (!geq(half_p_, c)) {  // c > (p-1)/2, decode as c - p
        Limbs mag = p_;
        sub_in_place(mag, c);
        c = mag;
        negative = true;
    }
    if (c[2] != 0 || c[3] != 0 || (c[1] >> 63) != 0) {
        throw MalformedEncoding("signed decode overflows 127 bits");
    }
    __int128 mag = ((__int128)c[1] << 64) | c[0];
    return negative ? -mag : mag;
}

std::string Field::to_decimal(const Fe& a) const {
    const Limbs c = canonical_limbs(a);
    mpz_t x;
    mpz_init(x);
    limbs_to_mpz(c, x);
    char* s = mpz_get_str(nullptr, 10, x);
    std::string out(s);
    void (*freefunc)(void*, std::size_t);
    mp_get_memory_functions(nullptr, nullptr, &freefunc);
    freefunc(s, std::strlen(s) + 1);
    mpz_clear(x);
    return out;
}

std::vector<Fe> batch_inverse(const Field& field, std::span<const Fe> xs) {
    std::vector<Fe> out(xs.size());
    if (xs.empty()) return out;
    // prefix[i] = x_0 * ... * x_{i-1}; one inversion of the full product,
    // then peel the factors off from the back.
    std::vector<Fe> prefix(xs.size());
    Fe acc = field.one();
    for (std::size_t i = 0; i < xs.size(); ++i) {
        prefix[i] = acc;
        acc = field.mul(acc, xs[i]);
    }
    Fe inv = field.inv(acc);
    for (std::size_t i = xs.size(); i-- > 0;) {
        out[i] = field.mul(inv, prefix[i]);
        inv = field.mul(inv, xs[i]);
    }
    return out;
}

Fe Field::random(Rng& rng) const {
    const unsigned top_bits = modulus_bits_ - 192;
    const u64 mask = top_bits >= 64 ? ~0ULL : ((1ULL << top_bits) - 1);
    while (true) {
        Fe raw;
        for (auto& limb : raw.v) limb = rng.next_u64();
        raw.v[3] &= mask;
        if (!geq(raw.v, p_)) return mul(raw, r2_);
    }
}

}  // namespace vcsfl
