#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "vcsfl/field.hpp"

namespace vcsfl {

// MiMC-style sponge: state starts at 0 and each element e is absorbed as
// s <- permute(s + e), where permute runs `rounds` iterations of
// s <- (s + c_i)^5. The same function is expressible in-circuit with three
// constraints per round.
struct SpongeParams {
    std::uint32_t rounds = 110;
    std::string hash_name = "sha-256";  // digest used to derive constants
    std::vector<Fe> constants;

    // c_i = SHA-256("veri-cs-fl/mimc/v1/" + decimal i) as a big-endian
    // integer, reduced mod p.
    static SpongeParams derive(const FieldPtr& field, std::uint32_t rounds = 110,
                               const std::string& hash_name = "sha-256");
};

Fe sponge_permute(const Field& field, const SpongeParams& params, const Fe& state);

// Throws EmptyHashInput on an empty element list.
Fe sponge_hash(const Field& field, const SpongeParams& params, std::span<const Fe> elems);

// SHA-256 convenience wrappers (round constants, circuit digests, config digests).
std::array<std::uint8_t, 32> sha256(std::span<const std::uint8_t> data);
std::string sha256_hex(std::span<const std::uint8_t> data);

// Writes one constant per line in decimal, with a short self-describing
// header, so independently built parties can diff their constants.
void write_constants_file(const std::string& path, const Field& field, const SpongeParams& params);

}  // namespace vcsfl
