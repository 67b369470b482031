#include "vcsfl/sponge.hpp"

#include <openssl/evp.h>

#include <fstream>

#include "vcsfl/errors.hpp"

namespace vcsfl {

std::array<std::uint8_t, 32> sha256(std::span<const std::uint8_t> data) {
    std::array<std::uint8_t, 32> out{};
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), out.data(), &len, EVP_sha256(), nullptr) != 1 ||
        len != 32) {
        throw Error("sha-256 digest failed");
    }
    return out;
}

std::string sha256_hex(std::span<const std::uint8_t> data) {
    const auto d = sha256(data);
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(64);
    for (auto b : d) {
        out.push_back(hex[b >> 4]);
        out.push_back(hex[b & 0xf]);
    }
    return out;
}

SpongeParams SpongeParams::derive(const FieldPtr& field, std::uint32_t rounds,
                                  const std::string& hash_name) {
    if (hash_name != "sha-256") {
        throw ConfigError("unsupported constants hash: " + hash_name);
    }
    if (rounds == 0) throw ConfigError("sponge needs at least one round");
    SpongeParams p;
    p.rounds = rounds;
    p.hash_name = hash_name;
    p.constants.reserve(rounds);
    for (std::uint32_t i = 0; i < rounds; ++i) {
        const std::string msg = "veri-cs-fl/mimc/v1/" + std::to_string(i);
        const auto digest = sha256(
            std::span(reinterpret_cast<const std::uint8_t*>(msg.data()), msg.size()));
        p.constants.push_back(field->from_be_bytes_mod(digest));
    }
    return p;
}

Fe sponge_permute(const Field& field, const SpongeParams& params, const Fe& state) {
    Fe s = state;
    for (const Fe& c : params.constants) {
        s = field.pow5(field.add(s, c));
    }
    return s;
}

Fe sponge_hash(const Field& field, const SpongeParams& params, std::span<const Fe> elems) {
    if (elems.empty()) throw EmptyHashInput("sponge input must be non-empty");
    Fe s = field.zero();
    for (const Fe& e : elems) {
        s = sponge_permute(field, params, field.add(s, e));
    }
    return s;
}

void write_constants_file(const std::string& path, const Field& field,
                          const SpongeParams& params) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write constants file: " + path);
    out << "# mimc sponge round constants, decimal, one per line\n";
    out << "# derivation: " << params.hash_name
        << "(\"veri-cs-fl/mimc/v1/\" + i) as big-endian integer mod p\n";
    out << "# modulus: " << field.modulus_decimal() << "\n";
    out << "# rounds: " << params.rounds << "\n";
    for (const Fe& c : params.constants) {
        out << field.to_decimal(c) << "\n";
    }
    if (!out.good()) throw IoError("failed writing constants file: " + path);
}

}  // namespace vcsfl
