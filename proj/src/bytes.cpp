#include "vcsfl/bytes.hpp"

#include <openssl/evp.h>

namespace vcsfl {

DigestSink::DigestSink() {
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (ctx == nullptr || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
        EVP_MD_CTX_free(ctx);
        throw Error("sha-256 init failed");
    }
    ctx_ = ctx;
}

DigestSink::~DigestSink() {
    EVP_MD_CTX_free(static_cast<EVP_MD_CTX*>(ctx_));
}

void DigestSink::write(const std::uint8_t* data, std::size_t n) {
    if (EVP_DigestUpdate(static_cast<EVP_MD_CTX*>(ctx_), data, n) != 1) {
        throw Error("sha-256 update failed");
    }
    count += n;
}

std::array<std::uint8_t, 32> DigestSink::finish() {
    std::array<std::uint8_t, 32> out{};
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(static_cast<EVP_MD_CTX*>(ctx_), out.data(), &len) != 1 || len != 32) {
        throw Error("sha-256 final failed");
    }
    return out;
}

std::string to_hex(std::span<const std::uint8_t> data) {
    static const char* digits = "0123456789abcdef";
    std::string s;
    s.reserve(data.size() * 2);
    for (std::uint8_t b : data) {
        s.push_back(digits[b >> 4]);
        s.push_back(digits[b & 0xf]);
    }
    return s;
}

}  // namespace vcsfl
