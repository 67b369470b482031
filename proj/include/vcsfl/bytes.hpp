#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "vcsfl/errors.hpp"

namespace vcsfl {

// Output abstraction for binary artifacts, so the same serializer can fill
// a buffer, hash a multi-hundred-MB circuit without materializing it, or
// just measure its length.
class ByteSink {
public:
    virtual ~ByteSink() = default;
    virtual void write(const std::uint8_t* data, std::size_t n) = 0;

    void u8(std::uint8_t x) { write(&x, 1); }
    void u32le(std::uint32_t x) {
        std::uint8_t b[4];
        for (int i = 0; i < 4; ++i) b[i] = static_cast<std::uint8_t>(x >> (8 * i));
        write(b, 4);
    }
    void u64le(std::uint64_t x) {
        std::uint8_t b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<std::uint8_t>(x >> (8 * i));
        write(b, 8);
    }
    void bytes(std::span<const std::uint8_t> data) { write(data.data(), data.size()); }
    void magic(const char (&m)[9]) { write(reinterpret_cast<const std::uint8_t*>(m), 8); }
};

class VectorSink : public ByteSink {
public:
    void write(const std::uint8_t* data, std::size_t n) override {
        buf.insert(buf.end(), data, data + n);
    }
    std::vector<std::uint8_t> buf;
};

class CountingSink : public ByteSink {
public:
    void write(const std::uint8_t*, std::size_t n) override { count += n; }
    std::uint64_t count = 0;
};

// Streams into SHA-256; also counts bytes.
class DigestSink : public ByteSink {
public:
    DigestSink();
    ~DigestSink() override;
    DigestSink(const DigestSink&) = delete;
    DigestSink& operator=(const DigestSink&) = delete;
    void write(const std::uint8_t* data, std::size_t n) override;
    std::array<std::uint8_t, 32> finish();
    std::uint64_t count = 0;

private:
    void* ctx_;
};

// Bounds-checked reader over a byte span; throws MalformedEncoding on
// truncation so parsers can fail cleanly.
class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

    std::uint8_t u8() { return take(1)[0]; }
    std::uint32_t u32le() {
        auto b = take(4);
        std::uint32_t x = 0;
        for (int i = 3; i >= 0; --i) x = (x << 8) | b[i];
        return x;
    }
    std::uint64_t u64le() {
        auto b = take(8);
        std::uint64_t x = 0;
        for (int i = 7; i >= 0; --i) x = (x << 8) | b[i];
        return x;
    }
    std::span<const std::uint8_t> bytes(std::size_t n) { return take(n); }
    void expect_magic(const char (&m)[9]) {
        auto b = take(8);
        if (std::memcmp(b.data(), m, 8) != 0) {
            throw MalformedEncoding(std::string("bad magic, expected ") + m);
        }
    }
    std::size_t remaining() const { return data_.size() - pos_; }
    bool done() const { return pos_ == data_.size(); }

private:
    std::span<const std::uint8_t> take(std::size_t n) {
        if (pos_ + n > data_.size()) throw MalformedEncoding("truncated input");
        auto s = data_.subspan(pos_, n);
        pos_ += n;
        return s;
    }
    std::span<const std::uint8_t> data_;
    std::size_t pos_ = 0;
};

inline std::span<const std::uint8_t> as_bytes_span(const std::string& s) {
    return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

std::string to_hex(std::span<const std::uint8_t> data);

}  // namespace vcsfl
