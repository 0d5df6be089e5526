#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "emma/errors.hpp"

namespace emma {

// FNV-1a 64-bit; used for file trailers and reproducibility fingerprints.
class Fnv1a64 {
public:
    static constexpr std::uint64_t kOffset = 0xcbf29ce484222325ull;
    static constexpr std::uint64_t kPrime = 0x100000001b3ull;

    void update(const void* data, std::size_t len) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < len; ++i) {
            hash_ ^= p[i];
            hash_ *= kPrime;
        }
    }

    void update(const std::string& s) { update(s.data(), s.size()); }

    std::uint64_t value() const { return hash_; }

private:
    std::uint64_t hash_ = kOffset;
};

inline std::uint64_t fnv1a64(const void* data, std::size_t len) {
    Fnv1a64 h;
    h.update(data, len);
    return h.value();
}

inline std::uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

inline std::string hex_digest(std::uint64_t value) {
    static const char* kHex = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = kHex[value & 0xF];
        value >>= 4;
    }
    return out;
}

// Little-endian byte packing; keeps on-disk artifacts identical across hosts.
inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFF));
}

inline void put_u64(std::vector<unsigned char>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFF));
}

inline void put_i32(std::vector<unsigned char>& out, std::int32_t v) {
    put_u32(out, static_cast<std::uint32_t>(v));
}

inline void put_i64(std::vector<unsigned char>& out, std::int64_t v) {
    put_u64(out, static_cast<std::uint64_t>(v));
}

inline void put_f32(std::vector<unsigned char>& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

inline void put_f64(std::vector<unsigned char>& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(out, bits);
}

inline void put_bytes(std::vector<unsigned char>& out, const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    out.insert(out.end(), p, p + len);
}

inline void put_string(std::vector<unsigned char>& out, const std::string& s) {
    put_u32(out, static_cast<std::uint32_t>(s.size()));
    put_bytes(out, s.data(), s.size());
}

// Cursor over a little-endian byte buffer; every failure reports the offset
// where decoding stopped making sense.
class ByteReader {
public:
    explicit ByteReader(const std::vector<unsigned char>& buf) : buf_(buf) {}

    std::size_t offset() const { return pos_; }
    std::size_t remaining() const { return buf_.size() - pos_; }

    std::uint32_t get_u32() {
        need(4, "u32");
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i) v = (v << 8) | buf_[pos_ + static_cast<std::size_t>(i)];
        pos_ += 4;
        return v;
    }

    std::uint64_t get_u64() {
        need(8, "u64");
        std::uint64_t v = 0;
        for (int i = 7; i >= 0; --i) v = (v << 8) | buf_[pos_ + static_cast<std::size_t>(i)];
        pos_ += 8;
        return v;
    }

    std::int32_t get_i32() { return static_cast<std::int32_t>(get_u32()); }
    std::int64_t get_i64() { return static_cast<std::int64_t>(get_u64()); }

    float get_f32() {
        const std::uint32_t bits = get_u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }

    double get_f64() {
        const std::uint64_t bits = get_u64();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }

    unsigned char get_byte() {
        need(1, "byte");
        return buf_[pos_++];
    }

    std::string get_string() {
        const std::size_t at = pos_;
        const std::uint32_t len = get_u32();
        if (len > remaining())
            throw FormatError("string length " + std::to_string(len) +
                              " exceeds remaining bytes at byte offset " + std::to_string(at));
        std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), len);
        pos_ += len;
        return s;
    }

    void expect_magic(const char (&magic)[9]) {
        const std::size_t at = pos_;
        need(8, "magic");
        if (std::memcmp(buf_.data() + pos_, magic, 8) != 0)
            throw FormatError(std::string("bad magic, expected '") + magic +
                              "' at byte offset " + std::to_string(at));
        pos_ += 8;
    }

private:
    void need(std::size_t n, const char* what) const {
        if (remaining() < n)
            throw FormatError(std::string("truncated file: needed ") + what + " at byte offset " +
                              std::to_string(pos_));
    }

    const std::vector<unsigned char>& buf_;
    std::size_t pos_ = 0;
};

}  // namespace emma
