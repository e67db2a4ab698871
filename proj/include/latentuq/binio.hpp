#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "latentuq/errors.hpp"

namespace luq::binio {

/// IEEE CRC32 (reflected, poly 0xEDB88320), table-driven.
class Crc32 {
public:
    void update(const void* data, std::size_t len) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < len; ++i)
            state_ = table()[(state_ ^ p[i]) & 0xFFu] ^ (state_ >> 8);
    }

    [[nodiscard]] std::uint32_t value() const { return state_ ^ 0xFFFFFFFFu; }

private:
    static const std::array<std::uint32_t, 256>& table() {
        static const std::array<std::uint32_t, 256> t = [] {
            std::array<std::uint32_t, 256> out{};
            for (std::uint32_t i = 0; i < 256; ++i) {
                std::uint32_t c = i;
                for (int k = 0; k < 8; ++k)
                    c = (c & 1u) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
                out[i] = c;
            }
            return out;
        }();
        return t;
    }

    std::uint32_t state_ = 0xFFFFFFFFu;
};

template <typename T>
void to_little_endian(T& value) {
    if constexpr (std::endian::native == std::endian::big) {
        auto* bytes = reinterpret_cast<unsigned char*>(&value);
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i)
            std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
    } else {
        (void)value;
    }
}

/// Little-endian binary writer that folds every written byte into a CRC32.
class CrcWriter {
public:
    explicit CrcWriter(std::ostream& out) : out_(out) {}

    void write_bytes(const void* data, std::size_t len) {
        crc_.update(data, len);
        out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(len));
        if (!out_) throw BadFormat("binary write failed");
    }

    template <typename T>
    void write(T value) {
        static_assert(std::is_trivially_copyable_v<T>);
        to_little_endian(value);
        write_bytes(&value, sizeof(T));
    }

    void write_magic(const char (&magic)[5]) { write_bytes(magic, 4); }

    [[nodiscard]] std::uint32_t crc() const { return crc_.value(); }

    /// Appends the running CRC32 as a trailing little-endian u32.
    void write_trailer() {
        std::uint32_t c = crc_.value();
        to_little_endian(c);
        out_.write(reinterpret_cast<const char*>(&c), 4);
        if (!out_) throw BadFormat("binary write failed");
    }

private:
    std::ostream& out_;
    Crc32 crc_;
};

/// Matching reader; read() tracks the CRC so verify_trailer() can compare it
/// against the stored value.
class CrcReader {
public:
    explicit CrcReader(std::istream& in) : in_(in) {}

    void read_bytes(void* data, std::size_t len) {
        in_.read(static_cast<char*>(data), static_cast<std::streamsize>(len));
        if (static_cast<std::size_t>(in_.gcount()) != len)
            throw BadFormat("unexpected end of file");
        crc_.update(data, len);
    }

    template <typename T>
    T read() {
        static_assert(std::is_trivially_copyable_v<T>);
        T value{};
        read_bytes(&value, sizeof(T));
        to_little_endian(value);
        return value;
    }

    /// Reads 4 magic bytes and checks them against `expected`.
    void expect_magic(const char (&expected)[5], const std::string& what) {
        char got[4];
        read_bytes(got, 4);
        if (std::memcmp(got, expected, 4) != 0)
            throw BadFormat("bad magic in " + what);
    }

    [[nodiscard]] std::uint32_t crc() const { return crc_.value(); }

    void verify_trailer(const std::string& what) {
        const std::uint32_t computed = crc_.value();
        std::uint32_t stored = 0;
        in_.read(reinterpret_cast<char*>(&stored), 4);
        if (in_.gcount() != 4) throw BadFormat("unexpected end of file in " + what);
        to_little_endian(stored);
        if (stored != computed)
            throw BadFormat("checksum mismatch in " + what);
    }

private:
    std::istream& in_;
    Crc32 crc_;
};

/// Byte sink that only accumulates a CRC32; used for fingerprinting without
/// materializing the file.
class CrcSink {
public:
    void write_bytes(const void* data, std::size_t len) { crc_.update(data, len); }

    template <typename T>
    void write(T value) {
        static_assert(std::is_trivially_copyable_v<T>);
        to_little_endian(value);
        write_bytes(&value, sizeof(T));
    }

    void write_magic(const char (&magic)[5]) { write_bytes(magic, 4); }

    [[nodiscard]] std::uint32_t crc() const { return crc_.value(); }

private:
    Crc32 crc_;
};

} // namespace luq::binio
