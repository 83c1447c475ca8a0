#pragma once

#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "swarm/util/error.hpp"

namespace swarm {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

inline Bytes to_bytes(std::string_view s) { return Bytes(s.begin(), s.end()); }
inline std::string to_string(ByteView b) { return std::string(b.begin(), b.end()); }

enum class Endian { little, big };

/// Append-only serializer. Integers are written in the writer's byte order.
class ByteWriter {
public:
    explicit ByteWriter(Endian order = Endian::little) : order_(order) {}

    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u16(std::uint16_t v) { put_int(v, 2); }
    void u32(std::uint32_t v) { put_int(v, 4); }
    void u64(std::uint64_t v) { put_int(v, 8); }
    void f32(float v) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        u32(bits);
    }
    void f64(double v) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        u64(bits);
    }
    void raw(ByteView b) { buf_.insert(buf_.end(), b.begin(), b.end()); }
    /// u16 length prefix followed by bytes.
    void str16(std::string_view s);
    /// u32 length prefix followed by bytes.
    void blob32(ByteView b);

    std::size_t size() const noexcept { return buf_.size(); }
    const Bytes& bytes() const& noexcept { return buf_; }
    Bytes take() && noexcept { return std::move(buf_); }

private:
    void put_int(std::uint64_t v, int width);

    Endian order_;
    Bytes buf_;
};

/// Bounds-checked deserializer; every read past the end raises ParseError with the offset.
class ByteReader {
public:
    explicit ByteReader(ByteView data, Endian order = Endian::little) : data_(data), order_(order) {}

    std::uint8_t u8();
    std::uint16_t u16() { return static_cast<std::uint16_t>(get_int(2)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(get_int(4)); }
    std::uint64_t u64() { return get_int(8); }
    float f32() {
        const std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    double f64() {
        const std::uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    ByteView raw(std::size_t n);
    std::string str16();
    Bytes blob32();

    std::size_t offset() const noexcept { return pos_; }
    std::size_t remaining() const noexcept { return data_.size() - pos_; }
    bool done() const noexcept { return pos_ == data_.size(); }
    void expect_done(const char* what) const;

private:
    std::uint64_t get_int(int width);
    void need(std::size_t n, const char* what) const;

    ByteView data_;
    Endian order_;
    std::size_t pos_ = 0;
};

std::string hex(ByteView b);

}  // namespace swarm
