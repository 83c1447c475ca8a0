#include "swarm/util/bytes.hpp"

namespace swarm {

const char* to_string(Errc code) noexcept {
    switch (code) {
        case Errc::timeout: return "timeout";
        case Errc::unreachable: return "unreachable";
        case Errc::protocol: return "protocol";
        case Errc::lookup_failed: return "lookup-failed";
        case Errc::store_failed: return "store-failed";
        case Errc::unknown_expert: return "unknown-expert";
        case Errc::dimension: return "dimension";
        case Errc::numeric: return "numeric";
        case Errc::corrupt: return "checkpoint-corrupt";
        case Errc::dropped: return "batch-dropped";
    }
    return "unknown";
}

void ByteWriter::put_int(std::uint64_t v, int width) {
    if (order_ == Endian::little) {
        for (int i = 0; i < width; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    } else {
        for (int i = width - 1; i >= 0; --i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
}

void ByteWriter::str16(std::string_view s) {
    if (s.size() > 0xFFFF) throw ProtocolError("string too long for u16 length prefix");
    u16(static_cast<std::uint16_t>(s.size()));
    buf_.insert(buf_.end(), s.begin(), s.end());
}

void ByteWriter::blob32(ByteView b) {
    u32(static_cast<std::uint32_t>(b.size()));
    raw(b);
}

void ByteReader::need(std::size_t n, const char* what) const {
    if (remaining() < n) {
        throw ParseError(std::string("truncated input reading ") + what, pos_);
    }
}

std::uint8_t ByteReader::u8() {
    need(1, "u8");
    return data_[pos_++];
}

std::uint64_t ByteReader::get_int(int width) {
    need(static_cast<std::size_t>(width), "integer");
    std::uint64_t v = 0;
    if (order_ == Endian::little) {
        for (int i = width - 1; i >= 0; --i) v = (v << 8) | data_[pos_ + i];
    } else {
        for (int i = 0; i < width; ++i) v = (v << 8) | data_[pos_ + i];
    }
    pos_ += static_cast<std::size_t>(width);
    return v;
}

ByteView ByteReader::raw(std::size_t n) {
    need(n, "bytes");
    auto out = data_.subspan(pos_, n);
    pos_ += n;
    return out;
}

std::string ByteReader::str16() {
    const auto n = u16();
    return to_string(raw(n));
}

Bytes ByteReader::blob32() {
    const auto n = u32();
    auto v = raw(n);
    return Bytes(v.begin(), v.end());
}

void ByteReader::expect_done(const char* what) const {
    if (!done()) throw ParseError(std::string("trailing bytes after ") + what, pos_);
}

std::string hex(ByteView b) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    out.reserve(b.size() * 2);
    for (auto c : b) {
        out.push_back(digits[c >> 4]);
        out.push_back(digits[c & 0xF]);
    }
    return out;
}

}  // namespace swarm
