#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "gopstream/error.hpp"

namespace gopstream {

static_assert(std::endian::native == std::endian::little, "byte codecs assume a little-endian host");

/// Append-only little-endian writer.
class ByteWriter {
public:
    void magic(std::string_view m) { buf_.insert(buf_.end(), m.begin(), m.end()); }

    template <class T>
        requires std::is_arithmetic_v<T>
    void put(T v) {
        const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
        buf_.insert(buf_.end(), p, p + sizeof(T));
    }

    void raw(std::span<const std::uint8_t> bytes) { buf_.insert(buf_.end(), bytes.begin(), bytes.end()); }

    std::size_t size() const { return buf_.size(); }
    std::vector<std::uint8_t> take() { return std::move(buf_); }

private:
    std::vector<std::uint8_t> buf_;
};

/// Bounds-checked little-endian reader. Every failure reports the offset of
/// the read that could not be satisfied.
class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    void expect_magic(std::string_view m) {
        need(m.size(), "magic");
        if (std::memcmp(bytes_.data() + pos_, m.data(), m.size()) != 0) {
            throw Error(Errc::BadMagic, "expected magic \"" + std::string(m) + "\"", pos_);
        }
        pos_ += m.size();
    }

    template <class T>
        requires std::is_arithmetic_v<T>
    T get(const char* what = "value") {
        need(sizeof(T), what);
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }

    std::span<const std::uint8_t> raw(std::size_t n, const char* what = "payload") {
        need(n, what);
        auto s = bytes_.subspan(pos_, n);
        pos_ += n;
        return s;
    }

    std::size_t pos() const { return pos_; }
    std::size_t remaining() const { return bytes_.size() - pos_; }
    bool at_end() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n, const char* what) const {
        if (bytes_.size() - pos_ < n) {
            throw Error(Errc::TruncatedStream,
                        std::string("stream ended while reading ") + what, pos_);
        }
    }

    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(Errc::Io, "cannot open " + path);
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error(Errc::Io, "cannot write " + path);
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw Error(Errc::Io, "short write to " + path);
    }
}

}  // namespace gopstream
