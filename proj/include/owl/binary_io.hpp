#pragma once

// Little-endian byte packing shared by the feature, EVM, and perceptron
// container formats. Reads are bounds-checked; running off the end of the
// buffer raises DataError.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "owl/common.hpp"

namespace owl::io {

class ByteWriter {
public:
    void u32(std::uint32_t v) { put(v, 4); }
    void u64(std::uint64_t v) { put(v, 8); }
    void f32(float v) { put(std::bit_cast<std::uint32_t>(v), 4); }
    void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
    void raw(std::string_view bytes) { buf_.insert(buf_.end(), bytes.begin(), bytes.end()); }
    void str(std::string_view s) {
        u32(static_cast<std::uint32_t>(s.size()));
        raw(s);
    }

    const std::vector<char>& bytes() const { return buf_; }

private:
    void put(std::uint64_t v, int width) {
        for (int i = 0; i < width; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }

    std::vector<char> buf_;
};

class ByteReader {
public:
    ByteReader(std::span<const char> bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

    std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
    std::uint64_t u64() { return get(8); }
    float f32() { return std::bit_cast<float>(static_cast<std::uint32_t>(get(4))); }
    double f64() { return std::bit_cast<double>(get(8)); }
    std::string raw(std::size_t n) {
        need(n);
        std::string out(bytes_.data() + pos_, n);
        pos_ += n;
        return out;
    }
    std::string str() { return raw(u32()); }

    std::size_t remaining() const { return bytes_.size() - pos_; }
    void expect_end() const {
        if (remaining() != 0) throw DataError(what_ + ": trailing bytes after payload");
    }

private:
    void need(std::size_t n) const {
        if (n > remaining()) throw DataError(what_ + ": truncated or corrupt file");
    }
    std::uint64_t get(int width) {
        need(static_cast<std::size_t>(width));
        std::uint64_t v = 0;
        for (int i = 0; i < width; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += static_cast<std::size_t>(width);
        return v;
    }

    std::span<const char> bytes_;
    std::string what_;
    std::size_t pos_ = 0;
};

std::vector<char> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const char> bytes);
void write_text(const std::filesystem::path& path, std::string_view text);

}  // namespace owl::io
