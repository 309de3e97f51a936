#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace text2loc {

/* Little-endian byte sink used by the dataset and checkpoint formats */
class ByteWriter
{
public:
    void put_u8(std::uint8_t v) { buffer_.push_back(static_cast<char>(v)); }
    void put_u32(std::uint32_t v);
    void put_u64(std::uint64_t v);
    void put_f64(double v);
    void put_bytes(std::string_view bytes) { buffer_.append(bytes); }
    /* u32 length prefix followed by the raw bytes */
    void put_string(std::string_view s);

    std::size_t size() const { return buffer_.size(); }
    const std::string& bytes() const { return buffer_; }
    std::string& bytes() { return buffer_; }

private:
    std::string buffer_;
};

/* Bounds-checked little-endian reader; overruns throw DataError */
class ByteReader
{
public:
    explicit ByteReader(std::string_view bytes) : bytes_(bytes) { }

    std::uint8_t get_u8();
    std::uint32_t get_u32();
    std::uint64_t get_u64();
    double get_f64();
    std::string_view get_bytes(std::size_t count);
    std::string get_string();

    std::size_t position() const { return pos_; }
    std::size_t remaining() const { return bytes_.size() - pos_; }
    bool at_end() const { return pos_ == bytes_.size(); }

private:
    void require(std::size_t count) const;

    std::string_view bytes_;
    std::size_t pos_ = 0;
};

/* CRC-32 (zlib polynomial) of a byte range */
std::uint32_t crc32_of(std::string_view bytes);

std::string read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::string_view bytes);

} // namespace text2loc
