#include "text2loc/common/binary_io.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <iterator>

#include <zlib.h>

#include "text2loc/common/errors.hpp"

namespace text2loc {

void ByteWriter::put_u32(std::uint32_t v)
{
    for (int i = 0; i < 4; ++i)
        put_u8(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::put_u64(std::uint64_t v)
{
    for (int i = 0; i < 8; ++i)
        put_u8(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::put_f64(double v)
{
    put_u64(std::bit_cast<std::uint64_t>(v));
}

void ByteWriter::put_string(std::string_view s)
{
    put_u32(static_cast<std::uint32_t>(s.size()));
    put_bytes(s);
}

void ByteReader::require(std::size_t count) const
{
    if (count > remaining())
        throw DataError("unexpected end of data at byte " + std::to_string(pos_) +
                        " (need " + std::to_string(count) + ", have " +
                        std::to_string(remaining()) + ")");
}

std::uint8_t ByteReader::get_u8()
{
    require(1);
    return static_cast<std::uint8_t>(bytes_[pos_++]);
}

std::uint32_t ByteReader::get_u32()
{
    require(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
        v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes_[pos_++])) << (8 * i);
    return v;
}

std::uint64_t ByteReader::get_u64()
{
    require(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
        v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(bytes_[pos_++])) << (8 * i);
    return v;
}

double ByteReader::get_f64()
{
    return std::bit_cast<double>(get_u64());
}

std::string_view ByteReader::get_bytes(std::size_t count)
{
    require(count);
    const auto view = bytes_.substr(pos_, count);
    pos_ += count;
    return view;
}

std::string ByteReader::get_string()
{
    const auto length = get_u32();
    return std::string(get_bytes(length));
}

std::uint32_t crc32_of(std::string_view bytes)
{
    uLong crc = crc32(0L, Z_NULL, 0);
    /* zlib takes uInt lengths; feed in chunks */
    std::size_t offset = 0;
    while (offset < bytes.size()) {
        const auto chunk = std::min<std::size_t>(bytes.size() - offset, 1u << 30);
        crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + offset),
                    static_cast<uInt>(chunk));
        offset += chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

std::string read_file_bytes(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw DataError("cannot open " + path.string());
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::filesystem::path& path, std::string_view bytes)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw DataError("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out)
        throw DataError("short write to " + path.string());
}

} // namespace text2loc
