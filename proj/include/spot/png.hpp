#pragma once

// Minimal PNG writer: 8-bit RGB, zlib stream with stored (uncompressed)
// deflate blocks. No external dependencies and byte-deterministic output.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace spot {

namespace detail {

inline uint32_t crc32_table_entry(uint32_t n) {
    for (int k = 0; k < 8; ++k) n = (n & 1) ? 0xEDB88320u ^ (n >> 1) : n >> 1;
    return n;
}

inline uint32_t crc32(const uint8_t* data, size_t len, uint32_t crc = 0xFFFFFFFFu) {
    static uint32_t table[256];
    static bool built = false;
    if (!built) {
        for (uint32_t i = 0; i < 256; ++i) table[i] = crc32_table_entry(i);
        built = true;
    }
    for (size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xFF] ^ (crc >> 8);
    return crc;
}

inline uint32_t adler32(const uint8_t* data, size_t len) {
    uint32_t a = 1, b = 0;
    for (size_t i = 0; i < len; ++i) {
        a = (a + data[i]) % 65521;
        b = (b + a) % 65521;
    }
    return (b << 16) | a;
}

inline void push_u32_be(std::vector<uint8_t>& v, uint32_t x) {
    v.push_back(static_cast<uint8_t>(x >> 24));
    v.push_back(static_cast<uint8_t>(x >> 16));
    v.push_back(static_cast<uint8_t>(x >> 8));
    v.push_back(static_cast<uint8_t>(x));
}

inline void push_chunk(std::vector<uint8_t>& out, const char type[4],
                       const std::vector<uint8_t>& data) {
    push_u32_be(out, static_cast<uint32_t>(data.size()));
    std::vector<uint8_t> body(type, type + 4);
    body.insert(body.end(), data.begin(), data.end());
    out.insert(out.end(), body.begin(), body.end());
    push_u32_be(out, crc32(body.data(), body.size()) ^ 0xFFFFFFFFu);
}

}  // namespace detail

/// rgb holds height*width*3 bytes, row-major.
inline std::vector<uint8_t> encode_png_rgb8(int width, int height,
                                            const std::vector<uint8_t>& rgb) {
    if (static_cast<size_t>(width) * height * 3 != rgb.size())
        throw std::invalid_argument("encode_png_rgb8: buffer does not match dimensions");
    using namespace detail;
    std::vector<uint8_t> out = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};

    std::vector<uint8_t> ihdr;
    push_u32_be(ihdr, static_cast<uint32_t>(width));
    push_u32_be(ihdr, static_cast<uint32_t>(height));
    ihdr.push_back(8);   // bit depth
    ihdr.push_back(2);   // truecolor
    ihdr.push_back(0);   // compression
    ihdr.push_back(0);   // filter
    ihdr.push_back(0);   // no interlace
    push_chunk(out, "IHDR", ihdr);

    // raw scanlines with filter byte 0
    std::vector<uint8_t> raw;
    raw.reserve(static_cast<size_t>(height) * (1 + static_cast<size_t>(width) * 3));
    for (int y = 0; y < height; ++y) {
        raw.push_back(0);
        const uint8_t* row = rgb.data() + static_cast<size_t>(y) * width * 3;
        raw.insert(raw.end(), row, row + static_cast<size_t>(width) * 3);
    }

    std::vector<uint8_t> idat = {0x78, 0x01};  // zlib header, no compression preset
    size_t offset = 0;
    while (offset < raw.size() || raw.empty()) {
        const size_t chunk = std::min<size_t>(65535, raw.size() - offset);
        const bool final = offset + chunk == raw.size();
        idat.push_back(final ? 1 : 0);
        idat.push_back(static_cast<uint8_t>(chunk & 0xFF));
        idat.push_back(static_cast<uint8_t>(chunk >> 8));
        idat.push_back(static_cast<uint8_t>(~chunk & 0xFF));
        idat.push_back(static_cast<uint8_t>((~chunk >> 8) & 0xFF));
        idat.insert(idat.end(), raw.begin() + static_cast<long>(offset),
                    raw.begin() + static_cast<long>(offset + chunk));
        offset += chunk;
        if (raw.empty()) break;
    }
    push_u32_be(idat, adler32(raw.data(), raw.size()));
    push_chunk(out, "IDAT", idat);
    push_chunk(out, "IEND", {});
    return out;
}

inline void write_png_rgb8(const std::filesystem::path& path, int width, int height,
                           const std::vector<uint8_t>& rgb) {
    const auto bytes = encode_png_rgb8(width, height, rgb);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_png_rgb8: cannot open " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write_png_rgb8: write failed for " + path.string());
}

}  // namespace spot
