#pragma once

// Minimal image IO: PPM P6 (binary, maxval 255) and an 8-bit PNG subset
// (RGB or grayscale, non-interlaced; zlib handles the deflate stream).
// Decoded images are (3,H,W) float tensors in [0,1], value = byte/255;
// grayscale is promoted to three channels.

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <zlib.h>

#include "texvit/tensor.hpp"

namespace texvit {

// Interleaved 8-bit RGB, the codec-facing representation.
struct ImageU8 {
    int64_t width = 0;
    int64_t height = 0;
    std::vector<uint8_t> rgb; // width*height*3, row-major

    uint8_t& at(int64_t y, int64_t x, int c) { return rgb[static_cast<size_t>((y * width + x) * 3 + c)]; }
    uint8_t at(int64_t y, int64_t x, int c) const {
        return rgb[static_cast<size_t>((y * width + x) * 3 + c)];
    }
};

inline Tensor<float> to_tensor(const ImageU8& img) {
    Tensor<float> t({3, img.height, img.width});
    for (int c = 0; c < 3; ++c)
        for (int64_t y = 0; y < img.height; ++y)
            for (int64_t x = 0; x < img.width; ++x)
                t.at({c, y, x}) = static_cast<float>(img.at(y, x, c)) / 255.0f;
    return t;
}

inline ImageU8 to_image_u8(const Tensor<float>& t) {
    if (t.rank() != 3 || t.dim(0) != 3)
        throw ShapeError("to_image_u8: expected (3,H,W), got " + shape_str(t.shape()));
    ImageU8 img;
    img.height = t.dim(1);
    img.width = t.dim(2);
    img.rgb.resize(static_cast<size_t>(img.width * img.height * 3));
    for (int c = 0; c < 3; ++c)
        for (int64_t y = 0; y < img.height; ++y)
            for (int64_t x = 0; x < img.width; ++x) {
                float v = t.at({c, y, x});
                v = std::min(1.0f, std::max(0.0f, v));
                img.at(y, x, c) = static_cast<uint8_t>(std::lround(v * 255.0f));
            }
    return img;
}

namespace io_detail {

inline std::vector<uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open file: " + path);
    return std::vector<uint8_t>((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
}

inline void write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write file: " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("short write: " + path);
}

inline void put_be32(std::vector<uint8_t>& v, uint32_t x) {
    v.push_back(static_cast<uint8_t>(x >> 24));
    v.push_back(static_cast<uint8_t>(x >> 16));
    v.push_back(static_cast<uint8_t>(x >> 8));
    v.push_back(static_cast<uint8_t>(x));
}

inline uint32_t get_be32(const uint8_t* p) {
    return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
           (static_cast<uint32_t>(p[2]) << 8) | static_cast<uint32_t>(p[3]);
}

inline void png_chunk(std::vector<uint8_t>& out, const char type[4],
                      const std::vector<uint8_t>& data) {
    put_be32(out, static_cast<uint32_t>(data.size()));
    const size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    uint32_t crc = static_cast<uint32_t>(
        ::crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start)));
    put_be32(out, crc);
}

} // namespace io_detail

// ---- PPM -------------------------------------------------------------------

inline std::vector<uint8_t> encode_ppm(const ImageU8& img) {
    std::string header = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) +
                         "\n255\n";
    std::vector<uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), img.rgb.begin(), img.rgb.end());
    return out;
}

inline ImageU8 decode_ppm(const std::vector<uint8_t>& bytes, const std::string& origin) {
    size_t pos = 0;
    auto token = [&]() -> std::string {
        while (pos < bytes.size()) {
            if (std::isspace(bytes[pos])) {
                ++pos;
            } else if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else {
                break;
            }
        }
        std::string t;
        while (pos < bytes.size() && !std::isspace(bytes[pos])) t.push_back(static_cast<char>(bytes[pos++]));
        return t;
    };
    if (token() != "P6") throw FormatError(origin + ": not a binary PPM (expected magic P6)");
    ImageU8 img;
    try {
        img.width = std::stoll(token());
        img.height = std::stoll(token());
        const long maxval = std::stol(token());
        if (maxval != 255) throw FormatError(origin + ": only 8-bit PPM (maxval 255) supported");
    } catch (const std::invalid_argument&) {
        throw FormatError(origin + ": malformed PPM header");
    }
    if (img.width < 1 || img.height < 1) throw FormatError(origin + ": bad PPM dimensions");
    ++pos; // single whitespace after maxval
    const size_t need = static_cast<size_t>(img.width * img.height * 3);
    if (bytes.size() - pos < need) throw FormatError(origin + ": truncated PPM pixel data");
    img.rgb.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                   bytes.begin() + static_cast<std::ptrdiff_t>(pos + need));
    return img;
}

// ---- PNG -------------------------------------------------------------------

inline std::vector<uint8_t> encode_png(const ImageU8& img) {
    static const uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
    std::vector<uint8_t> out(sig, sig + 8);
    std::vector<uint8_t> ihdr;
    io_detail::put_be32(ihdr, static_cast<uint32_t>(img.width));
    io_detail::put_be32(ihdr, static_cast<uint32_t>(img.height));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(2);  // color type: truecolor
    ihdr.push_back(0);  // compression
    ihdr.push_back(0);  // filter method
    ihdr.push_back(0);  // no interlace
    io_detail::png_chunk(out, "IHDR", ihdr);

    // scanlines with filter byte 0
    std::vector<uint8_t> raw;
    raw.reserve(static_cast<size_t>(img.height * (1 + img.width * 3)));
    for (int64_t y = 0; y < img.height; ++y) {
        raw.push_back(0);
        const uint8_t* row = img.rgb.data() + y * img.width * 3;
        raw.insert(raw.end(), row, row + img.width * 3);
    }
    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<uint8_t> idat(bound);
    if (compress2(idat.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw FormatError("png: deflate failed");
    idat.resize(bound);
    io_detail::png_chunk(out, "IDAT", idat);
    io_detail::png_chunk(out, "IEND", {});
    return out;
}

inline ImageU8 decode_png(const std::vector<uint8_t>& bytes, const std::string& origin) {
    static const uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
    if (bytes.size() < 8 || std::memcmp(bytes.data(), sig, 8) != 0)
        throw FormatError(origin + ": not a PNG (bad signature)");
    size_t pos = 8;
    int64_t w = 0, h = 0;
    int color = -1;
    std::vector<uint8_t> idat;
    bool saw_ihdr = false, saw_iend = false;
    while (pos + 8 <= bytes.size() && !saw_iend) {
        const uint32_t len = io_detail::get_be32(bytes.data() + pos);
        if (pos + 12 + len > bytes.size()) throw FormatError(origin + ": truncated PNG chunk");
        const char* type = reinterpret_cast<const char*>(bytes.data() + pos + 4);
        const uint8_t* data = bytes.data() + pos + 8;
        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) throw FormatError(origin + ": bad IHDR");
            w = io_detail::get_be32(data);
            h = io_detail::get_be32(data + 4);
            const int depth = data[8];
            color = data[9];
            if (depth != 8)
                throw FormatError(origin + ": unsupported PNG bit depth " + std::to_string(depth));
            if (color != 0 && color != 2)
                throw FormatError(origin + ": unsupported PNG color type " + std::to_string(color) +
                                  " (only 8-bit RGB or grayscale)");
            if (data[12] != 0) throw FormatError(origin + ": interlaced PNG not supported");
            saw_ihdr = true;
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), data, data + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            saw_iend = true;
        }
        pos += 12 + len;
    }
    if (!saw_ihdr || w < 1 || h < 1) throw FormatError(origin + ": missing PNG header");
    const int ch = color == 2 ? 3 : 1;
    const size_t stride = static_cast<size_t>(w) * static_cast<size_t>(ch);
    std::vector<uint8_t> raw(static_cast<size_t>(h) * (stride + 1));
    uLongf raw_len = static_cast<uLongf>(raw.size());
    if (uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
        raw_len != raw.size())
        throw FormatError(origin + ": PNG inflate failed");

    // undo scanline filters
    std::vector<uint8_t> pix(static_cast<size_t>(h) * stride);
    const int bpp = ch;
    for (int64_t y = 0; y < h; ++y) {
        const uint8_t filter = raw[static_cast<size_t>(y) * (stride + 1)];
        const uint8_t* src = raw.data() + static_cast<size_t>(y) * (stride + 1) + 1;
        uint8_t* dst = pix.data() + static_cast<size_t>(y) * stride;
        const uint8_t* up = y > 0 ? pix.data() + static_cast<size_t>(y - 1) * stride : nullptr;
        for (size_t x = 0; x < stride; ++x) {
            const int a = x >= static_cast<size_t>(bpp) ? dst[x - static_cast<size_t>(bpp)] : 0;
            const int b = up ? up[x] : 0;
            const int c = (up && x >= static_cast<size_t>(bpp)) ? up[x - static_cast<size_t>(bpp)] : 0;
            int v = src[x];
            switch (filter) {
                case 0: break;
                case 1: v += a; break;
                case 2: v += b; break;
                case 3: v += (a + b) / 2; break;
                case 4: {
                    const int p = a + b - c;
                    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
                    v += (pa <= pb && pa <= pc) ? a : (pb <= pc ? b : c);
                    break;
                }
                default: throw FormatError(origin + ": unknown PNG filter " + std::to_string(filter));
            }
            dst[x] = static_cast<uint8_t>(v & 0xFF);
        }
    }

    ImageU8 img;
    img.width = w;
    img.height = h;
    img.rgb.resize(static_cast<size_t>(w * h * 3));
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                img.at(y, x, c) = pix[static_cast<size_t>(y) * stride +
                                      static_cast<size_t>(x * ch + (ch == 3 ? c : 0))];
    return img;
}

// ---- dispatch ---------------------------------------------------------------

inline ImageU8 decode_image_u8(const std::string& path) {
    const std::vector<uint8_t> bytes = io_detail::read_file(path);
    if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') return decode_ppm(bytes, path);
    if (bytes.size() >= 8 && bytes[0] == 0x89 && bytes[1] == 'P') return decode_png(bytes, path);
    throw FormatError(path + ": unsupported image format (expected PPM P6 or PNG)");
}

inline Tensor<float> decode_image(const std::string& path) { return to_tensor(decode_image_u8(path)); }

inline void write_png(const std::string& path, const ImageU8& img) {
    io_detail::write_file(path, encode_png(img));
}

inline void write_png(const std::string& path, const Tensor<float>& t) {
    write_png(path, to_image_u8(t));
}

inline void write_ppm(const std::string& path, const ImageU8& img) {
    io_detail::write_file(path, encode_ppm(img));
}

} // namespace texvit
