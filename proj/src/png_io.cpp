#include "voltron/png_io.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>

#include "voltron/error.hpp"

namespace voltron {

namespace {

uint32_t read_be32(const uint8_t* p) {
    return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | p[3];
}

void write_be32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(uint8_t(v >> 24));
    out.push_back(uint8_t(v >> 16));
    out.push_back(uint8_t(v >> 8));
    out.push_back(uint8_t(v));
}

int paeth(int a, int b, int c) {
    int p = a + b - c;
    int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

std::vector<uint8_t> zlib_inflate(const std::vector<uint8_t>& in, size_t expected) {
    std::vector<uint8_t> out(expected);
    uLongf out_len = out.size();
    int rc = uncompress(out.data(), &out_len, in.data(), in.size());
    if (rc != Z_OK || out_len != expected) {
        throw DataError("png: corrupt compressed image data");
    }
    return out;
}

}  // namespace

Image read_png(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("png: cannot open '" + path + "'");
    std::vector<uint8_t> data((std::istreambuf_iterator<char>(f)),
                              std::istreambuf_iterator<char>());
    static const uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    if (data.size() < 8 || std::memcmp(data.data(), sig, 8) != 0) {
        throw DataError("png: '" + path + "' is not a PNG file");
    }

    int width = 0, height = 0, bit_depth = 0, color_type = 0;
    std::vector<uint8_t> idat;
    size_t pos = 8;
    bool saw_end = false;
    while (pos + 8 <= data.size() && !saw_end) {
        uint32_t len = read_be32(&data[pos]);
        if (pos + 12 + len > data.size()) throw DataError("png: truncated chunk");
        const char* type = reinterpret_cast<const char*>(&data[pos + 4]);
        const uint8_t* body = &data[pos + 8];
        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) throw DataError("png: bad IHDR");
            width = int(read_be32(body));
            height = int(read_be32(body + 4));
            bit_depth = body[8];
            color_type = body[9];
            int interlace = body[12];
            if (width <= 0 || height <= 0) throw DataError("png: bad dimensions");
            if (bit_depth != 8) throw DataError("png: only 8-bit depth supported");
            if (color_type != 0 && color_type != 2 && color_type != 6) {
                throw DataError("png: only grayscale, RGB, and RGBA supported");
            }
            if (interlace != 0) throw DataError("png: interlaced images not supported");
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), body, body + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            saw_end = true;
        }
        pos += 12 + len;
    }
    if (width == 0) throw DataError("png: missing IHDR");
    if (idat.empty()) throw DataError("png: missing image data");

    const int channels = color_type == 0 ? 1 : (color_type == 2 ? 3 : 4);
    const size_t stride = size_t(width) * channels;
    std::vector<uint8_t> raw = zlib_inflate(idat, (stride + 1) * height);

    std::vector<uint8_t> pixels(stride * height);
    for (int y = 0; y < height; ++y) {
        uint8_t filter = raw[(stride + 1) * y];
        const uint8_t* src = &raw[(stride + 1) * y + 1];
        uint8_t* cur = &pixels[stride * y];
        const uint8_t* up = y > 0 ? &pixels[stride * (y - 1)] : nullptr;
        for (size_t i = 0; i < stride; ++i) {
            int a = i >= size_t(channels) ? cur[i - channels] : 0;
            int b = up ? up[i] : 0;
            int c = (up && i >= size_t(channels)) ? up[i - channels] : 0;
            int v;
            switch (filter) {
                case 0: v = src[i]; break;
                case 1: v = src[i] + a; break;
                case 2: v = src[i] + b; break;
                case 3: v = src[i] + (a + b) / 2; break;
                case 4: v = src[i] + paeth(a, b, c); break;
                default: throw DataError("png: unknown filter type");
            }
            cur[i] = uint8_t(v);
        }
    }

    Image img;
    img.width = width;
    img.height = height;
    img.rgb.resize(size_t(width) * height * 3);
    for (size_t p = 0; p < size_t(width) * height; ++p) {
        const uint8_t* s = &pixels[p * channels];
        uint8_t* d = &img.rgb[p * 3];
        if (channels == 1) {
            d[0] = d[1] = d[2] = s[0];
        } else {
            d[0] = s[0];
            d[1] = s[1];
            d[2] = s[2];
        }
    }
    return img;
}

void write_png(const std::string& path, const Image& img) {
    if (img.width <= 0 || img.height <= 0 ||
        img.rgb.size() != size_t(img.width) * img.height * 3) {
        throw DataError("png: image buffer does not match its dimensions");
    }
    const size_t stride = size_t(img.width) * 3;
    std::vector<uint8_t> raw((stride + 1) * img.height);
    for (int y = 0; y < img.height; ++y) {
        raw[(stride + 1) * y] = 0;  // filter: none
        std::memcpy(&raw[(stride + 1) * y + 1], &img.rgb[stride * y], stride);
    }
    uLongf bound = compressBound(raw.size());
    std::vector<uint8_t> compressed(bound);
    if (compress2(compressed.data(), &bound, raw.data(), raw.size(), 6) != Z_OK) {
        throw DataError("png: compression failed");
    }
    compressed.resize(bound);

    std::vector<uint8_t> out;
    static const uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    out.insert(out.end(), sig, sig + 8);
    auto chunk = [&out](const char* type, const std::vector<uint8_t>& body) {
        write_be32(out, uint32_t(body.size()));
        size_t start = out.size();
        out.insert(out.end(), type, type + 4);
        out.insert(out.end(), body.begin(), body.end());
        uint32_t crc = crc32(0, &out[start], uInt(out.size() - start));
        write_be32(out, crc);
    };
    std::vector<uint8_t> ihdr;
    write_be32(ihdr, uint32_t(img.width));
    write_be32(ihdr, uint32_t(img.height));
    ihdr.push_back(8);   // bit depth
    ihdr.push_back(2);   // color type: RGB
    ihdr.push_back(0);   // compression
    ihdr.push_back(0);   // filter
    ihdr.push_back(0);   // interlace
    chunk("IHDR", ihdr);
    chunk("IDAT", compressed);
    chunk("IEND", {});

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("png: cannot write '" + path + "'");
    f.write(reinterpret_cast<const char*>(out.data()), std::streamsize(out.size()));
    if (!f) throw DataError("png: write failed for '" + path + "'");
}

}  // namespace voltron
