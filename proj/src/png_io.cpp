#include "jndloc/png_io.hpp"

#include <png.h>

#include <csetjmp>
#include <cstring>
#include <fstream>
#include <string>

#include "jndloc/errors.hpp"

namespace jndloc::png {
namespace {

struct ReadCursor {
    std::span<const std::uint8_t> bytes;
    std::size_t offset = 0;
};

void read_from_memory(png_structp png, png_bytep out, png_size_t length) {
    auto* cursor = static_cast<ReadCursor*>(png_get_io_ptr(png));
    if (cursor->offset + length > cursor->bytes.size()) {
        png_error(png, "truncated PNG stream");
    }
    std::memcpy(out, cursor->bytes.data() + cursor->offset, length);
    cursor->offset += length;
}

void write_to_vector(png_structp png, png_bytep data, png_size_t length) {
    auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
    out->insert(out->end(), data, data + length);
}

void flush_noop(png_structp) {}

// Rows must already be in PNG byte order (big-endian for 16-bit).
std::vector<std::uint8_t> encode(int width, int height, int bit_depth, int color_type,
                                 const std::vector<png_bytep>& rows) {
    std::vector<std::uint8_t> out;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (png == nullptr) throw IoError("png: cannot allocate write struct");
    png_infop info = png_create_info_struct(png);
    if (info == nullptr) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("png: cannot allocate info struct");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("png: encode failed");
    }
    png_set_write_fn(png, &out, write_to_vector, flush_noop);
    png_set_compression_level(png, 6);
    png_set_filter(png, 0, PNG_FILTER_VALUE_SUB);
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height),
                 bit_depth, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, const_cast<png_bytepp>(rows.data()));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return out;
}

struct Decoded {
    int width = 0;
    int height = 0;
    int bit_depth = 0;
    int channels = 0;
    std::vector<std::uint8_t> pixels;
};

// gray16 = true keeps 16-bit single-channel data; otherwise expands to RGB8.
Decoded decode(std::span<const std::uint8_t> bytes, bool gray16) {
    if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) {
        throw IoError("png: not a PNG stream");
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (png == nullptr) throw IoError("png: cannot allocate read struct");
    png_infop info = png_create_info_struct(png);
    if (info == nullptr) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("png: cannot allocate info struct");
    }
    ReadCursor cursor{bytes, 0};
    Decoded result;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("png: decode failed");
    }
    png_set_read_fn(png, &cursor, read_from_memory);
    png_read_info(png, info);

    const int color_type = png_get_color_type(png, info);
    const int depth = png_get_bit_depth(png, info);
    if (gray16) {
        if (color_type != PNG_COLOR_TYPE_GRAY) png_error(png, "expected grayscale");
        // 8-bit gray is widened to 16 by replication in decode_gray16
        if (depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    } else {
        if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
        if (color_type == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
        if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
        if (depth == 16) png_set_strip_16(png);
        if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA) {
            png_set_gray_to_rgb(png);
        }
        png_set_strip_alpha(png);
    }
    png_read_update_info(png, info);

    result.width = static_cast<int>(png_get_image_width(png, info));
    result.height = static_cast<int>(png_get_image_height(png, info));
    result.bit_depth = png_get_bit_depth(png, info);
    result.channels = png_get_channels(png, info);
    const std::size_t stride = png_get_rowbytes(png, info);
    result.pixels.resize(stride * result.height);
    rows.resize(result.height);
    for (int y = 0; y < result.height; ++y) rows[y] = result.pixels.data() + stride * y;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return result;
}

} // namespace

std::vector<std::uint8_t> encode_rgb(const RasterImage& image) {
    std::vector<png_bytep> rows(image.height());
    auto samples = image.samples();
    for (int y = 0; y < image.height(); ++y) {
        rows[y] = const_cast<png_bytep>(samples.data() + static_cast<std::size_t>(y) * image.width() * 3);
    }
    return encode(image.width(), image.height(), 8, PNG_COLOR_TYPE_RGB, rows);
}

RasterImage decode_rgb(std::span<const std::uint8_t> bytes) {
    Decoded d = decode(bytes, false);
    if (d.channels != 3 || d.bit_depth != 8) throw IoError("png: unexpected pixel layout after transforms");
    return RasterImage(d.width, d.height, std::move(d.pixels));
}

std::vector<std::uint8_t> encode_gray16(const Gray16& image) {
    std::vector<std::uint8_t> big_endian(image.values.size() * 2);
    for (std::size_t i = 0; i < image.values.size(); ++i) {
        big_endian[2 * i] = static_cast<std::uint8_t>(image.values[i] >> 8);
        big_endian[2 * i + 1] = static_cast<std::uint8_t>(image.values[i] & 0xff);
    }
    std::vector<png_bytep> rows(image.height);
    for (int y = 0; y < image.height; ++y) {
        rows[y] = big_endian.data() + static_cast<std::size_t>(y) * image.width * 2;
    }
    return encode(image.width, image.height, 16, PNG_COLOR_TYPE_GRAY, rows);
}

Gray16 decode_gray16(std::span<const std::uint8_t> bytes) {
    Decoded d = decode(bytes, true);
    Gray16 out{d.width, d.height, {}};
    out.values.resize(static_cast<std::size_t>(d.width) * d.height);
    if (d.bit_depth == 16) {
        for (std::size_t i = 0; i < out.values.size(); ++i) {
            out.values[i] = static_cast<std::uint16_t>((d.pixels[2 * i] << 8) | d.pixels[2 * i + 1]);
        }
    } else {
        for (std::size_t i = 0; i < out.values.size(); ++i) {
            out.values[i] = static_cast<std::uint16_t>(d.pixels[i] * 257);
        }
    }
    return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp.string());
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("write failed for " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename " + tmp.string() + " -> " + path.string() + ": " + ec.message());
}

void write_rgb(const std::filesystem::path& path, const RasterImage& image) {
    write_file_atomic(path, encode_rgb(image));
}

RasterImage read_rgb(const std::filesystem::path& path) {
    try {
        return decode_rgb(read_file(path));
    } catch (const IoError& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

void write_gray16(const std::filesystem::path& path, const Gray16& image) {
    write_file_atomic(path, encode_gray16(image));
}

Gray16 read_gray16(const std::filesystem::path& path) {
    try {
        return decode_gray16(read_file(path));
    } catch (const IoError& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

} // namespace jndloc::png
