#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "jndloc/imaging.hpp"

namespace jndloc::png {

std::vector<std::uint8_t> encode_rgb(const RasterImage& image);
RasterImage decode_rgb(std::span<const std::uint8_t> bytes);

void write_rgb(const std::filesystem::path& path, const RasterImage& image);
RasterImage read_rgb(const std::filesystem::path& path);

struct Gray16 {
    int width = 0;
    int height = 0;
    std::vector<std::uint16_t> values;
};

std::vector<std::uint8_t> encode_gray16(const Gray16& image);
Gray16 decode_gray16(std::span<const std::uint8_t> bytes);

void write_gray16(const std::filesystem::path& path, const Gray16& image);
Gray16 read_gray16(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
// Writes to <path>.tmp and renames over <path>.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

} // namespace jndloc::png
