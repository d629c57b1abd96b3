#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace jndloc {

inline constexpr int kMaxLevel = 100;
inline constexpr int kLadderSize = kMaxLevel + 1;

// 8-bit interleaved RGB, row-major.
class RasterImage {
public:
    RasterImage() = default;
    RasterImage(int width, int height);
    RasterImage(int width, int height, std::vector<std::uint8_t> samples);

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    bool empty() const noexcept { return samples_.empty(); }

    std::uint8_t at(int x, int y, int channel) const {
        return samples_[index(x, y, channel)];
    }
    std::uint8_t& at(int x, int y, int channel) { return samples_[index(x, y, channel)]; }

    std::span<const std::uint8_t> samples() const noexcept { return samples_; }
    std::span<std::uint8_t> samples() noexcept { return samples_; }

    friend bool operator==(const RasterImage&, const RasterImage&) = default;

private:
    std::size_t index(int x, int y, int channel) const {
        return (static_cast<std::size_t>(y) * width_ + x) * 3 + channel;
    }

    int width_ = 0;
    int height_ = 0;
    std::vector<std::uint8_t> samples_;
};

enum class CodecId { jpeg, bpg };

std::string_view to_string(CodecId codec);
CodecId parse_codec(std::string_view name);

// Distortion-level to codec-parameter mappings; both require 1 <= d <= 100.
int level_to_jpeg_qf(int level);
int level_to_bpg_qp(int level);
int level_to_parameter(CodecId codec, int level);

void check_level(int level);

// Encode-then-decode at one codec parameter. Implementations must be
// deterministic and preserve dimensions.
class CodecAdapter {
public:
    virtual ~CodecAdapter() = default;

    virtual std::string identity() const = 0;
    virtual bool supports(CodecId codec) const = 0;
    virtual nlohmann::json encoder_options() const = 0;
    virtual RasterImage round_trip(const RasterImage& source, int parameter) const = 0;
};

struct JpegOptions {
    // 2 = 4:2:0, 1 = 4:4:4
    int chroma_subsampling = 2;
    bool optimize_coding = false;
};

class JpegAdapter final : public CodecAdapter {
public:
    explicit JpegAdapter(JpegOptions options = {});

    std::string identity() const override;
    bool supports(CodecId codec) const override { return codec == CodecId::jpeg; }
    nlohmann::json encoder_options() const override;
    RasterImage round_trip(const RasterImage& source, int quality) const override;

    std::vector<std::uint8_t> encode(const RasterImage& source, int quality) const;
    static RasterImage decode(std::span<const std::uint8_t> bytes);

private:
    JpegOptions options_;
};

// Runs external encoder/decoder executables (bpgenc/bpgdec style):
//   <encoder> -q <qp> -o <out.bpg> <in.png>
//   <decoder> -o <out.png> <in.bpg>
struct ExternalCodecConfig {
    std::filesystem::path encoder;
    std::filesystem::path decoder;
    std::vector<std::string> encoder_args;  // extra args, e.g. {"-f", "444"}
    std::filesystem::path scratch_dir = std::filesystem::temp_directory_path();
};

class ExternalCodecAdapter final : public CodecAdapter {
public:
    explicit ExternalCodecAdapter(ExternalCodecConfig config);

    // True when both executables exist and are executable.
    bool available() const;

    std::string identity() const override;
    bool supports(CodecId codec) const override { return codec == CodecId::bpg && available(); }
    nlohmann::json encoder_options() const override;
    RasterImage round_trip(const RasterImage& source, int qp) const override;

private:
    ExternalCodecConfig config_;
};

struct DistortionLadder {
    std::string source_id;
    CodecId codec = CodecId::jpeg;
    std::vector<RasterImage> frames;  // kLadderSize frames, index = level
    nlohmann::json metadata;

    const RasterImage& frame(int level) const;
};

DistortionLadder build_ladder(const RasterImage& source, std::string source_id, CodecId codec,
                              const CodecAdapter& adapter);

std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string image_hash(const RasterImage& image);

// Ids become directory and file names; restrict them to [A-Za-z0-9._-].
bool valid_id(std::string_view id);

// On-disk ladder cache: <root>/<codec>/<source_id>/{d000.png..d100.png, ladder.json}.
// Publishing writes into a sibling temp directory and renames it into
// place, so readers either see a complete ladder or none.
class LadderCache {
public:
    explicit LadderCache(std::filesystem::path root);

    const std::filesystem::path& root() const noexcept { return root_; }
    std::filesystem::path ladder_dir(std::string_view source_id, CodecId codec) const;
    std::filesystem::path frame_path(std::string_view source_id, CodecId codec, int level) const;

    bool contains(std::string_view source_id, CodecId codec) const;
    nlohmann::json metadata(std::string_view source_id, CodecId codec) const;

    // Returns false if a complete ladder was already present.
    bool publish(const DistortionLadder& ladder) const;
    DistortionLadder load(std::string_view source_id, CodecId codec) const;

    // Cached ladder if its recorded (source hash, codec, adapter) key
    // matches; otherwise builds and publishes.
    DistortionLadder get_or_build(const RasterImage& source, const std::string& source_id,
                                  CodecId codec, const CodecAdapter& adapter) const;

private:
    std::filesystem::path root_;
};

std::string frame_file_name(int level);

// Deterministic textured RGB test image (gradients, blobs, edges, noise).
RasterImage make_test_pattern(int width, int height, std::uint64_t seed);

} // namespace jndloc
