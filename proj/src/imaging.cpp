#include "jndloc/imaging.hpp"

#include <jpeglib.h>
#include <openssl/evp.h>
#include <fcntl.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <random>

#include "jndloc/errors.hpp"
#include "jndloc/png_io.hpp"

extern char** environ;

namespace jndloc {

namespace fs = std::filesystem;

RasterImage::RasterImage(int width, int height)
    : RasterImage(width, height, std::vector<std::uint8_t>(static_cast<std::size_t>(std::max(width, 0)) *
                                                           std::max(height, 0) * 3)) {}

RasterImage::RasterImage(int width, int height, std::vector<std::uint8_t> samples)
    : width_(width), height_(height), samples_(std::move(samples)) {
    if (width <= 0 || height <= 0) throw DomainError("image dimensions must be positive");
    if (samples_.size() != static_cast<std::size_t>(width) * height * 3) {
        throw DomainError("sample count does not match width*height*3");
    }
}

std::string_view to_string(CodecId codec) {
    switch (codec) {
        case CodecId::jpeg: return "jpeg";
        case CodecId::bpg: return "bpg";
    }
    return "unknown";
}

CodecId parse_codec(std::string_view name) {
    if (name == "jpeg" || name == "JPEG") return CodecId::jpeg;
    if (name == "bpg" || name == "BPG") return CodecId::bpg;
    throw DomainError("unknown codec '" + std::string(name) + "'");
}

void check_level(int level) {
    if (level < 0 || level > kMaxLevel) {
        throw DomainError("distortion level " + std::to_string(level) + " outside [0,100]");
    }
}

namespace {
void check_compressed_level(int level) {
    if (level < 1 || level > kMaxLevel) {
        throw DomainError("distortion level " + std::to_string(level) + " outside [1,100]");
    }
}
} // namespace

int level_to_jpeg_qf(int level) {
    check_compressed_level(level);
    return 101 - level;
}

int level_to_bpg_qp(int level) {
    check_compressed_level(level);
    return (level + 1) / 2;
}

int level_to_parameter(CodecId codec, int level) {
    return codec == CodecId::jpeg ? level_to_jpeg_qf(level) : level_to_bpg_qp(level);
}

// ---------------------------------------------------------------------------
// JPEG through libjpeg

namespace {

struct JpegErrorManager {
    jpeg_error_mgr base;
    std::jmp_buf jump;
    char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
    auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
    (*cinfo->err->format_message)(cinfo, err->message);
    std::longjmp(err->jump, 1);
}

void jpeg_silence(j_common_ptr, int) {}

} // namespace

JpegAdapter::JpegAdapter(JpegOptions options) : options_(options) {
    if (options_.chroma_subsampling != 1 && options_.chroma_subsampling != 2) {
        throw DomainError("chroma_subsampling must be 1 (4:4:4) or 2 (4:2:0)");
    }
}

std::string JpegAdapter::identity() const {
    return "libjpeg-" + std::to_string(JPEG_LIB_VERSION) +
           (options_.chroma_subsampling == 2 ? "-420" : "-444") +
           (options_.optimize_coding ? "-opt" : "") + "-islow";
}

nlohmann::json JpegAdapter::encoder_options() const {
    return {{"chroma_subsampling", options_.chroma_subsampling == 2 ? "4:2:0" : "4:4:4"},
            {"optimize_coding", options_.optimize_coding},
            {"dct", "islow"},
            {"baseline", true}};
}

std::vector<std::uint8_t> JpegAdapter::encode(const RasterImage& source, int quality) const {
    if (quality < 1 || quality > 100) throw DomainError("JPEG quality outside [1,100]");
    if (source.empty()) throw DomainError("cannot encode an empty image");

    jpeg_compress_struct cinfo{};
    JpegErrorManager jerr{};
    unsigned char* buffer = nullptr;
    unsigned long size = 0;
    cinfo.err = jpeg_std_error(&jerr.base);
    jerr.base.error_exit = jpeg_error_exit;
    jerr.base.emit_message = jpeg_silence;
    if (setjmp(jerr.jump)) {
        jpeg_destroy_compress(&cinfo);
        std::free(buffer);
        throw IoError(std::string("jpeg encode: ") + jerr.message);
    }
    jpeg_create_compress(&cinfo);
    jpeg_mem_dest(&cinfo, &buffer, &size);
    cinfo.image_width = static_cast<JDIMENSION>(source.width());
    cinfo.image_height = static_cast<JDIMENSION>(source.height());
    cinfo.input_components = 3;
    cinfo.in_color_space = JCS_RGB;
    jpeg_set_defaults(&cinfo);
    jpeg_set_quality(&cinfo, quality, TRUE);
    cinfo.dct_method = JDCT_ISLOW;
    cinfo.optimize_coding = options_.optimize_coding ? TRUE : FALSE;
    cinfo.comp_info[0].h_samp_factor = options_.chroma_subsampling;
    cinfo.comp_info[0].v_samp_factor = options_.chroma_subsampling;
    for (int c = 1; c < 3; ++c) {
        cinfo.comp_info[c].h_samp_factor = 1;
        cinfo.comp_info[c].v_samp_factor = 1;
    }
    jpeg_start_compress(&cinfo, TRUE);
    const auto samples = source.samples();
    const std::size_t stride = static_cast<std::size_t>(source.width()) * 3;
    while (cinfo.next_scanline < cinfo.image_height) {
        JSAMPROW row = const_cast<JSAMPROW>(samples.data() + cinfo.next_scanline * stride);
        jpeg_write_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_compress(&cinfo);
    jpeg_destroy_compress(&cinfo);
    std::vector<std::uint8_t> out(buffer, buffer + size);
    std::free(buffer);
    return out;
}

RasterImage JpegAdapter::decode(std::span<const std::uint8_t> bytes) {
    jpeg_decompress_struct cinfo{};
    JpegErrorManager jerr{};
    cinfo.err = jpeg_std_error(&jerr.base);
    jerr.base.error_exit = jpeg_error_exit;
    jerr.base.emit_message = jpeg_silence;
    std::vector<std::uint8_t> pixels;
    if (setjmp(jerr.jump)) {
        jpeg_destroy_decompress(&cinfo);
        throw IoError(std::string("jpeg decode: ") + jerr.message);
    }
    jpeg_create_decompress(&cinfo);
    jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_RGB;
    cinfo.dct_method = JDCT_ISLOW;
    jpeg_start_decompress(&cinfo);
    const int width = static_cast<int>(cinfo.output_width);
    const int height = static_cast<int>(cinfo.output_height);
    const std::size_t stride = static_cast<std::size_t>(width) * 3;
    pixels.resize(stride * height);
    while (cinfo.output_scanline < cinfo.output_height) {
        JSAMPROW row = pixels.data() + cinfo.output_scanline * stride;
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return RasterImage(width, height, std::move(pixels));
}

RasterImage JpegAdapter::round_trip(const RasterImage& source, int quality) const {
    return decode(encode(source, quality));
}

// ---------------------------------------------------------------------------
// External encoder/decoder executables

namespace {

void run_process(const std::vector<std::string>& argv) {
    std::vector<char*> args;
    args.reserve(argv.size() + 1);
    for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
    args.push_back(nullptr);

    posix_spawn_file_actions_t actions;
    posix_spawn_file_actions_init(&actions);
    posix_spawn_file_actions_addopen(&actions, STDOUT_FILENO, "/dev/null", O_WRONLY, 0);
    posix_spawn_file_actions_addopen(&actions, STDERR_FILENO, "/dev/null", O_WRONLY, 0);
    pid_t pid = 0;
    const int rc = posix_spawn(&pid, args[0], &actions, nullptr, args.data(), environ);
    posix_spawn_file_actions_destroy(&actions);
    if (rc != 0) throw IoError("cannot spawn " + argv[0]);
    int status = 0;
    if (waitpid(pid, &status, 0) < 0) throw IoError("waitpid failed for " + argv[0]);
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
        throw IoError(argv[0] + " exited with status " + std::to_string(WEXITSTATUS(status)));
    }
}

class ScratchDir {
public:
    explicit ScratchDir(const fs::path& parent) {
        std::string tmpl = (parent / "jndloc-XXXXXX").string();
        if (mkdtemp(tmpl.data()) == nullptr) throw IoError("mkdtemp failed under " + parent.string());
        path_ = tmpl;
    }
    ~ScratchDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    ScratchDir(const ScratchDir&) = delete;
    ScratchDir& operator=(const ScratchDir&) = delete;

    const fs::path& path() const { return path_; }

private:
    fs::path path_;
};

bool is_executable(const fs::path& p) {
    return !p.empty() && ::access(p.c_str(), X_OK) == 0 && fs::is_regular_file(p);
}

} // namespace

ExternalCodecAdapter::ExternalCodecAdapter(ExternalCodecConfig config) : config_(std::move(config)) {}

bool ExternalCodecAdapter::available() const {
    return is_executable(config_.encoder) && is_executable(config_.decoder);
}

std::string ExternalCodecAdapter::identity() const {
    std::string id = "external:" + config_.encoder.filename().string() + "+" +
                     config_.decoder.filename().string();
    for (const auto& a : config_.encoder_args) id += " " + a;
    return id;
}

nlohmann::json ExternalCodecAdapter::encoder_options() const {
    return {{"encoder", config_.encoder.string()},
            {"decoder", config_.decoder.string()},
            {"encoder_args", config_.encoder_args}};
}

RasterImage ExternalCodecAdapter::round_trip(const RasterImage& source, int qp) const {
    if (!available()) {
        throw IoError("BPG adapter unavailable (encoder '" + config_.encoder.string() + "', decoder '" +
                      config_.decoder.string() + "'); running in JPEG-only mode");
    }
    ScratchDir scratch(config_.scratch_dir);
    const fs::path in_png = scratch.path() / "in.png";
    const fs::path bitstream = scratch.path() / "out.bpg";
    const fs::path out_png = scratch.path() / "out.png";
    png::write_rgb(in_png, source);

    std::vector<std::string> enc{config_.encoder.string(), "-q", std::to_string(qp)};
    enc.insert(enc.end(), config_.encoder_args.begin(), config_.encoder_args.end());
    enc.insert(enc.end(), {"-o", bitstream.string(), in_png.string()});
    run_process(enc);
    run_process({config_.decoder.string(), "-o", out_png.string(), bitstream.string()});

    RasterImage decoded = png::read_rgb(out_png);
    if (decoded.width() != source.width() || decoded.height() != source.height()) {
        throw IoError("external decoder changed image dimensions");
    }
    return decoded;
}

// ---------------------------------------------------------------------------
// Ladders

const RasterImage& DistortionLadder::frame(int level) const {
    check_level(level);
    if (frames.size() != kLadderSize) throw StateError("ladder is incomplete");
    return frames[static_cast<std::size_t>(level)];
}

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int length = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &length, EVP_sha256(), nullptr) != 1) {
        throw IoError("sha256 failed");
    }
    static constexpr char kHex[] = "0123456789abcdef";
    std::string hex;
    hex.reserve(length * 2);
    for (unsigned int i = 0; i < length; ++i) {
        hex.push_back(kHex[digest[i] >> 4]);
        hex.push_back(kHex[digest[i] & 0xf]);
    }
    return hex;
}

std::string image_hash(const RasterImage& image) {
    std::vector<std::uint8_t> buf;
    buf.reserve(image.samples().size() + 8);
    for (int v : {image.width(), image.height()}) {
        for (int s = 0; s < 32; s += 8) buf.push_back(static_cast<std::uint8_t>((v >> s) & 0xff));
    }
    buf.insert(buf.end(), image.samples().begin(), image.samples().end());
    return sha256_hex(buf);
}

bool valid_id(std::string_view id) {
    if (id.empty() || id == "." || id == "..") return false;
    return std::all_of(id.begin(), id.end(), [](char c) {
        return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '.' ||
               c == '_' || c == '-';
    });
}

DistortionLadder build_ladder(const RasterImage& source, std::string source_id, CodecId codec,
                              const CodecAdapter& adapter) {
    if (source.empty()) throw DomainError("source image is empty");
    if (!adapter.supports(codec)) {
        throw LadderBuildError(1, "adapter '" + adapter.identity() + "' does not support codec " +
                                      std::string(to_string(codec)));
    }
    DistortionLadder ladder;
    ladder.source_id = std::move(source_id);
    ladder.codec = codec;
    ladder.frames.reserve(kLadderSize);
    ladder.frames.push_back(source);
    for (int d = 1; d <= kMaxLevel; ++d) {
        try {
            RasterImage frame = adapter.round_trip(source, level_to_parameter(codec, d));
            if (frame.width() != source.width() || frame.height() != source.height()) {
                throw IoError("frame dimensions differ from source");
            }
            ladder.frames.push_back(std::move(frame));
        } catch (const LadderBuildError&) {
            throw;
        } catch (const std::exception& e) {
            throw LadderBuildError(d, e.what());
        }
    }
    ladder.metadata = {{"source_id", ladder.source_id},
                       {"codec", to_string(codec)},
                       {"source_sha256", image_hash(source)},
                       {"adapter", adapter.identity()},
                       {"encoder_options", adapter.encoder_options()},
                       {"width", source.width()},
                       {"height", source.height()},
                       {"frames", kLadderSize}};
    return ladder;
}

std::string frame_file_name(int level) {
    check_level(level);
    char name[16];
    std::snprintf(name, sizeof name, "d%03d.png", level);
    return name;
}

LadderCache::LadderCache(fs::path root) : root_(std::move(root)) {}

fs::path LadderCache::ladder_dir(std::string_view source_id, CodecId codec) const {
    if (!valid_id(source_id)) throw DomainError("invalid source id '" + std::string(source_id) + "'");
    return root_ / std::string(to_string(codec)) / std::string(source_id);
}

fs::path LadderCache::frame_path(std::string_view source_id, CodecId codec, int level) const {
    return ladder_dir(source_id, codec) / frame_file_name(level);
}

bool LadderCache::contains(std::string_view source_id, CodecId codec) const {
    return fs::is_regular_file(ladder_dir(source_id, codec) / "ladder.json");
}

nlohmann::json LadderCache::metadata(std::string_view source_id, CodecId codec) const {
    const auto bytes = png::read_file(ladder_dir(source_id, codec) / "ladder.json");
    return nlohmann::json::parse(bytes.begin(), bytes.end());
}

namespace {
std::string random_suffix() {
    std::random_device rd;
    std::uint64_t v = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}
} // namespace

bool LadderCache::publish(const DistortionLadder& ladder) const {
    if (ladder.frames.size() != kLadderSize) throw DomainError("refusing to publish an incomplete ladder");
    const fs::path dir = ladder_dir(ladder.source_id, ladder.codec);
    if (fs::is_regular_file(dir / "ladder.json")) return false;
    fs::create_directories(dir.parent_path());
    const fs::path tmp = dir.parent_path() / (".tmp-" + ladder.source_id + "-" + random_suffix());
    fs::create_directories(tmp);
    try {
        for (int d = 0; d <= kMaxLevel; ++d) {
            png::write_rgb(tmp / frame_file_name(d), ladder.frames[static_cast<std::size_t>(d)]);
        }
        const std::string meta = ladder.metadata.dump(2) + "\n";
        png::write_file_atomic(tmp / "ladder.json",
                               std::span(reinterpret_cast<const std::uint8_t*>(meta.data()), meta.size()));
    } catch (...) {
        std::error_code ec;
        fs::remove_all(tmp, ec);
        throw;
    }
    std::error_code ec;
    fs::rename(tmp, dir, ec);
    if (ec) {
        std::error_code ignored;
        fs::remove_all(tmp, ignored);
        if (fs::is_regular_file(dir / "ladder.json")) return false;
        throw IoError("cannot publish ladder into " + dir.string() + ": " + ec.message());
    }
    return true;
}

DistortionLadder LadderCache::load(std::string_view source_id, CodecId codec) const {
    if (!contains(source_id, codec)) {
        throw IoError("no cached ladder at " + ladder_dir(source_id, codec).string());
    }
    DistortionLadder ladder;
    ladder.source_id = std::string(source_id);
    ladder.codec = codec;
    ladder.metadata = metadata(source_id, codec);
    ladder.frames.reserve(kLadderSize);
    for (int d = 0; d <= kMaxLevel; ++d) ladder.frames.push_back(png::read_rgb(frame_path(source_id, codec, d)));
    return ladder;
}

DistortionLadder LadderCache::get_or_build(const RasterImage& source, const std::string& source_id,
                                           CodecId codec, const CodecAdapter& adapter) const {
    if (contains(source_id, codec)) {
        const auto meta = metadata(source_id, codec);
        if (meta.value("source_sha256", "") == image_hash(source) &&
            meta.value("adapter", "") == adapter.identity() && meta.value("codec", "") == to_string(codec)) {
            return load(source_id, codec);
        }
        // Stale key: move the old ladder aside before publishing the new one.
        const fs::path dir = ladder_dir(source_id, codec);
        const fs::path stale = dir.parent_path() / (".stale-" + source_id + "-" + random_suffix());
        fs::rename(dir, stale);
        std::error_code ec;
        fs::remove_all(stale, ec);
    }
    DistortionLadder ladder = build_ladder(source, source_id, codec, adapter);
    publish(ladder);
    return ladder;
}

// ---------------------------------------------------------------------------

RasterImage make_test_pattern(int width, int height, std::uint64_t seed) {
    RasterImage image(width, height);
    std::mt19937_64 rng(seed);
    auto unit = [&rng] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };

    const double gx = unit() * 2 - 1;
    const double gy = unit() * 2 - 1;
    double base[3];
    for (double& b : base) b = 60 + unit() * 120;

    struct Blob {
        double x, y, r;
        double color[3];
    };
    std::vector<Blob> blobs(6);
    for (auto& b : blobs) {
        b.x = unit() * width;
        b.y = unit() * height;
        b.r = (0.05 + unit() * 0.2) * std::min(width, height);
        for (double& c : b.color) c = unit() * 255;
    }
    const double stripe_period = 3 + unit() * 6;
    const double stripe_x0 = unit() * width * 0.5;
    const double stripe_y0 = unit() * height * 0.5;

    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            double px[3];
            for (int c = 0; c < 3; ++c) {
                px[c] = base[c] + 50 * (gx * x / width + gy * y / height);
            }
            for (const auto& b : blobs) {
                const double dx = x - b.x;
                const double dy = y - b.y;
                if (dx * dx + dy * dy <= b.r * b.r) {
                    for (int c = 0; c < 3; ++c) px[c] = 0.35 * px[c] + 0.65 * b.color[c];
                }
            }
            if (x >= stripe_x0 && x < stripe_x0 + width * 0.3 && y >= stripe_y0 && y < stripe_y0 + height * 0.3) {
                const double s = std::sin(2 * 3.14159265358979323846 * (x + y) / stripe_period);
                for (double& v : px) v += 40 * s;
            }
            const double noise = static_cast<double>(rng() % 21) - 10.0;
            for (int c = 0; c < 3; ++c) {
                image.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(std::lround(px[c] + noise), 0L, 255L));
            }
        }
    }
    return image;
}

} // namespace jndloc
