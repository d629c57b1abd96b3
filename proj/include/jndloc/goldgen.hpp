#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "jndloc/critmap.hpp"
#include "jndloc/geometry.hpp"
#include "jndloc/imaging.hpp"
#include "jndloc/response.hpp"

namespace jndloc::gold {

inline constexpr double kRegionSigma = 35.0;
inline constexpr int kJpegMaxGoldLevel = 90;
inline constexpr int kRegionCount = 3;

struct PjndRange {
    int lo = 1;
    int hi = 1;

    bool contains(int level) const { return level >= lo && level <= hi; }
    int width() const { return hi - lo + 1; }
    friend bool operator==(const PjndRange&, const PjndRange&) = default;
};

// A synthesized attention-check item.
struct GoldSpec {
    std::string source_id;
    CodecId codec = CodecId::jpeg;
    int width = 0;
    int height = 0;
    std::array<Point, kRegionCount> centers{};
    double sigma_region = kRegionSigma;
    int sigmoid_center = 50;
    double sigmoid_scale = 4.0;
    PjndRange pjnd_range;
    std::uint64_t seed = 0;

    friend bool operator==(const GoldSpec&, const GoldSpec&) = default;
};

// Throws ValidationError if any GoldSpec invariant is violated.
void validate_spec(const GoldSpec& spec);

nlohmann::json to_json(const GoldSpec& spec);
GoldSpec spec_from_json(const nlohmann::json& j);

class BlendWeightField {
public:
    BlendWeightField(int width, int height, std::vector<double> values);

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    double at(int x, int y) const { return values_[static_cast<std::size_t>(y) * width_ + x]; }
    const std::vector<double>& values() const noexcept { return values_; }

    // Constant field; w = 0 and w = 1 are the degenerate blends.
    static BlendWeightField constant(int width, int height, double value);

private:
    int width_;
    int height_;
    std::vector<double> values_;
};

struct GoldValidation {
    bool pjnd_ok = false;
    int hits = 0;
    bool correct = false;

    friend bool operator==(const GoldValidation&, const GoldValidation&) = default;
};

// Level of the stronger-distortion blend partner for level d.
int stronger_level(CodecId codec, int level);

BlendWeightField blend_weight_field(std::span<const Point> centers, double sigma, int width, int height);

RasterImage synthesize_gold_frame(const RasterImage& base, const RasterImage& stronger, const BlendWeightField& w);

// Integer levels whose logistic probability 1/(1+exp(-(d-d0)/s)) lies in
// [lo_prob, hi_prob], clamped to [1,100].
PjndRange gold_pjnd_range(double center, double scale, double lo_prob = 0.25, double hi_prob = 0.75);

// Frames inside the spec's PJND range are blended with their stronger
// partner; all other frames are copied from the plain ladder.
DistortionLadder build_gold_ladder(const DistortionLadder& plain, const GoldSpec& spec);
DistortionLadder build_gold_ladder(const RasterImage& source, CodecId codec, const CodecAdapter& adapter,
                                   const GoldSpec& spec);

// Three mean-shift modes with the largest 7x7 window sums, descending.
std::array<Point, kRegionCount> select_gt_centers(const critmap::CriticalityMap& map, double bandwidth);

// hits is the size of a maximum one-to-one matching between clicks and
// centers, where a pair matches when the click lies within 2 sigma.
GoldValidation validate_gold_response(const Response& response, const GoldSpec& spec);

struct SynthesisConfig {
    double sigma_region = kRegionSigma;
    double sigmoid_scale = 4.0;
    double center_jitter = 10.0;  // d0 ~ U[pilot_mean - jitter, pilot_mean + jitter]
    int center_min = 10;
    int center_max = 90;
    double lo_prob = 0.25;
    double hi_prob = 0.75;
    double mean_shift_bandwidth = kRegionSigma;
};

// Draws the sigmoid center from the seeded generator and places the three
// regions on the pilot criticality map's strongest modes.
GoldSpec synthesize_gold_spec(std::string source_id, CodecId codec, const critmap::CriticalityMap& pilot_map,
                              double pilot_mean_pjnd, std::uint64_t seed, const SynthesisConfig& config = {});

// Gold ladders live in the imaging cache under this id.
std::string gold_ladder_id(std::string_view source_id);

} // namespace jndloc::gold
