#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "jndloc/geometry.hpp"
#include "jndloc/png_io.hpp"

namespace jndloc::critmap {

inline constexpr double kDefaultBlurSigma = 35.0;

struct Click {
    Point position;
    std::string worker_id;
};

struct ClickSet {
    std::string image_id;
    std::vector<Click> clicks;
};

// Non-negative field at full image resolution; max-normalized to 1 when
// built from a non-empty click set.
class CriticalityMap {
public:
    CriticalityMap() = default;
    CriticalityMap(int width, int height);
    CriticalityMap(int width, int height, std::vector<float> values);

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    float at(int x, int y) const { return values_[static_cast<std::size_t>(y) * width_ + x]; }
    float& at(int x, int y) { return values_[static_cast<std::size_t>(y) * width_ + x]; }
    const std::vector<float>& values() const noexcept { return values_; }

    float max_value() const;
    bool all_zero() const { return max_value() <= 0.0f; }

private:
    int width_ = 0;
    int height_ = 0;
    std::vector<float> values_;
};

// Unit impulses at the (rounded) click pixels, convolved with a Gaussian
// of std sigma truncated at 4 sigma, reflect-padded at the borders.
// No normalization.
std::vector<double> blurred_click_density(const ClickSet& clicks, double sigma, int width, int height);

CriticalityMap aggregate_clicks_to_map(const ClickSet& clicks, double sigma_blur, int width, int height);

struct Mode {
    Point position;
    float value = 0.0f;
};

struct MeanShiftOptions {
    double tolerance = 0.1;
    int max_iterations = 200;
};

std::vector<Mode> mean_shift_modes(const CriticalityMap& map, double bandwidth, MeanShiftOptions options = {});

// Discrete local maxima (8-neighbourhood, value > 0, >= every neighbour).
std::vector<Point> local_maxima(const CriticalityMap& map);

// Sum of map values in the k x k window centred on the rounded center;
// out-of-bounds cells count as zero.
double window_sum(const CriticalityMap& map, Point center, int k = 7);

png::Gray16 to_gray16(const CriticalityMap& map);
CriticalityMap from_gray16(const png::Gray16& image);

// Sidecar record stored next to an exported map PNG.
nlohmann::json sidecar(const ClickSet& clicks, double sigma_blur, int width, int height);

} // namespace jndloc::critmap
