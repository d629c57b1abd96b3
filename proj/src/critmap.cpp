#include "jndloc/critmap.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "jndloc/errors.hpp"

namespace jndloc::critmap {

CriticalityMap::CriticalityMap(int width, int height)
    : CriticalityMap(width, height, std::vector<float>(static_cast<std::size_t>(std::max(width, 0)) *
                                                       std::max(height, 0))) {}

CriticalityMap::CriticalityMap(int width, int height, std::vector<float> values)
    : width_(width), height_(height), values_(std::move(values)) {
    if (width <= 0 || height <= 0) throw DomainError("map dimensions must be positive");
    if (values_.size() != static_cast<std::size_t>(width) * height) {
        throw DomainError("map value count does not match width*height");
    }
}

float CriticalityMap::max_value() const {
    if (values_.empty()) return 0.0f;
    return *std::max_element(values_.begin(), values_.end());
}

namespace {

// Half-sample symmetric reflection: ... c b a | a b c ... | c b a ...
// Positions p that fold onto pixel c are c + 2nj and 2nj - 1 - c.
std::vector<double> folded_kernel_response(int c, int n, const std::vector<double>& kernel, int radius) {
    std::vector<double> response(static_cast<std::size_t>(n), 0.0);
    const long period = 2L * n;
    const long lo = -radius;
    const long hi = n - 1L + radius;
    auto add_image = [&](long p) {
        const long x_first = std::max(0L, p - radius);
        const long x_last = std::min(static_cast<long>(n) - 1, p + radius);
        for (long x = x_first; x <= x_last; ++x) response[static_cast<std::size_t>(x)] += kernel[static_cast<std::size_t>(p - x + radius)];
    };
    const long j_min = (lo - c) / period - 1;
    const long j_max = (hi + 1 + c) / period + 1;
    for (long j = j_min; j <= j_max; ++j) {
        const long direct = c + period * j;
        const long mirrored = period * j - 1 - c;
        if (direct >= lo && direct <= hi) add_image(direct);
        if (mirrored >= lo && mirrored <= hi) add_image(mirrored);
    }
    return response;
}

std::vector<double> gaussian_kernel(double sigma, int radius) {
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    double total = 0.0;
    for (int k = -radius; k <= radius; ++k) {
        const double v = std::exp(-0.5 * (k * k) / (sigma * sigma));
        kernel[static_cast<std::size_t>(k + radius)] = v;
        total += v;
    }
    for (double& v : kernel) v /= total;
    return kernel;
}

} // namespace

std::vector<double> blurred_click_density(const ClickSet& clicks, double sigma, int width, int height) {
    if (!(sigma > 0.0)) throw DomainError("blur sigma must be positive");
    if (width <= 0 || height <= 0) throw DomainError("map dimensions must be positive");

    std::string offenders;
    std::map<std::pair<int, int>, int> impulses;  // (y, x) -> count
    for (const auto& click : clicks.clicks) {
        if (!in_bounds(click.position, width, height)) {
            if (!offenders.empty()) offenders += ", ";
            offenders += "(" + std::to_string(click.position.x) + "," + std::to_string(click.position.y) + ")";
            continue;
        }
        ++impulses[{round_half_away(click.position.y), round_half_away(click.position.x)}];
    }
    if (!offenders.empty()) {
        throw ValidationError("clicks outside " + std::to_string(width) + "x" + std::to_string(height) +
                              " image '" + clicks.image_id + "': " + offenders);
    }

    std::vector<double> density(static_cast<std::size_t>(width) * height, 0.0);
    if (impulses.empty()) return density;

    const int radius = static_cast<int>(std::ceil(4.0 * sigma));
    const auto kernel = gaussian_kernel(sigma, radius);

    std::map<int, std::vector<double>> x_response;
    std::map<int, std::vector<double>> row_sum;  // cy -> sum over clicks in that row of x responses
    for (const auto& [yx, count] : impulses) {
        const int cx = yx.second;
        auto it = x_response.find(cx);
        if (it == x_response.end()) it = x_response.emplace(cx, folded_kernel_response(cx, width, kernel, radius)).first;
        auto& row = row_sum[yx.first];
        if (row.empty()) row.assign(static_cast<std::size_t>(width), 0.0);
        for (int x = 0; x < width; ++x) row[static_cast<std::size_t>(x)] += count * it->second[static_cast<std::size_t>(x)];
    }
    for (const auto& [cy, row] : row_sum) {
        const auto y_response = folded_kernel_response(cy, height, kernel, radius);
        for (int y = 0; y < height; ++y) {
            const double wy = y_response[static_cast<std::size_t>(y)];
            if (wy == 0.0) continue;
            double* out = density.data() + static_cast<std::size_t>(y) * width;
            for (int x = 0; x < width; ++x) out[x] += wy * row[static_cast<std::size_t>(x)];
        }
    }
    return density;
}

CriticalityMap aggregate_clicks_to_map(const ClickSet& clicks, double sigma_blur, int width, int height) {
    const auto density = blurred_click_density(clicks, sigma_blur, width, height);
    const double peak = density.empty() ? 0.0 : *std::max_element(density.begin(), density.end());
    std::vector<float> values(density.size(), 0.0f);
    if (peak > 0.0) {
        for (std::size_t i = 0; i < density.size(); ++i) values[i] = static_cast<float>(density[i] / peak);
    }
    return CriticalityMap(width, height, std::move(values));
}

std::vector<Point> local_maxima(const CriticalityMap& map) {
    std::vector<Point> maxima;
    const int w = map.width();
    const int h = map.height();
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const float v = map.at(x, y);
            if (v <= 0.0f) continue;
            bool is_max = true;
            for (int dy = -1; dy <= 1 && is_max; ++dy) {
                for (int dx = -1; dx <= 1; ++dx) {
                    if (dx == 0 && dy == 0) continue;
                    const int nx = x + dx;
                    const int ny = y + dy;
                    if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
                    if (map.at(nx, ny) > v) {
                        is_max = false;
                        break;
                    }
                }
            }
            if (is_max) maxima.push_back({static_cast<double>(x), static_cast<double>(y)});
        }
    }
    return maxima;
}

namespace {

Point shift_once(const CriticalityMap& map, Point at, double bandwidth, double& total_weight) {
    const int x0 = std::max(0, static_cast<int>(std::floor(at.x - bandwidth)));
    const int x1 = std::min(map.width() - 1, static_cast<int>(std::ceil(at.x + bandwidth)));
    const int y0 = std::max(0, static_cast<int>(std::floor(at.y - bandwidth)));
    const int y1 = std::min(map.height() - 1, static_cast<int>(std::ceil(at.y + bandwidth)));
    const double r2 = bandwidth * bandwidth;
    double sw = 0.0;
    double sx = 0.0;
    double sy = 0.0;
    for (int y = y0; y <= y1; ++y) {
        const double dy = y - at.y;
        for (int x = x0; x <= x1; ++x) {
            const double dx = x - at.x;
            if (dx * dx + dy * dy > r2) continue;
            const double v = map.at(x, y);
            sw += v;
            sx += v * x;
            sy += v * y;
        }
    }
    total_weight = sw;
    if (sw <= 0.0) return at;
    return {sx / sw, sy / sw};
}

float value_at(const CriticalityMap& map, Point p) {
    const int x = std::clamp(round_half_away(p.x), 0, map.width() - 1);
    const int y = std::clamp(round_half_away(p.y), 0, map.height() - 1);
    return map.at(x, y);
}

} // namespace

std::vector<Mode> mean_shift_modes(const CriticalityMap& map, double bandwidth, MeanShiftOptions options) {
    if (!(bandwidth > 0.0)) throw DomainError("mean-shift bandwidth must be positive");
    const float peak = map.max_value();
    if (peak <= 0.0f) return {};

    // Seeds in denormal-scale tails carry no mass worth tracking.
    const float seed_floor = peak * 1e-6f;
    std::vector<Mode> converged;
    for (const Point seed : local_maxima(map)) {
        if (map.at(static_cast<int>(seed.x), static_cast<int>(seed.y)) < seed_floor) continue;
        Point at = seed;
        for (int it = 0; it < options.max_iterations; ++it) {
            double weight = 0.0;
            const Point next = shift_once(map, at, bandwidth, weight);
            const double moved = distance(next, at);
            at = next;
            if (weight <= 0.0 || moved < options.tolerance) break;
        }
        converged.push_back({at, value_at(map, at)});
    }

    std::sort(converged.begin(), converged.end(), [](const Mode& a, const Mode& b) {
        if (a.value != b.value) return a.value > b.value;
        if (a.position.y != b.position.y) return a.position.y < b.position.y;
        return a.position.x < b.position.x;
    });
    std::vector<Mode> modes;
    for (const auto& candidate : converged) {
        const bool merged = std::any_of(modes.begin(), modes.end(), [&](const Mode& m) {
            return distance(m.position, candidate.position) < bandwidth / 2.0;
        });
        if (!merged) modes.push_back(candidate);
    }
    return modes;
}

double window_sum(const CriticalityMap& map, Point center, int k) {
    if (k <= 0 || k % 2 == 0) throw DomainError("window size must be a positive odd number");
    const int half = k / 2;
    const int cx = round_half_away(center.x);
    const int cy = round_half_away(center.y);
    double sum = 0.0;
    for (int y = cy - half; y <= cy + half; ++y) {
        if (y < 0 || y >= map.height()) continue;
        for (int x = cx - half; x <= cx + half; ++x) {
            if (x < 0 || x >= map.width()) continue;
            sum += map.at(x, y);
        }
    }
    return sum;
}

png::Gray16 to_gray16(const CriticalityMap& map) {
    png::Gray16 out{map.width(), map.height(), {}};
    out.values.reserve(map.values().size());
    for (float v : map.values()) {
        const double scaled = std::clamp(static_cast<double>(v), 0.0, 1.0) * 65535.0;
        out.values.push_back(static_cast<std::uint16_t>(std::lround(scaled)));
    }
    return out;
}

CriticalityMap from_gray16(const png::Gray16& image) {
    std::vector<float> values;
    values.reserve(image.values.size());
    for (auto v : image.values) values.push_back(static_cast<float>(v / 65535.0));
    return CriticalityMap(image.width, image.height, std::move(values));
}

nlohmann::json sidecar(const ClickSet& clicks, double sigma_blur, int width, int height) {
    return {{"image_id", clicks.image_id},
            {"click_count", clicks.clicks.size()},
            {"sigma_blur", sigma_blur},
            {"kernel_truncation_sigmas", 4},
            {"border", "reflect"},
            {"normalization", "max"},
            {"width", width},
            {"height", height},
            {"encoding", "uint16 = round(65535 * value)"}};
}

} // namespace jndloc::critmap
