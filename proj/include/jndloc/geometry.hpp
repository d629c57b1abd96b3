#pragma once

#include <cmath>

namespace jndloc {

// Pixel coordinate in source-image space. x grows right, y grows down.
struct Point {
    double x = 0.0;
    double y = 0.0;

    friend bool operator==(const Point&, const Point&) = default;
};

inline double distance(Point a, Point b) {
    return std::hypot(a.x - b.x, a.y - b.y);
}

inline bool in_bounds(Point p, int width, int height) {
    return p.x >= 0.0 && p.y >= 0.0 && p.x <= width - 1 && p.y <= height - 1;
}

// Round half away from zero (std::round semantics), used everywhere a
// continuous value becomes a pixel or level.
inline int round_half_away(double v) {
    return static_cast<int>(std::lround(v));
}

} // namespace jndloc
