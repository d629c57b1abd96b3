#include "jndloc/response.hpp"

#include "jndloc/errors.hpp"
#include "jndloc/imaging.hpp"

namespace jndloc {

void validate_response(const Response& response, int width, int height) {
    if (response.level < 0 || response.level > kMaxLevel) {
        throw ValidationError("level " + std::to_string(response.level) + " outside [0,100]");
    }
    for (const Point& p : response.clicks) {
        if (!std::isfinite(p.x) || !std::isfinite(p.y) || !in_bounds(p, width, height)) {
            throw ValidationError("click (" + std::to_string(p.x) + "," + std::to_string(p.y) +
                                  ") outside the " + std::to_string(width) + "x" + std::to_string(height) + " image");
        }
    }
    if (response.submitted_at < response.started_at) {
        throw ValidationError("submitted_at precedes started_at");
    }
}

nlohmann::json clicks_to_json(const std::array<Point, kClicksPerResponse>& clicks) {
    nlohmann::json out = nlohmann::json::array();
    for (const Point& p : clicks) out.push_back({p.x, p.y});
    return out;
}

std::array<Point, kClicksPerResponse> clicks_from_json(const nlohmann::json& j) {
    if (!j.is_array() || j.size() != kClicksPerResponse) {
        throw ValidationError("clicks must be an array of exactly 3 [x,y] pairs");
    }
    std::array<Point, kClicksPerResponse> clicks{};
    for (std::size_t i = 0; i < kClicksPerResponse; ++i) {
        const auto& c = j[i];
        if (!c.is_array() || c.size() != 2 || !c[0].is_number() || !c[1].is_number()) {
            throw ValidationError("click " + std::to_string(i) + " is not an [x,y] number pair");
        }
        clicks[i] = {c[0].get<double>(), c[1].get<double>()};
    }
    return clicks;
}

} // namespace jndloc
