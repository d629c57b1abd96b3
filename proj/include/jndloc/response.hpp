#pragma once

#include <array>
#include <cstdint>
#include <string>

#include <json.hpp>

#include "jndloc/geometry.hpp"

namespace jndloc {

using Timestamp = std::int64_t;  // milliseconds since the Unix epoch
inline constexpr int kClicksPerResponse = 3;

// One worker's answer for one image: the chosen distortion level and the
// three reported locations in source-image pixel coordinates.
struct Response {
    std::string worker_id;
    std::string hit_id;
    std::string image_ref;
    int level = 0;
    std::array<Point, kClicksPerResponse> clicks{};
    Timestamp started_at = 0;
    Timestamp submitted_at = 0;

    friend bool operator==(const Response&, const Response&) = default;
};

// Throws ValidationError when the level, clicks or timestamps are invalid
// for an image of the given size.
void validate_response(const Response& response, int width, int height);

nlohmann::json clicks_to_json(const std::array<Point, kClicksPerResponse>& clicks);
std::array<Point, kClicksPerResponse> clicks_from_json(const nlohmann::json& j);

} // namespace jndloc
